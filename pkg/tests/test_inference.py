import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_net
from dropuq.errors import ValidationError
from dropuq.inference import (
    MethodSpec,
    bench_inference,
    mixture_moments,
    predict,
    predict_ensemble,
    predict_mc_rdeepsense,
    predict_mcdrop,
    predict_rdeepsense,
)
from dropuq.network import (
    NetworkParams,
    forward_infer_scaled,
    forward_passes,
    forward_train,
    head_to_prediction,
    init_params,
    mlp_spec,
)
from dropuq.numerics import RngStream


def sample_mixture(rng, means, variances, n):
    comp = rng.integers(len(means), n)
    return means[comp] + np.sqrt(variances[comp]) * rng.normal(n)


class TestMethodSpec:
    @pytest.mark.parametrize("text, name", [("rdeepsense", "rdeepsense"), ("rdeepsense-mc10", "rdeepsense-mc10"),
                                            ("mcdrop-3", "mcdrop-3"), ("ssp:5", "ssp-5")])
    def test_parse(self, text, name):
        assert MethodSpec.parse(text).name == name

    def test_k_limits(self):
        with pytest.raises(ValidationError):
            MethodSpec("mcdrop", 1)
        with pytest.raises(ValidationError):
            MethodSpec("ssp", 0)
        assert MethodSpec("ssp", 1).k == 1


class TestMixtureMoments:
    def test_two_components(self):
        mu, var = mixture_moments([0.0, 2.0], [1.0, 1.0])
        assert mu == 1.0 and var == 2.0

    def test_identical_components(self):
        mu, var = mixture_moments([3.0] * 5, [0.7] * 5)
        assert mu == 3.0 and var == pytest.approx(0.7, abs=1e-15)

    @given(st.lists(st.tuples(st.floats(-50, 50), st.floats(1e-3, 10)), min_size=1, max_size=10))
    @settings(max_examples=200)
    def test_decomposition(self, comps):
        means = np.array([c[0] for c in comps])
        variances = np.array([c[1] for c in comps])
        mu, var = mixture_moments(means, variances)
        literal = np.mean(variances + means ** 2) - mu ** 2
        assert var == pytest.approx(literal, rel=1e-9, abs=1e-9)
        assert var >= np.mean(variances) - 1e-12

    def test_sampling_oracle(self):
        rng = RngStream(77)
        means = rng.normal(4) * 2
        variances = rng.uniform(4) + 0.1
        mu, var = mixture_moments(means, variances)
        s = sample_mixture(rng, means, variances, 1_000_000)
        se_mean = np.sqrt(s.var() / s.size)
        se_var = np.sqrt(np.mean((s - s.mean()) ** 4) - s.var() ** 2) / np.sqrt(s.size)
        assert abs(s.mean() - mu) <= 3 * se_mean
        assert abs(s.var() - var) <= 3 * se_var


class TestRDeepSense:
    def test_no_dropout_is_plain_forward(self, rng):
        spec, p = random_net(rng, retain=1.0)
        x = rng.normal((3, 3))
        pred = predict_rdeepsense(spec, p, x)
        ref = head_to_prediction(spec, forward_infer_scaled(spec, p, x))
        np.testing.assert_array_equal(pred.mean, ref.mean)

    def test_one_pass(self, rng):
        spec, p = random_net(rng)
        before = forward_passes.value
        predict_rdeepsense(spec, p, rng.normal(3))
        assert forward_passes.value - before == 1

    def test_linear_mean_matches_mc(self, rng):
        spec = mlp_spec(2, [8], 1, activation="identity", hidden_retain=0.5)
        p = init_params(spec, rng)
        x = rng.normal(2)
        M = 10_000
        mean_ch = forward_train(spec, p, np.tile(x, (M, 1)), rng).pre[-1][:, 0]
        single = predict_rdeepsense(spec, p, x).mean[0, 0]
        assert abs(mean_ch.mean() - single) <= 5 * mean_ch.std(ddof=1) / np.sqrt(M)


class TestMonteCarlo:
    def test_identical_components(self, rng):
        spec, p = random_net(rng, retain=1.0)
        x = rng.normal(3)
        mc = predict_mc_rdeepsense(spec, p, x, 5, rng)
        single = predict_rdeepsense(spec, p, x)
        np.testing.assert_allclose(mc.var, single.var, rtol=1e-14)
        np.testing.assert_allclose(mc.mean, single.mean, rtol=1e-14)

    def test_mixture_sampling_oracle(self, rng):
        spec, p = random_net(rng, retain=0.6, hidden=(6,), d_in=2, out=1)
        x = rng.normal(2)
        k = 8
        pred = predict_mc_rdeepsense(spec, p, x, k, RngStream(5))
        comps = [head_to_prediction(spec, forward_train(spec, p, x, RngStream(5).derive(m)).pre[-1])
                 for m in range(k)]
        means = np.array([c.mean[0, 0] for c in comps])
        variances = np.array([c.var[0, 0] for c in comps])
        s = sample_mixture(RngStream(6), means, variances, 1_000_000)
        assert abs(s.mean() - pred.mean[0, 0]) <= 3 * np.sqrt(s.var() / s.size)
        se_var = np.sqrt(np.mean((s - s.mean()) ** 4) - s.var() ** 2) / np.sqrt(s.size)
        assert abs(s.var() - pred.var[0, 0]) <= 3 * se_var

    def test_classification_average(self, rng):
        spec, p = random_net(rng, task="classification", out=4)
        pred = predict_mc_rdeepsense(spec, p, rng.normal((6, 3)), 5, rng)
        np.testing.assert_allclose(pred.probs.sum(axis=1), 1.0, atol=1e-12)

    def test_schedule_independent(self, rng):
        spec, p = random_net(rng)
        x = rng.normal((4, 3))
        a = predict_mc_rdeepsense(spec, p, x, 6, RngStream(8))
        # evaluating samples in reverse order with the same derived streams
        heads = [forward_train(spec, p, x, RngStream(8).derive(m)).pre[-1] for m in reversed(range(6))]
        preds = [head_to_prediction(spec, h) for h in reversed(heads)]
        mu, var = mixture_moments([q.mean for q in preds], [q.var for q in preds])
        np.testing.assert_array_equal(a.mean, mu)
        np.testing.assert_array_equal(a.var, var)


class TestMCDrop:
    def test_deterministic_net_floor_only(self, rng):
        spec = mlp_spec(3, [4], 1, head="point", hidden_retain=1.0)
        p = init_params(spec, rng)
        pred = predict_mcdrop(spec, p, rng.normal(3), 4, rng)
        assert pred.var[0, 0] == pytest.approx(spec.variance_floor, abs=1e-20)

    def test_two_point_sample(self):
        spec = mlp_spec(1, [1], 1, head="point", hidden_retain=0.5, activation="identity")
        # hidden unit is 1; its retained/dropped output row gives 2 or 0
        p = NetworkParams([np.array([[0.0]]), np.array([[2.0]])], [np.array([1.0]), np.array([0.0])])
        outs = set()
        for s in range(64):
            pred = predict_mcdrop(spec, p, np.array([0.0]), 2, RngStream(s))
            if pred.mean[0, 0] == 1.0:
                outs.add(pred.var[0, 0])
        assert outs == {2.0 + spec.variance_floor}

    def test_k_too_small(self, rng):
        spec = mlp_spec(3, [4], 1, head="point")
        with pytest.raises(ValidationError):
            predict_mcdrop(spec, init_params(spec, rng), np.zeros(3), 1, rng)


class TestEnsemble:
    def test_singleton(self, rng):
        spec, p = random_net(rng, retain=1.0)
        x = rng.normal((2, 3))
        a = predict_ensemble([(spec, p)], x)
        b = predict_rdeepsense(spec, p, x)
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.var, b.var)

    def _const_model(self, mu, raw_var):
        spec = mlp_spec(1, [1], 1, hidden_retain=1.0, activation="identity")
        p = NetworkParams([np.zeros((1, 1)), np.zeros((1, 2))], [np.zeros(1), np.array([mu, raw_var])])
        return spec, p

    def test_two_gaussians(self):
        raw = np.log(np.expm1(1.0 - 1e-6))
        m = [self._const_model(0.0, raw), self._const_model(2.0, raw)]
        pred = predict_ensemble(m, np.zeros(1))
        assert pred.mean[0, 0] == 1.0
        assert pred.var[0, 0] == pytest.approx(2.0, abs=1e-12)

    def test_disagreeing_classifiers(self):
        spec = mlp_spec(1, [1], 2, task="classification", hidden_retain=1.0)
        big = 50.0
        a = NetworkParams([np.zeros((1, 1)), np.zeros((1, 2))], [np.zeros(1), np.array([big, -big])])
        b = NetworkParams([np.zeros((1, 1)), np.zeros((1, 2))], [np.zeros(1), np.array([-big, big])])
        pred = predict_ensemble([(spec, a), (spec, b)], np.zeros(1))
        np.testing.assert_allclose(pred.probs, [[0.5, 0.5]], atol=1e-15)

    def test_rejects_dropout(self, rng):
        spec, p = random_net(rng, retain=0.5)
        with pytest.raises(ValidationError):
            predict_ensemble([(spec, p)], np.zeros(3))


class TestBench:
    def test_pass_counts(self, rng):
        spec, p = random_net(rng, retain=1.0)
        pspec = mlp_spec(3, [5, 4], 2, head="point")
        X = rng.normal((5, 3))
        r = bench_inference(MethodSpec("rdeepsense"), (spec, p), X, 2)
        assert r["passes_per_prediction"] == 1
        r = bench_inference(MethodSpec("mcdrop", 10), (pspec, init_params(pspec, rng)), X, 2)
        assert r["passes_per_prediction"] == 10
        r = bench_inference(MethodSpec("ssp", 3), [(spec, p)] * 3, X, 2)
        assert r["passes_per_prediction"] == 3
        assert r["calls"] == 10 and r["warmup"] == 3

    def test_zero_repetitions(self, rng):
        spec, p = random_net(rng)
        with pytest.raises(ValidationError):
            bench_inference(MethodSpec("rdeepsense"), (spec, p), np.zeros((1, 3)), 0)

    def test_predict_dispatch(self, rng):
        spec, p = random_net(rng, retain=1.0)
        x = rng.normal(3)
        np.testing.assert_array_equal(predict(MethodSpec("ssp", 1), [(spec, p)], x).mean,
                                      predict(MethodSpec("rdeepsense"), (spec, p), x).mean)
