"""Command-line workflows: gen, train, eval, compare, bench and sweep-alpha.

Report payloads are deterministic functions of the config and inputs. Wall
clock figures go to ``*.meta.json`` files next to them.
"""

import argparse
import datetime
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from . import __version__
from . import config as config_mod
from .calibration import PAPER_Z_GRID, evaluate, fmt_value, reports_to_csv
from .data import Dataset, gen_blobs, gen_heteroscedastic, load_csv, split, standardize
from .errors import ConfigError, DropUQError, ValidationError
from .gp import gp_fit, gp_predict
from .inference import MethodSpec, bench_inference, predict
from .losses import LossSpec
from .network import checkpoint_dict, mlp_spec, params_from_checkpoint
from .numerics import RngStream
from .training import alpha_seed, select_alpha, sweep_alpha, train

log = logging.getLogger("dropuq")

MC_STREAM = 0x6D63
SSP_SEED_OFFSET = 100


class UsageError(DropUQError):
    category = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _workers():
    text = os.environ.get("DROPUQ_WORKERS", "1")
    try:
        n = int(text)
    except ValueError:
        raise ConfigError(f"DROPUQ_WORKERS must be an integer, got {text!r}") from None
    if n < 1:
        raise ConfigError("DROPUQ_WORKERS must be at least 1")
    return n


def _dumps(obj):
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n"


def _meta(digest, **fields):
    now = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    return _dumps({"config_digest": digest, "created": now, "version": __version__, **fields})


def _write(out_dir, files):
    """Write every output only after all of them were produced."""
    os.makedirs(out_dir, exist_ok=True)
    for name, text in files.items():
        with open(os.path.join(out_dir, name), "w") as f:
            f.write(text)
    log.info("wrote %s to %s", ", ".join(sorted(files)), out_dir)


# data

def generate(cfg):
    d, seed = cfg["data"], cfg["seed"]
    if d["source"] == "heteroscedastic":
        return gen_heteroscedastic(d["n"], seed)
    if d["source"] == "blobs":
        return gen_blobs(d["n"], d["classes"], d["separation"], seed, d["noise"])
    return load_csv(d["path"], d["features"], d["targets"], cfg["task"])


def raw_splits(cfg):
    return split(generate(cfg), cfg["data"]["fractions"], cfg["seed"])


def dataset_doc(splits, digest):
    return {"config_digest": digest, "kind": "dataset",
            "splits": {name: ds.to_dict() for name, ds in zip(("train", "val", "test"), splits)}}


def load_dataset_doc(path):
    try:
        with open(path) as f:
            doc = json.load(f)
        return tuple(Dataset.from_dict(doc["splits"][name]) for name in ("train", "val", "test"))
    except (OSError, ValueError, KeyError) as exc:
        raise ValidationError(f"cannot read dataset {path}: {exc}") from None


def load_splits(cfg, dataset_path=None):
    """Standardized train/val/test splits from a dataset file or the config."""
    parts = load_dataset_doc(dataset_path) if dataset_path else raw_splits(cfg)
    if parts[0].task != cfg["task"]:
        raise ValidationError(f"dataset task {parts[0].task!r} differs from config task {cfg['task']!r}")
    if len(parts[0]) == 0:
        raise ValidationError("training split is empty")
    return standardize(*parts)


# models

def model_setup(cfg, kind, input_dim, output_dims):
    """Network and loss for one trainable method family.

    rdeepsense: distribution head, configured alpha and dropout.
    mcdrop: same dropout, trained on the error term alone (point head for
    regression, cross-entropy for classification).
    ssp: dropout disabled, trained on the proper scoring rule alone.
    """
    n, task = cfg["network"], cfg["task"]
    head = None
    hidden_retain, input_retain = n["hidden_retain"], n["input_retain"]
    loss = LossSpec(task, cfg["loss"]["alpha"], cfg["loss"]["lambda_e"], cfg["loss"]["lambda_l"])
    if kind == "mcdrop":
        if task == "regression":
            head, loss = "point", replace(loss, alpha=1.0)
        else:
            loss = replace(loss, alpha=0.0)
    elif kind == "ssp":
        hidden_retain = input_retain = 1.0
        loss = replace(loss, alpha=0.0)
    elif kind != "rdeepsense":
        raise ValidationError(f"unknown model family {kind!r}")
    spec = mlp_spec(input_dim, n["hidden"], output_dims, task=task, head=head, activation=n["activation"],
                    hidden_retain=hidden_retain, input_retain=input_retain, variance_floor=n["variance_floor"])
    return spec, loss


def _epoch_logger(tag):
    def emit(rec):
        extra = "".join(f" {k}={rec[k]:.5g}" for k in ("val_total", "val_mae", "val_accuracy") if k in rec)
        log.info("%s epoch %d train_total=%.5g%s", tag, rec["epoch"], rec["train_total"], extra)
    return emit


def fit(cfg, kind, tr, va, seed=None, tag=None):
    spec, loss = model_setup(cfg, kind, tr.input_dim, tr.output_dims)
    tcfg = config_mod.train_config(cfg)
    if seed is not None:
        tcfg = replace(tcfg, seed=seed)
    params, report = train(spec, loss, tr, va, tcfg, log=_epoch_logger(tag or kind))
    return spec, params, report


def fit_ensemble(cfg, k, tr, va, workers=1):
    seeds = [alpha_seed(cfg["seed"], SSP_SEED_OFFSET + i) for i in range(k)]

    def run(i):
        return fit(cfg, "ssp", tr, va, seed=seeds[i], tag=f"ssp member {i}")

    if workers > 1 and k > 1:
        with ThreadPoolExecutor(min(workers, k)) as pool:
            return list(pool.map(run, range(k)))
    return [run(i) for i in range(k)]


def _normalization(ds):
    d = {"x_mean": ds.x_mean.tolist(), "x_std": ds.x_std.tolist()}
    if ds.task == "regression":
        d.update(y_mean=ds.y_mean.tolist(), y_std=ds.y_std.tolist())
    return d


def _checkpoint_text(spec, params, digest, method, train_ds):
    doc = checkpoint_dict(spec, params)
    doc.update(config_digest=digest, method=method, normalization=_normalization(train_ds))
    return _dumps(doc)


def load_models(path):
    """Returns ``(method_name, models)``; models is a tuple or a list of tuples."""
    try:
        with open(path) as f:
            doc = json.load(f)
        if doc.get("kind") == "ensemble":
            base = os.path.dirname(path)
            members = []
            for name in doc["members"]:
                with open(os.path.join(base, name)) as f:
                    members.append(params_from_checkpoint(json.load(f)))
            return doc.get("method", f"ssp-{len(members)}"), members
        return doc.get("method", "rdeepsense"), params_from_checkpoint(doc)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ValidationError(f"cannot read checkpoint {path}: {exc}") from None


def _model_digest(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()[:16]


# reports

def score(method, models, ds, cfg, digest, model_digest=None):
    pred = predict(method, models, ds.inputs, RngStream(cfg["seed"], MC_STREAM))
    rep = evaluate(pred, ds, method=method.name, grid=PAPER_Z_GRID,
                   variance_floor=cfg["network"]["variance_floor"])
    rep.config_digest, rep.model_digest = digest, model_digest
    return rep


def curves_to_csv(reports, digest):
    lines = [f"# config_digest={digest}", "method,z,coverage"]
    for r in reports:
        lines += [f"{r.method},{z!r},{c!r}" for z, c in zip(r.z_levels, r.coverage)]
    return "\n".join(lines) + "\n"


def report_files(stem, reports, digest, extra=None):
    doc = {"config_digest": digest, "reports": [r.to_dict() for r in reports]}
    doc.update(extra or {})
    files = {f"{stem}.json": _dumps(doc), f"{stem}.csv": reports_to_csv(reports, digest)}
    if reports and reports[0].task == "regression":
        files[f"{stem}_curves.csv" if stem != "report" else "curve.csv"] = curves_to_csv(reports, digest)
    return files


# commands

def cmd_gen(cfg, digest, args):
    parts = raw_splits(cfg)
    sizes = {name: len(ds) for name, ds in zip(("train", "val", "test"), parts)}
    log.info("generated splits %s", sizes)
    return {"dataset.json": _dumps(dataset_doc(parts, digest)),
            "dataset.meta.json": _meta(digest, sizes=sizes)}


def cmd_train(cfg, digest, args):
    method = MethodSpec.parse(args.method)
    tr, va, _ = load_splits(cfg, args.dataset)
    files = {}
    if method.kind == "ssp":
        fitted = fit_ensemble(cfg, method.k, tr, va, _workers())
        names = [f"member_{i}.json" for i in range(method.k)]
        for name, (spec, params, _) in zip(names, fitted):
            files[name] = _checkpoint_text(spec, params, digest, method.name, tr)
        files["model.json"] = _dumps({"config_digest": digest, "kind": "ensemble", "method": method.name,
                                      "members": names})
    else:
        kind = "mcdrop" if method.kind == "mcdrop" else "rdeepsense"
        fitted = [fit(cfg, kind, tr, va)]
        spec, params, _ = fitted[0]
        files["model.json"] = _checkpoint_text(spec, params, digest, method.name, tr)
    reports = [r for _, _, r in fitted]
    files["train_report.json"] = _dumps({"config_digest": digest, "method": method.name,
                                         "members": [r.to_dict() for r in reports]})
    files["train_report.meta.json"] = _meta(digest, seconds=[r.seconds for r in reports])
    return files


def cmd_eval(cfg, digest, args):
    if not args.checkpoint:
        raise UsageError("eval needs --checkpoint")
    trained_as, models = load_models(args.checkpoint)
    method = MethodSpec.parse(args.method or trained_as)
    _, _, te = load_splits(cfg, args.dataset)
    rep = score(method, models, te, cfg, digest, _model_digest(args.checkpoint))
    log.info("%s: %s", method.name, ", ".join(f"{k}={fmt_value(v)}" for k, v in rep.metric_items))
    return report_files("report", [rep], digest)


def compare_methods(cfg):
    c = cfg["compare"]
    return ([MethodSpec("rdeepsense")] + [MethodSpec("rdeepsense-mc", k) for k in c["rdeepsense_mc_k"]]
            + [MethodSpec("mcdrop", k) for k in c["mcdrop_k"]] + [MethodSpec("ssp", k) for k in c["ssp_k"]])


def cmd_compare(cfg, digest, args):
    tr, va, te = load_splits(cfg, args.dataset)
    methods = compare_methods(cfg)
    ssp_k = max([m.k for m in methods if m.kind == "ssp"], default=0)
    rd = fit(cfg, "rdeepsense", tr, va)
    mc = fit(cfg, "mcdrop", tr, va)
    members = [(s, p) for s, p, _ in fit_ensemble(cfg, ssp_k, tr, va, _workers())] if ssp_k else []

    def models_for(m):
        if m.kind == "ssp":
            return members
        return (mc[0], mc[1]) if m.kind == "mcdrop" else (rd[0], rd[1])

    reports, rows = [], []
    latency_rows = te.inputs[:cfg["compare"]["latency_samples"]]
    latency = {}
    for m in methods:
        reports.append(score(m, models_for(m), te, cfg, digest))
        b = bench_inference(m, models_for(m), latency_rows, 1, warmup=3, seed=cfg["seed"])
        rows.append({"method": m.name, "passes_per_prediction": b["passes_per_prediction"]})
        latency[m.name] = {"median_seconds": b["median_seconds"], "p95_seconds": b["p95_seconds"]}
    notes = {}
    if cfg["compare"]["gp"]:
        if cfg["task"] == "regression":
            n = min(cfg["compare"]["gp_max_train"], len(tr))
            gp = gp_fit(tr.inputs[:n], tr.targets[:n])
            rep = evaluate(gp_predict(gp, te.inputs), te, method="gp", variance_floor=None)
            rep.config_digest = digest
            reports.append(rep)
            rows.append({"method": "gp", "passes_per_prediction": None, "train_points": n})
        else:
            notes["gp"] = "skipped: the GP baseline is regression only"
    for r in reports:
        log.info("%-16s %s", r.method, " ".join(f"{k}={fmt_value(v)}" for k, v in r.metric_items))
    files = report_files("compare", reports, digest, {"methods": rows, "notes": notes})
    files["compare.meta.json"] = _meta(digest, latency=latency,
                                       train_seconds={"rdeepsense": rd[2].seconds, "mcdrop": mc[2].seconds})
    return files


def cmd_bench(cfg, digest, args):
    if not args.checkpoint:
        raise UsageError("bench needs --checkpoint")
    _, models = load_models(args.checkpoint)
    methods = [MethodSpec.parse(t) for t in args.methods.split(",") if t.strip()]
    if not methods:
        raise UsageError("bench needs at least one method")
    single = models[0] if isinstance(models, list) else models
    _, _, te = load_splits(cfg, args.dataset)
    inputs = te.inputs[:cfg["bench"]["samples"]]
    rows, timing = [], {}
    for m in methods:
        if m.kind == "ssp":
            if isinstance(models, list):
                target, note = models, "trained members"
            else:
                # latency only depends on the architecture; copies stand in for members
                spec, params = single
                target, note = [(spec.with_retain(1.0, 1.0), params)] * m.k, "replicated members"
        else:
            target, note = single, None
        b = bench_inference(m, target, inputs, cfg["bench"]["repetitions"], cfg["bench"]["warmup"], cfg["seed"])
        row = {"method": m.name, "passes_per_prediction": b["passes_per_prediction"], "calls": b["calls"],
               "warmup": b["warmup"]}
        if note:
            row["members"] = note
        rows.append(row)
        timing[m.name] = {"median_seconds": b["median_seconds"], "p95_seconds": b["p95_seconds"]}
    base = timing.get("rdeepsense", {}).get("median_seconds")
    for r in rows:
        t = timing[r["method"]]
        speed = f" ({t['median_seconds'] / base:.1f}x rdeepsense)" if base else ""
        print(f"{r['method']:<16} passes={r['passes_per_prediction']:g} median={t['median_seconds'] * 1e6:.1f}us"
              f"{speed}")
    return {"bench.json": _dumps({"config_digest": digest, "model_digest": _model_digest(args.checkpoint),
                                  "rows": rows}),
            "bench.meta.json": _meta(digest, latency=timing)}


def cmd_sweep_alpha(cfg, digest, args):
    tr, va, te = load_splits(cfg, args.dataset)
    spec, loss = model_setup(cfg, "rdeepsense", tr.input_dim, tr.output_dims)
    results = sweep_alpha(spec, loss, tr, va, cfg["sweep"]["alphas"], config_mod.train_config(cfg),
                          workers=_workers())
    best = select_alpha(results, cfg["task"])
    entries, reports = [], []
    for r in results:
        entry = {"alpha": r["alpha"], "seed": r["seed"]}
        if "error" in r:
            entry["error"] = r["error"]
            log.warning("alpha=%g failed: %s", r["alpha"], r["error"])
        else:
            r["report"].config_digest = digest
            entry["validation"] = r["report"].to_dict()
            reports.append(r["report"])
            log.info("alpha=%g %s", r["alpha"], " ".join(f"{k}={fmt_value(v)}" for k, v in r["report"].metric_items))
        entries.append(entry)
    test = score(MethodSpec("rdeepsense"), (spec, best["params"]), te, cfg, digest)
    test.method = f"rdeepsense(alpha={best['alpha']})"
    files = report_files("sweep", reports, digest, {"alphas": entries, "selected_alpha": best["alpha"],
                                                    "selected_test_report": test.to_dict()})
    files["model.json"] = _checkpoint_text(spec, best["params"], digest, "rdeepsense", tr)
    files["sweep.meta.json"] = _meta(digest, train_seconds={str(r["alpha"]): r["train_report"].seconds
                                                            for r in results if "error" not in r})
    return files


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "compare": cmd_compare,
            "bench": cmd_bench, "sweep-alpha": cmd_sweep_alpha}


def build_parser():
    parser = _Parser(prog="dropuq", description="Dropout-based uncertainty estimation workflows.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--quiet", action="store_true", help="only report errors")
        if name != "gen":
            p.add_argument("--dataset", help="dataset.json written by gen (default: regenerate from config)")
        if name == "train":
            p.add_argument("--method", default="rdeepsense", help="rdeepsense, mcdrop-K or ssp-K")
        if name in ("eval", "bench"):
            p.add_argument("--checkpoint", help="model.json written by train")
        if name == "eval":
            p.add_argument("--method", help="inference method (default: the trained method)")
        if name == "bench":
            p.add_argument("--methods", default="rdeepsense,mcdrop-10,mcdrop-20,ssp-10",
                           help="comma-separated inference methods")
    return parser


def run(argv=None):
    """Parse, validate and execute; returns the dict of written files."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    cfg = config_mod.load(args.config, args.seed) if args.config else config_mod.resolve({}, args.seed)
    for attr in ("dataset", "checkpoint"):
        path = getattr(args, attr, None)
        if path and not os.path.isfile(path):
            raise ConfigError(f"--{attr} {path} does not exist")
    _workers()
    digest = config_mod.digest(cfg)
    files = COMMANDS[args.command](cfg, digest, args)
    _write(args.out, files)
    return files


def main(argv=None):
    try:
        run(argv)
    except DropUQError as exc:
        print(f"error: {exc.category}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2 if isinstance(exc, (ConfigError, UsageError)) else 1
    except Exception as exc:  # noqa: BLE001
        print(f"error: internal: {type(exc).__name__}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
