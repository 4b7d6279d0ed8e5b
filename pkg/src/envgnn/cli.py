"""Command-line entry point for data generation, training, evaluation,
gradient checking, sweeps, and branch-weight export.

Exit codes: 0 success, 2 usage, 3 I/O failure, 4 numerical abort,
5 checkpoint/dataset incompatibility.

Machine-readable progress goes to stdout as line-delimited JSON; the human
summary goes to stderr. All randomness flows from --seed (default 0, never
wall-clock).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
import time

import numpy as np

from . import __version__
from .config import TrainConfig
from .gradcheck import run_gradcheck
from .graphdata import dataset_manifest_hash, load_dataset, load_graph, save_dataset
from .model import export_branch_weights, init_params, ParamSet
from .rng import ALGORITHM
from .shiftgen import PlantedConfig, SpuriousGenConfig, gen_planted_dataset, gen_spurious_dataset
from .trainer import TrainAbort, eval_report, sweep, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_COMPAT = 5


def _emit(record: dict):
    sys.stdout.write(json.dumps(record) + "\n")
    sys.stdout.flush()


def _say(msg: str):
    sys.stderr.write(msg + "\n")


def _prepare_out(path: str, force: bool):
    if os.path.exists(path) and os.listdir(path):
        if not force:
            raise FileExistsError(f"output directory exists (use --force): {path}")
        shutil.rmtree(path)
    os.makedirs(path, exist_ok=True)


def _sha256_file(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _write_manifest(out_dir: str, command: str, extra: dict):
    manifest = {
        "command": command,
        "tool_version": __version__,
        "prng": ALGORITHM,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    manifest.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path: str, params: ParamSet, cfg: TrainConfig):
    payload = {
        "config": cfg.to_dict(),
        "in_dim": params.in_dim,
        "num_classes": params.num_classes,
        "params": {
            name: {"shape": list(t.value.shape), "values": t.value.reshape(-1).tolist()}
            for name, t in params.tensors.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path: str) -> tuple[ParamSet, TrainConfig]:
    with open(path) as fh:
        payload = json.load(fh)
    cfg = TrainConfig.from_dict(payload["config"])
    from .rng import Rng, STREAM_INIT

    params = init_params(cfg, payload["in_dim"], payload["num_classes"],
                         Rng(cfg.seed).substream(STREAM_INIT))
    values = {
        name: np.asarray(rec["values"], dtype=np.float64).reshape(rec["shape"])
        for name, rec in payload["params"].items()
    }
    params.load_values(values)
    return params, cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    _prepare_out(args.out, args.force)
    if args.kind == "citation-spurious":
        if not args.base:
            raise UsageError("--base is required for kind=citation-spurious")
        base = load_graph(args.base)
        cfg = SpuriousGenConfig(spurious_dim=args.spurious_dim, seed=args.seed,
                                gcn_layers=args.gcn_layers)
        ds = gen_spurious_dataset(base, cfg)
    else:
        cfg = PlantedConfig(
            n_per_domain=args.n_per_domain,
            num_classes=args.classes,
            stable_dim=args.stable_dim,
            spurious_dim=args.spurious_dim or 4,
            p_intra=args.p_intra,
            p_inter=args.p_inter,
            stable_strength=args.stable_strength,
            spurious_strength=args.spurious_strength,
            stable_noise=args.stable_noise,
            spurious_noise=args.spurious_noise,
            label_noise=args.label_noise,
            seed=args.seed,
        )
        ds = gen_planted_dataset(cfg)
    save_dataset(args.out, ds)
    mhash = dataset_manifest_hash(args.out)
    _write_manifest(args.out, "gen-data", {"seed": args.seed, "dataset_manifest_hash": mhash})
    _emit({"event": "gen-data", "out": args.out, "manifest_hash": mhash})
    _say(f"dataset written to {args.out} (manifest hash {mhash[:12]})")
    return EXIT_OK


def _load_train_config(args) -> TrainConfig:
    base = {}
    if args.config:
        with open(args.config) as fh:
            base = json.load(fh)
    overrides = {
        "seed": args.seed,
        "method": args.method,
        "backbone": args.backbone,
    }
    for flag, key in [
        ("epochs", "epochs"), ("lr", "lr"), ("weight_decay", "weight_decay"),
        ("dropout", "dropout"), ("hidden", "hidden"), ("layers", "num_layers"),
        ("branches", "num_branches"), ("tau", "tau"), ("reg_weight", "reg_weight"),
    ]:
        val = getattr(args, flag)
        if val is not None:
            overrides[key] = val
    for flag in ("no_reg_loss", "shared_env", "mean_pool_env",
                 "log_prob_gumbel", "deterministic_eval", "exact_kl"):
        if getattr(args, flag):
            overrides[flag] = True
    merged = {**base, **{k: v for k, v in overrides.items() if v is not None}}
    cfg = TrainConfig.from_dict(merged)
    if cfg.method == "erm" and any(
        k in merged for k in ("num_branches", "tau", "reg_weight")
    ):
        _say("warning: --method erm ignores K/tau/reg-weight settings")
    return cfg


def cmd_train(args) -> int:
    _prepare_out(args.out, args.force)
    cfg = _load_train_config(args)
    ds = load_dataset(args.data)
    try:
        result = train(ds, cfg)
    except TrainAbort as exc:
        _emit({"event": "abort", "epoch": exc.epoch, "error": str(exc)})
        _say(f"numerical abort: {exc}")
        return EXIT_NUMERIC

    run = result.to_dict()
    run["prng"] = ALGORITHM
    run["dataset_manifest_hash"] = dataset_manifest_hash(args.data)
    if args.config:
        run["config_file_hash"] = _sha256_file(args.config)
    run_path = os.path.join(args.out, "run.json")
    with open(run_path, "w") as fh:
        json.dump(run, fh, indent=1, sort_keys=True)

    from .model import init_params as _init  # params already hold best values
    from .rng import Rng, STREAM_INIT

    params = _init(cfg, ds.num_features, ds.num_classes, Rng(cfg.seed).substream(STREAM_INIT))
    params.load_values(result.best_params)
    save_checkpoint(os.path.join(args.out, "checkpoint.json"), params, cfg)
    _write_manifest(args.out, "train", {
        "seed": cfg.seed,
        "dataset_manifest_hash": run["dataset_manifest_hash"],
    })
    _emit({"event": "train-done", "selected_epoch": result.selected_epoch,
           "best_valid": result.best_valid, "final": result.final})
    _say(f"training done: best valid {result.best_valid:.4f} at epoch "
         f"{result.selected_epoch}; run written to {run_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _prepare_out(args.out, args.force)
    params, cfg = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    if params.in_dim != ds.num_features or params.num_classes != ds.num_classes:
        _say(f"checkpoint incompatible with dataset: model (D={params.in_dim}, "
             f"C={params.num_classes}) vs data (D={ds.num_features}, C={ds.num_classes})")
        return EXIT_COMPAT
    report = eval_report(params, ds, cfg)
    out_path = os.path.join(args.out, "metrics.json")
    with open(out_path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
    _write_manifest(args.out, "eval", {
        "seed": cfg.seed,
        "checkpoint_hash": _sha256_file(args.checkpoint),
        "dataset_manifest_hash": dataset_manifest_hash(args.data),
    })
    _emit({"event": "eval", "report": report.to_dict()})
    _say(f"metrics written to {out_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    worst = 0.0
    ok = True
    for backbone in ([args.backbone] if args.backbone else ["gcn", "gat"]):
        rep = run_gradcheck(backbone=backbone, num_branches=args.branches,
                            num_layers=args.layers, seed=args.seed)
        _emit({"event": "gradcheck", "backbone": backbone,
               "max_relative_error": rep["max_relative_error"],
               "errors": rep["errors"], "passed": rep["passed"]})
        for name, err in sorted(rep["errors"].items()):
            _say(f"  {backbone:4s} {name:20s} rel err {err:.3e}")
        worst = max(worst, rep["max_relative_error"])
        ok = ok and rep["passed"]
    _say(f"gradcheck {'PASS' if ok else 'FAIL'} (max relative error {worst:.3e})")
    return EXIT_OK if ok else 1


def cmd_sweep(args) -> int:
    _prepare_out(args.out, args.force)
    with open(args.grid) as fh:
        grid = json.load(fh)
    seeds = [int(s) for s in args.seeds.split(",")]
    ds = load_dataset(args.data)
    base = TrainConfig()
    if args.config:
        with open(args.config) as fh:
            base = TrainConfig.from_dict(json.load(fh))
    best_cfg, results = sweep(ds, grid, seeds, base)
    payload = {"best_config": best_cfg.to_dict(), "results": results,
               "grid": grid, "seeds": seeds}
    out_path = os.path.join(args.out, "sweep.json")
    with open(out_path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
    _emit({"event": "sweep-done", "best_config": best_cfg.to_dict(),
           "runs": len(results)})
    _say(f"sweep done: {len(results)} runs, results in {out_path}")
    return EXIT_OK


def cmd_export_weights(args) -> int:
    params, _cfg = load_checkpoint(args.checkpoint)
    if params.method != "canet":
        _say("checkpoint has no branch weights (baseline model)")
        return EXIT_COMPAT
    try:
        paths = export_branch_weights(params, args.layer, args.out)
    except ValueError as exc:
        _say(str(exc))
        return EXIT_USAGE
    _emit({"event": "export-weights", "files": paths})
    _say(f"wrote {len(paths)} branch weight file(s) to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class UsageError(ValueError):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="envgnn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic shift dataset")
    g.add_argument("--kind", choices=["citation-spurious", "planted"], required=True)
    g.add_argument("--base", help="base graph directory (citation-spurious only)")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--force", action="store_true")
    g.add_argument("--spurious-dim", dest="spurious_dim", type=int, default=0)
    g.add_argument("--gcn-layers", dest="gcn_layers", type=int, default=1)
    g.add_argument("--n-per-domain", dest="n_per_domain", type=int, default=1000)
    g.add_argument("--classes", type=int, default=3)
    g.add_argument("--stable-dim", dest="stable_dim", type=int, default=4)
    g.add_argument("--p-intra", dest="p_intra", type=float, default=0.02)
    g.add_argument("--p-inter", dest="p_inter", type=float, default=0.002)
    g.add_argument("--stable-strength", dest="stable_strength", type=float, default=1.0)
    g.add_argument("--spurious-strength", dest="spurious_strength", type=float, default=2.0)
    g.add_argument("--stable-noise", dest="stable_noise", type=float, default=1.0)
    g.add_argument("--spurious-noise", dest="spurious_noise", type=float, default=1.0)
    g.add_argument("--label-noise", dest="label_noise", type=float, default=0.0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model and write run.json + checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="JSON file with TrainConfig fields")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--force", action="store_true")
    t.add_argument("--method", choices=["canet", "erm"], default="canet")
    t.add_argument("--backbone", choices=["gcn", "gat"], default="gcn")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--weight-decay", dest="weight_decay", type=float)
    t.add_argument("--dropout", type=float)
    t.add_argument("--hidden", type=int)
    t.add_argument("--layers", type=int)
    t.add_argument("--branches", type=int)
    t.add_argument("--tau", type=float)
    t.add_argument("--reg-weight", dest="reg_weight", type=float)
    for flag in ("no-reg-loss", "shared-env", "mean-pool-env",
                 "log-prob-gumbel", "deterministic-eval", "exact-kl"):
        t.add_argument(f"--{flag}", dest=flag.replace("-", "_"), action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--force", action="store_true")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="verify gradients on a small instance")
    c.add_argument("--backbone", choices=["gcn", "gat"])
    c.add_argument("--branches", type=int, default=3)
    c.add_argument("--layers", type=int, default=2)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("sweep", help="grid search over hyperparameters")
    s.add_argument("--data", required=True)
    s.add_argument("--grid", required=True, help="JSON file: {field: [values...]}")
    s.add_argument("--seeds", default="0")
    s.add_argument("--config", help="base config JSON")
    s.add_argument("--out", required=True)
    s.add_argument("--force", action="store_true")
    s.add_argument("--jobs", type=int, default=1)  # runs are independent
    s.set_defaults(func=cmd_sweep)

    w = sub.add_parser("export-weights", help="export per-branch weight CSVs")
    w.add_argument("--checkpoint", required=True)
    w.add_argument("--layer", type=int, required=True)
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_export_weights)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        _say(f"usage error: {exc}")
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, FileExistsError, PermissionError, IsADirectoryError) as exc:
        _say(f"I/O error: {exc}")
        return EXIT_IO
    except ValueError as exc:
        _say(f"invalid input: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
