"""Command line entry point: ``roann {train,certify,ablate,gen-data,inspect-checkpoint}``.

Settings are resolved in three layers: a named preset, then an optional JSON
or TOML config file, then individual flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import tasks
from .checkpoint import CheckpointError, describe
from .experiments import (
    ConfigError,
    ExperimentConfig,
    PRESETS,
    config_from_file,
    preset,
    run_ablation,
    run_certify,
    run_experiment,
)
from .optim import OptimizerConfig

_SCALAR_FLAGS = {
    "task": str, "model": str, "length": int, "n_symbols": int, "hidden": int, "rho": float,
    "alpha": float, "activation": str, "filter_kind": str, "weight_std": float,
    "recurrent_std": float, "batch_size": int, "epochs": int, "iterations": int, "seed": int,
    "eval_every": int, "certify_every": int, "certify_probes": int, "n_points": int,
    "data_dir": str, "subset_fraction": float, "permutation_file": str, "output_dir": str,
    "name": str,
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS), help="start from a named experiment")
    p.add_argument("--config", help="JSON or TOML file with ExperimentConfig fields")
    for name, typ in _SCALAR_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    p.add_argument("--dims", help="comma-separated feedforward layer sizes, e.g. 2,2,2,1")
    p.add_argument("--depth", type=int, help="shorthand for dims 2,2,...,2,1 with this many layers")
    p.add_argument("--recycle", action="store_true", default=None, help="reuse one filter for every layer")
    p.add_argument("--optimizer", choices=["sgd", "nag", "adam"])
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--schedule", help="epoch:lr pairs, e.g. 10:0.01,15:0.001")


def _parse_schedule(text: str) -> list[tuple[int, float]]:
    out = []
    for item in text.split(","):
        epoch, lr = item.split(":")
        out.append((int(epoch), float(lr)))
    return out


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = preset(args.preset) if args.preset else ExperimentConfig()
    updates: dict = {}
    opt_updates: dict = {}
    if args.config:
        data = config_from_file(args.config)
        opt_updates.update(data.pop("optimizer", {}) or {})
        unknown = set(data) - {f.name for f in dataclasses.fields(ExperimentConfig)}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        updates.update(data)
    for name in _SCALAR_FLAGS:
        value = getattr(args, name)
        if value is not None:
            updates[name] = value
    if args.dims:
        updates["dims"] = [int(d) for d in args.dims.split(",")]
    if args.depth:
        updates["dims"] = [2] * args.depth + [1]
    if args.recycle:
        updates["recycle"] = True
    # explicitly choosing one of rho/alpha clears the other inherited from the preset
    if "alpha" in updates and "rho" not in updates:
        updates["rho"] = None
    if "rho" in updates and "alpha" not in updates:
        updates["alpha"] = None
    if args.optimizer:
        opt_updates["kind"] = args.optimizer
    if args.lr is not None:
        opt_updates["learning_rate"] = args.lr
    if args.momentum is not None:
        opt_updates["momentum"] = args.momentum
    if args.schedule:
        opt_updates["schedule"] = _parse_schedule(args.schedule)
    if opt_updates:
        base = dataclasses.asdict(cfg.optimizer)
        base.update(opt_updates)
        updates["optimizer"] = OptimizerConfig(**base)
    cfg = dataclasses.replace(cfg, **updates)
    cfg.validate()
    return cfg


def _print_row(row) -> None:
    acc = "" if row.accuracy is None else f" acc={row.accuracy:.4f}"
    print(f"{row.split:>6} step={row.step} loss={row.loss:.6g}{acc} t={row.seconds:.1f}s", flush=True)


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    if cfg.output_dir is None:
        cfg.output_dir = "runs"
    result = run_experiment(cfg, progress=None if args.quiet else _print_row)
    print(f"metrics: {result.metrics_path}")
    print(f"checkpoint: {result.checkpoint_path}")
    if result.certifications:
        ok = all(r.passed for r in result.certifications)
        print(f"certifications: {len(result.certifications)} run, {'all passed' if ok else 'FAILURES'}")
    if result.diverged:
        print("run diverged (non-finite loss); see the nan-event row", file=sys.stderr)
        return 3
    return 0


def cmd_certify(args) -> int:
    cfg = resolve_config(args)
    report = run_certify(cfg, checkpoint=args.checkpoint, probes=args.probes, length=args.seq_length,
                         output=args.out)
    top = max(s[0] for s in report.spectra)
    bottom = min(s[-1] for s in report.spectra)
    lower = "n/a" if report.lower is None else f"{report.lower:.6g}"
    print(f"sigma={report.sigma:.6g} rho={report.rho:.6g} L={report.L}")
    print(f"bounds=[{lower}, {report.upper:.6g}] spectrum=[{bottom:.6g}, {top:.6g}]")
    print("PASS" if report.passed else "FAIL")
    if args.out:
        print(f"report: {args.out}")
    return 0 if report.passed else 1


def cmd_ablate(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",")]
    overrides = {}
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.data_dir is not None:
        overrides["data_dir"] = args.data_dir
    pairs = run_ablation(args.task, seeds, output_dir=args.output_dir, **overrides)
    for pair in pairs:
        print(f"seed {pair.seed}: eyernn -> {pair.eye.metrics_path}, roarnn -> {pair.roa.metrics_path}")
    return 0


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    if args.task == "double-moon":
        x, y = tasks.gen_double_moon(tasks.DoubleMoonConfig(n_points=args.n, seed=args.seed))
        np.savetxt(out, np.column_stack([x, y]), delimiter=",", header="x1,x2,label", comments="")
    elif args.task == "copymem":
        inputs, targets = tasks.copy_sequences(tasks.CopyMemConfig(args.length, args.n_symbols, args.n), rng)
        np.savez(out, inputs=inputs, targets=targets)
    elif args.task == "addprob":
        inputs, targets = tasks.gen_add_batch(tasks.AddProbConfig(args.length, args.n), rng)
        np.savez(out, inputs=inputs, targets=targets)
    elif args.task == "permutation":
        tasks.save_permutation(tasks.default_permutation() if args.seed is None
                               else np.random.default_rng(args.seed).permutation(tasks.MNIST_PIXELS), out)
    print(f"wrote {out}")
    return 0


def cmd_inspect(args) -> int:
    print(json.dumps(describe(args.checkpoint), indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roann", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write metrics and a checkpoint")
    _add_config_flags(p)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("certify", help="check Jacobian singular values against the bounds")
    _add_config_flags(p)
    p.add_argument("--checkpoint", help="certify trained parameters instead of a fresh model")
    p.add_argument("--probes", type=int, default=10)
    p.add_argument("--seq-length", type=int, help="probe sequence length for recurrent models")
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("ablate", help="paired eyeRNN / roaRNN runs from identical parameters")
    p.add_argument("--task", choices=["copymem", "addprob", "psmnist"], default="addprob")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--iterations", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--data-dir")
    p.add_argument("--output-dir", default="runs/ablation")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen-data", help="dump a generated dataset or the MNIST permutation")
    p.add_argument("task", choices=["double-moon", "copymem", "addprob", "permutation"])
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1000, help="points or sequences")
    p.add_argument("--length", type=int, default=100)
    p.add_argument("--n-symbols", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("inspect-checkpoint", help="print shapes and settings stored in a checkpoint")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed", 0) is None and args.command == "gen-data" and args.task != "permutation":
        args.seed = 0
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, FileNotFoundError, tasks.MnistFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
