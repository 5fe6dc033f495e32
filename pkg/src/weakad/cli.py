"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 data error, 4 training divergence.
Progress goes to stdout as ``key=value`` lines.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .dataset import DataError, Dataset, Schema, is_cache
from .experiment import (
    GRID_SUITES,
    LABEL_BUDGETS,
    SUITES,
    ExperimentSpec,
    curve_points,
    default_output_dir,
    load_dataset,
    replay,
    run_ablation,
    run_protocol,
    sweep_labels,
    write_reports,
)
from .trainer import VARIANTS, TrainConfig, TrainingDivergence

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

log = logging.getLogger("weakad.cli")


def _training_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    g = p.add_argument_group("training")
    g.add_argument("--a0", type=float, default=d.a0, help="score margin (default %(default)s)")
    g.add_argument("--lambda", dest="lam", type=float, default=d.lam, help="weight of the error term (default %(default)s)")
    g.add_argument("--batch-size", type=int, default=d.batch_size)
    g.add_argument("--stage1-epochs", type=int, default=d.stage1_epochs)
    g.add_argument("--stage2-epochs", type=int, default=d.stage2_epochs)
    g.add_argument("--lr", type=float, default=None, help="learning rate for both stages")
    g.add_argument("--lr-pretrain", type=float, default=None)
    g.add_argument("--lr-joint", type=float, default=None)
    g.add_argument("--optimizer", choices=("adam", "sgd"), default=d.optimizer)
    g.add_argument("--patience", type=int, default=d.patience)
    g.add_argument("--factors", default="h,r,e", help="comma-separated subset of h,r,e")
    g.add_argument("--variant", choices=sorted(VARIANTS), default="proposed")
    g.add_argument("--scorer-hidden", default=",".join(map(str, d.scorer_hidden)))


def _protocol_flags(p: argparse.ArgumentParser, runs: int = 10) -> None:
    p.add_argument("--dataset", required=True, help="CSV file or prepared cache")
    p.add_argument("--schema", help="JSON schema for the CSV columns")
    p.add_argument("--out", help="output directory (default under $WEAKAD_OUTPUT_ROOT or ./results)")
    p.add_argument("--seed", type=int, default=0, help="base seed; run i uses seed + i")
    p.add_argument("--runs", type=int, default=runs)
    p.add_argument("--n-labeled", type=int, default=30)
    p.add_argument("--contamination", type=float, default=0.02)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--jobs", type=int, default=1, help="runs executed in parallel processes")
    _training_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weakad", description="Weakly supervised tabular anomaly detection experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="also log per-epoch training losses")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="preprocess a CSV into a binary cache")
    p.add_argument("--dataset", required=True)
    p.add_argument("--schema")
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="multi-seed protocol run")
    _protocol_flags(p)
    p.add_argument("--replay", help="re-run the configuration stored in a report.json")

    p = sub.add_parser("ablate", help="run an ablation suite")
    _protocol_flags(p)
    p.add_argument("--suite", required=True, choices=SUITES)

    p = sub.add_parser("sweep-labels", help="protocol runs over labeled-anomaly budgets")
    _protocol_flags(p)
    p.add_argument("--budgets", default=",".join(map(str, LABEL_BUDGETS)))

    p = sub.add_parser("synth-gen", help="write the bundled synthetic manifold dataset as CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-normal", type=int, default=5000)
    p.add_argument("--n-anomaly", type=int, default=250)
    p.add_argument("--dim", type=int, default=20)
    p.add_argument("--intrinsic-dim", type=int, default=3)
    return parser


def _int_list(text: str, what: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ValueError(f"{what} must be comma-separated integers, got {text!r}") from None
    if not vals:
        raise ValueError(f"{what} is empty")
    return vals


def config_from_args(args: argparse.Namespace) -> TrainConfig:
    lr_pre = args.lr_pretrain if args.lr_pretrain is not None else args.lr
    lr_joint = args.lr_joint if args.lr_joint is not None else args.lr
    cfg = TrainConfig(
        a0=args.a0,
        lam=args.lam,
        batch_size=args.batch_size,
        stage1_epochs=args.stage1_epochs,
        stage2_epochs=args.stage2_epochs,
        optimizer=args.optimizer,
        patience=args.patience,
        factors=args.factors,
        scorer_hidden=_int_list(args.scorer_hidden, "--scorer-hidden"),
        seed=args.seed,
    )
    if lr_pre is not None:
        cfg = replace(cfg, lr_pretrain=lr_pre)
    if lr_joint is not None:
        cfg = replace(cfg, lr_joint=lr_joint)
    return cfg.with_variant(args.variant)


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    if args.runs < 1:
        raise ValueError("--runs must be at least 1")
    return ExperimentSpec(
        config=config_from_args(args),
        n_runs=args.runs,
        n_labeled=args.n_labeled,
        contamination=args.contamination,
        test_fraction=args.test_fraction,
        base_seed=args.seed,
        jobs=args.jobs,
    )


def _load(args: argparse.Namespace) -> Dataset:
    schema = Schema.from_json(args.schema) if args.schema else None
    ds = load_dataset(args.dataset, schema)
    print(f"dataset={args.dataset} n={ds.n_samples} d={ds.n_features} anomalies={ds.n_anomalies}")
    return ds


def _emit(reports, args, title: str, columns: bool = False) -> Path:
    out = Path(args.out) if args.out else default_output_dir(args.command, args.dataset)
    write_reports(reports, out, title, columns)
    for rep in reports:
        a = rep.aggregate
        print(
            f"label={rep.label} runs={a.n_runs} auc_roc={a.auc_roc_mean:.4f} auc_roc_std={a.auc_roc_std:.4f} "
            f"auc_pr={a.auc_pr_mean:.4f} auc_pr_std={a.auc_pr_std:.4f}"
        )
    print(f"out={out}")
    return out


def cmd_prepare(args: argparse.Namespace) -> int:
    if is_cache(args.dataset):
        ds = Dataset.load(args.dataset)
        if Path(args.out).resolve() != Path(args.dataset).resolve():
            ds.save(args.out)
        status = "cached"
    else:
        schema = Schema.from_json(args.schema) if args.schema else None
        ds = load_dataset(args.dataset, schema)
        ds.save(args.out)
        status = "prepared"
    print(
        f"status={status} out={args.out} d={ds.n_features} n={ds.n_samples} "
        f"anomalies={ds.n_anomalies} anomaly_fraction={ds.n_anomalies / max(ds.n_samples, 1):.4f}"
    )
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    ds = _load(args)
    if args.replay:
        stored = json.loads(Path(args.replay).read_text(encoding="utf-8"))
        reports = [replay(rep, ds) for rep in (stored if isinstance(stored, list) else [stored])]
    else:
        reports = [run_protocol(ds, spec_from_args(args), args.variant)]
    _emit(reports, args, f"{Path(args.dataset).stem}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    ds = _load(args)
    reports = run_ablation(ds, spec_from_args(args), args.suite)
    _emit(reports, args, f"{Path(args.dataset).stem} ablation: {args.suite}", columns=args.suite in GRID_SUITES)
    return 0


def cmd_sweep_labels(args: argparse.Namespace) -> int:
    ds = _load(args)
    budgets = _int_list(args.budgets, "--budgets")
    reports = sweep_labels(ds, spec_from_args(args), budgets)
    out = _emit(reports, args, f"{Path(args.dataset).stem} labeled anomalies")
    (out / "curve.json").write_text(json.dumps(curve_points(reports), indent=2), encoding="utf-8")
    return 0


def cmd_synth_gen(args: argparse.Namespace) -> int:
    from .synthetic import write_csv

    write_csv(
        args.out,
        n_normal=args.n_normal,
        n_anomaly=args.n_anomaly,
        dim=args.dim,
        intrinsic_dim=args.intrinsic_dim,
        seed=args.seed,
    )
    print(f"out={args.out} n={args.n_normal + args.n_anomaly} d={args.dim} anomalies={args.n_anomaly}")
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "run": cmd_run,
    "ablate": cmd_ablate,
    "sweep-labels": cmd_sweep_labels,
    "synth-gen": cmd_synth_gen,
}


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(logging.Formatter("%(message)s"))
    root = logging.getLogger("weakad")
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO)
    root.propagate = False
    logging.getLogger("weakad.trainer").setLevel(logging.INFO if verbose else logging.WARNING)
    logging.captureWarnings(True)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except (DataError, FileNotFoundError) as exc:
        print(f"error=data message={exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergence as exc:
        print(f"error=divergence message={exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"error=usage message={exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
