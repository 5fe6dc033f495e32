"""Seeded multi-run protocol, ablation suites and label-budget sweeps.

Run ``i`` of a protocol uses seed ``base_seed + i``. Each seed yields two
independent streams: one for the train/test split, one for training. Every run
resplits the data, so variants compared under the same seed share the same split.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .dataset import Dataset, Schema, is_cache, load_csv, make_weak_split, preprocess
from .metrics import Aggregate, EvalResult, aggregate_runs, evaluate
from .numerics import split_rngs
from .trainer import TrainConfig, TrainingDivergence, fit, predict_scores

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "WEAKAD_OUTPUT_ROOT"
LABEL_BUDGETS = (30, 60, 90, 120)
A0_GRID = (0.1, 1.0, 3.0, 4.0, 5.0, 6.0, 7.0, 10.0, 20.0)
LAMBDA_GRID = (0.1, 0.5, 1.0, 5.0, 10.0)
FACTOR_SETS = ("h", "r", "e", "h,r", "h,e", "r,e", "h,r,e")
# suites whose table lays the grid values out as columns
GRID_SUITES = ("a0-grid", "lambda-grid")


@dataclass
class ExperimentSpec:
    config: TrainConfig = field(default_factory=TrainConfig)
    n_runs: int = 10
    n_labeled: int = 30
    contamination: float = 0.02
    test_fraction: float = 0.2
    base_seed: int = 0
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.n_runs < 1:
            raise ValueError("n_runs must be at least 1")

    def seeds(self) -> list[int]:
        return [self.base_seed + i for i in range(self.n_runs)]

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["config"] = self.config.to_dict()
        out.pop("jobs")
        return out

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "ExperimentSpec":
        raw = dict(raw)
        cfg = TrainConfig.from_dict(raw.pop("config"))
        return cls(config=cfg, **raw)


@dataclass
class RunReport:
    label: str
    spec: ExperimentSpec
    seeds: list[int]
    results: list[EvalResult]
    seconds: list[dict[str, float]]

    @property
    def aggregate(self) -> Aggregate:
        return aggregate_runs(self.results)

    def records(self) -> list[dict[str, Any]]:
        """Metric records only; timing is kept out so reruns compare byte for byte."""
        return [
            {"label": self.label, "run": i, "seed": seed, "n_labeled": self.spec.n_labeled, **asdict(res)}
            for i, (seed, res) in enumerate(zip(self.seeds, self.results))
        ]

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "spec": self.spec.to_dict(),
            "seeds": self.seeds,
            "results": [asdict(r) for r in self.results],
            "aggregate": asdict(self.aggregate),
            "seconds": self.seconds,
        }


def load_dataset(path: str | Path, schema: Schema | None = None) -> Dataset:
    """A prepared cache as-is, or a CSV run through preprocessing."""
    if is_cache(path):
        return Dataset.load(path)
    return preprocess(load_csv(path, schema))


def run_single(ds: Dataset, spec: ExperimentSpec, seed: int, run_index: int | None = None) -> tuple[EvalResult, dict[str, float]]:
    split_rng, train_rng = split_rngs(seed, 2)
    split = make_weak_split(ds, spec.n_labeled, spec.contamination, spec.test_fraction, split_rng)
    cfg = replace(spec.config, seed=seed)
    try:
        out = fit(ds.features, split, cfg, train_rng)
    except TrainingDivergence as exc:
        exc.run_index = run_index
        exc.args = (f"run {run_index} (seed {seed}): {exc.args[0]}",)
        raise
    scores = predict_scores(out.model, ds.features[split.test])
    return evaluate(scores, ds.labels[split.test]), out.seconds


def _run_single_star(args):
    return run_single(*args)


def run_protocol(ds: Dataset, spec: ExperimentSpec, label: str = "proposed") -> RunReport:
    seeds = spec.seeds()
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            outs = list(pool.map(_run_single_star, [(ds, spec, s, i) for i, s in enumerate(seeds)]))
    else:
        outs = []
        for i, s in enumerate(seeds):
            outs.append(run_single(ds, spec, s, i))
            res = outs[-1][0]
            log.info("label=%s run=%d seed=%d auc_roc=%.4f auc_pr=%.4f", label, i, s, res.auc_roc, res.auc_pr)
    return RunReport(label, spec, seeds, [o[0] for o in outs], [o[1] for o in outs])


def _suite_variants(base: TrainConfig) -> dict[str, Callable[[], list[tuple[str, TrainConfig]]]]:
    return {
        "factors": lambda: [(f"{{{fs}}}", replace(base, factors=tuple(fs.split(",")))) for fs in FACTOR_SETS],
        "reconstructed-only": lambda: [("proposed", base), ("variant", base.with_variant("reconstruction-input"))],
        "loss-term": lambda: [("proposed loss", base), ("variant loss", base.with_variant("no-le-term"))],
        "a0-grid": lambda: [(f"a0={a:g}", replace(base, a0=a)) for a in A0_GRID],
        "lambda-grid": lambda: [(f"lambda={v:g}", replace(base, lam=v)) for v in LAMBDA_GRID],
        "pretrain": lambda: [("pre-trained", base), ("end-to-end", base.with_variant("no-pretrain"))],
        "e-injection": lambda: [("proposed", base), ("variant", base.with_variant("first-layer-e"))],
    }


SUITES = tuple(_suite_variants(TrainConfig()))


def suite_configs(suite: str, base: TrainConfig) -> list[tuple[str, TrainConfig]]:
    table = _suite_variants(base)
    if suite not in table:
        raise ValueError(f"unknown ablation suite {suite!r}; choose from {', '.join(SUITES)}")
    return table[suite]()


def run_ablation(ds: Dataset, spec: ExperimentSpec, suite: str) -> list[RunReport]:
    """Every variant of ``suite`` under the same seeds, splits and remaining settings."""
    return [run_protocol(ds, replace(spec, config=cfg), label) for label, cfg in suite_configs(suite, spec.config)]


def sweep_labels(ds: Dataset, spec: ExperimentSpec, budgets: Sequence[int] = LABEL_BUDGETS) -> list[RunReport]:
    """One protocol per labeled-anomaly budget; budgets beyond the data are clamped by the split."""
    return [run_protocol(ds, replace(spec, n_labeled=b), f"n_labeled={b}") for b in budgets]


def replay(report: dict[str, Any] | str | Path, ds: Dataset) -> RunReport:
    """Re-run a stored report's configuration and seeds."""
    if not isinstance(report, dict):
        report = json.loads(Path(report).read_text(encoding="utf-8"))
    spec = ExperimentSpec.from_dict(report["spec"])
    return run_protocol(ds, spec, report["label"])


def _cell(mean: float, std: float) -> str:
    return f"{mean:.3f}±{std:.3f}"


def format_table(reports: Sequence[RunReport], title: str = "", columns: bool = False) -> str:
    """Plain aligned table, one row per report; ``columns=True`` puts reports in columns instead."""
    aggs = [r.aggregate for r in reports]
    if columns:
        header = ["Metric", *[r.label for r in reports]]
        rows = [
            ["AUC-ROC", *[_cell(a.auc_roc_mean, a.auc_roc_std) for a in aggs]],
            ["AUC-PR", *[_cell(a.auc_pr_mean, a.auc_pr_std) for a in aggs]],
        ]
    else:
        header = ["Variant", "AUC-ROC", "AUC-PR"]
        rows = [
            [r.label, _cell(a.auc_roc_mean, a.auc_roc_std), _cell(a.auc_pr_mean, a.auc_pr_std)]
            for r, a in zip(reports, aggs)
        ]
    widths = [max(len(row[i]) for row in [header, *rows]) for i in range(len(header))]
    lines = [title] if title else []
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows)
    return "\n".join(lines) + "\n"


def default_output_dir(command: str, dataset: str | Path) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "results"))
    return root / f"{command}-{Path(dataset).stem}"


def write_reports(reports: Sequence[RunReport], out_dir: str | Path, title: str = "", columns: bool = False) -> Path:
    """``results.jsonl`` (metric records), ``report.json`` (full replayable reports), ``table.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.jsonl", "w", encoding="utf-8") as fh:
        for rep in reports:
            for rec in rep.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.write(json.dumps({"label": rep.label, "aggregate": asdict(rep.aggregate)}, sort_keys=True) + "\n")
    payload = [rep.to_dict() for rep in reports]
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    (out / "table.txt").write_text(format_table(reports, title, columns), encoding="utf-8")
    return out


def curve_points(reports: Sequence[RunReport]) -> list[dict[str, float]]:
    return [
        {"n_labeled": r.spec.n_labeled, **{k: v for k, v in asdict(r.aggregate).items()}}
        for r in reports
    ]


def mean_metric(reports: Sequence[RunReport], metric: str = "auc_pr") -> list[float]:
    return [float(np.mean([getattr(res, metric) for res in r.results])) for r in reports]
