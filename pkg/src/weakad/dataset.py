"""CSV ingestion, preprocessing and the weak-supervision split.

Preprocessing follows a fixed order: mean-impute numeric gaps, one-hot encode
categorical columns, then min-max scale every resulting column to [0, 1]. Scaling
statistics come from the full table before any split, so test rows influence the
feature ranges.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .numerics import make_rng

log = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "?", "na", "n/a", "nan", "null", "none"})
CATEGORICAL_MISSING = "<missing>"
CACHE_MAGIC = b"WKADDS01"
DEFAULT_LABEL_NAMES = ("label", "class", "outlier", "anomaly", "y")


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str  # "numeric" | "categorical" | "label" | "ignore"


@dataclass
class Schema:
    """How to read a CSV: which column is the label and how its values map to {0, 1}.

    ``positive`` names the anomaly class value; when it is None label cells must
    already read as 0 or 1.
    """

    label: str | int | None = None
    positive: str | None = None
    categorical: list[str] = field(default_factory=list)
    numeric: list[str] = field(default_factory=list)
    ignore: list[str] = field(default_factory=list)
    header: bool = True
    delimiter: str = ","

    @classmethod
    def from_json(cls, path: str | Path) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown schema keys {sorted(unknown)} in {path}")
        return cls(**raw)


@dataclass
class RawTable:
    columns: list[ColumnSpec]
    data: dict[str, object]
    labels: list[str]
    label_name: str
    positive: str | None = None

    @property
    def n_rows(self) -> int:
        return len(self.labels)

    def n_missing(self) -> int:
        total = 0
        for col in self.columns:
            values = self.data[col.name]
            if col.kind == "numeric":
                total += int(np.isnan(values).sum())
            else:
                total += sum(v is None for v in values)
        return total


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in MISSING_TOKENS


def _parse_float(cell: str) -> float | None:
    if _is_missing(cell):
        return None
    try:
        value = float(cell)
    except ValueError:
        return None
    return value if np.isfinite(value) else None


def _looks_numeric(cells: Sequence[str]) -> bool:
    seen = False
    for cell in cells:
        if _is_missing(cell):
            continue
        try:
            float(cell)
        except ValueError:
            return False
        seen = True
    return seen


def load_csv(path: str | Path, schema: Schema | None = None) -> RawTable:
    """Parse a CSV into typed columns.

    Column kinds not fixed by ``schema`` are inferred: a column whose non-missing
    cells all parse as numbers is numeric, anything else categorical.
    """
    schema = schema or Schema()
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh, delimiter=schema.delimiter) if row]
    if not rows:
        raise DataError(f"{path}: empty file")
    if schema.header:
        names = [h.strip() for h in rows[0]]
        body = rows[1:]
        first_line = 2
    else:
        names = [f"c{i}" for i in range(len(rows[0]))]
        body = rows
        first_line = 1
    if not body:
        raise DataError(f"{path}: no data rows")
    width = len(names)
    for i, row in enumerate(body):
        if len(row) != width:
            raise DataError(f"{path}: row {i + first_line} has {len(row)} columns, expected {width}")

    label_idx = _label_index(names, schema)
    label_name = names[label_idx]
    labels = []
    for i, row in enumerate(body):
        cell = row[label_idx].strip()
        if _is_missing(cell):
            raise DataError(f"{path}: row {i + first_line} has no label")
        labels.append(cell)

    columns: list[ColumnSpec] = []
    data: dict[str, object] = {}
    for j, name in enumerate(names):
        if j == label_idx or name in schema.ignore:
            continue
        cells = [row[j] for row in body]
        if name in schema.categorical:
            kind = "categorical"
        elif name in schema.numeric or _looks_numeric(cells):
            kind = "numeric"
        else:
            kind = "categorical"
        columns.append(ColumnSpec(name, kind))
        if kind == "numeric":
            data[name] = np.array([np.nan if (v := _parse_float(c)) is None else v for c in cells])
        else:
            data[name] = [None if _is_missing(c) else c for c in cells]
    return RawTable(columns, data, labels, label_name, schema.positive)


def _label_index(names: list[str], schema: Schema) -> int:
    if isinstance(schema.label, int):
        if not -len(names) <= schema.label < len(names):
            raise DataError(f"label column index {schema.label} out of range")
        return schema.label % len(names)
    if isinstance(schema.label, str):
        if schema.label not in names:
            raise DataError(f"label column {schema.label!r} not found in header {names}")
        return names.index(schema.label)
    lowered = [n.lower() for n in names]
    for cand in DEFAULT_LABEL_NAMES:
        if cand in lowered:
            return lowered.index(cand)
    return len(names) - 1


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str]

    def __post_init__(self) -> None:
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise DataError(f"features {self.features.shape} do not match {self.labels.shape[0]} labels")
        if len(self.feature_names) != self.features.shape[1]:
            raise DataError("one feature name per column required")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_anomalies(self) -> int:
        return int(self.labels.sum())

    def to_raw(self) -> RawTable:
        cols = [ColumnSpec(n, "numeric") for n in self.feature_names]
        data = {n: self.features[:, j].copy() for j, n in enumerate(self.feature_names)}
        return RawTable(cols, data, [str(int(v)) for v in self.labels], "label")

    def save(self, path: str | Path) -> None:
        """Flat binary cache: magic, N, D, row-major float64 features, uint8 labels, names."""
        names = json.dumps(self.feature_names).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CACHE_MAGIC)
            fh.write(struct.pack("<QQ", self.n_samples, self.n_features))
            fh.write(self.features.astype("<f8").tobytes())
            fh.write(self.labels.astype(np.uint8).tobytes())
            fh.write(struct.pack("<Q", len(names)))
            fh.write(names)

    @classmethod
    def load(cls, path: str | Path) -> "Dataset":
        blob = Path(path).read_bytes()
        if not blob.startswith(CACHE_MAGIC):
            raise DataError(f"{path}: not a dataset cache")
        try:
            off = len(CACHE_MAGIC)
            n, d = struct.unpack_from("<QQ", blob, off)
            off += 16
            feats = np.frombuffer(blob, dtype="<f8", count=n * d, offset=off).reshape(n, d).astype(np.float64)
            off += 8 * n * d
            labels = np.frombuffer(blob, dtype=np.uint8, count=n, offset=off).astype(np.int8)
            off += n
            (name_len,) = struct.unpack_from("<Q", blob, off)
            off += 8
            if off + name_len != len(blob):
                raise ValueError("trailing or missing bytes")
            names = json.loads(blob[off:].decode("utf-8"))
        except (struct.error, ValueError) as exc:
            raise DataError(f"{path}: corrupt dataset cache ({exc})") from None
        return cls(feats, labels, names)


def is_cache(path: str | Path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(len(CACHE_MAGIC)) == CACHE_MAGIC


def _map_labels(raw: RawTable) -> np.ndarray:
    if raw.positive is not None:
        return np.array([1 if v == raw.positive else 0 for v in raw.labels], dtype=np.int8)
    out = np.empty(raw.n_rows, dtype=np.int8)
    for i, v in enumerate(raw.labels):
        try:
            num = float(v)
        except ValueError:
            num = None
        if num not in (0.0, 1.0):
            raise DataError(f"label {v!r} in row {i} is not 0/1; set a positive class value")
        out[i] = int(num)
    return out


def preprocess(raw: RawTable) -> Dataset:
    labels = _map_labels(raw)
    blocks: list[np.ndarray] = []
    names: list[str] = []
    for col in raw.columns:
        values = raw.data[col.name]
        if col.kind == "numeric":
            arr = np.array(values, dtype=np.float64)
            missing = np.isnan(arr)
            if missing.any():
                arr[missing] = arr[~missing].mean() if (~missing).any() else 0.0
            blocks.append(arr[:, None])
            names.append(col.name)
        elif col.kind == "categorical":
            cats = [CATEGORICAL_MISSING if v is None else v for v in values]
            levels = sorted(set(cats))
            index = {lvl: k for k, lvl in enumerate(levels)}
            onehot = np.zeros((len(cats), len(levels)))
            onehot[np.arange(len(cats)), [index[c] for c in cats]] = 1.0
            blocks.append(onehot)
            names.extend(f"{col.name}={lvl}" for lvl in levels)
        else:
            continue
    if blocks:
        feats = np.concatenate(blocks, axis=1)
    else:
        feats = np.zeros((raw.n_rows, 0))
    lo = feats.min(axis=0) if feats.size else np.zeros(feats.shape[1])
    span = (feats.max(axis=0) - lo) if feats.size else np.zeros(feats.shape[1])
    scaled = np.where(span > 0, (feats - lo) / np.where(span > 0, span, 1.0), 0.0)
    return Dataset(scaled, labels, names)


@dataclass
class WeakLabelSplit:
    train_unlabeled: np.ndarray
    train_labeled_anomalies: np.ndarray
    test: np.ndarray
    contamination_rate: float
    n_labeled: int
    seed: int | None = None
    n_contaminants: int = 0

    @property
    def realized_contamination(self) -> float:
        n = len(self.train_unlabeled)
        return self.n_contaminants / n if n else 0.0


def make_weak_split(
    ds: Dataset,
    n_labeled: int = 30,
    contamination: float = 0.02,
    test_fraction: float = 0.2,
    rng: np.random.Generator | int = 0,
) -> WeakLabelSplit:
    """Stratified train/test split plus the labeled-anomaly and contaminated-unlabeled pools.

    Training anomalies are used in order: first ``n_labeled`` become the labeled set,
    the next ones are hidden in the unlabeled pool until they make up ``contamination``
    of it; any remaining training anomalies are dropped.
    """
    if not 0.0 <= contamination < 1.0:
        raise ValueError("contamination must lie in [0, 1)")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    if n_labeled < 0:
        raise ValueError("n_labeled must be non-negative")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    gen = make_rng(int(rng)) if seed is not None else rng

    anomalies = np.flatnonzero(ds.labels == 1)
    normals = np.flatnonzero(ds.labels == 0)
    if anomalies.size == 0:
        raise DataError("dataset has no anomalies")
    anomalies = gen.permutation(anomalies)
    normals = gen.permutation(normals)
    n_test_a = int(round(test_fraction * anomalies.size))
    n_test_n = int(round(test_fraction * normals.size))
    test = np.concatenate([anomalies[:n_test_a], normals[:n_test_n]])
    train_anom = anomalies[n_test_a:]
    train_norm = normals[n_test_n:]

    n_lab = min(n_labeled, train_anom.size)
    if n_lab < n_labeled:
        warnings.warn(f"only {train_anom.size} training anomalies; labeling {n_lab} instead of {n_labeled}",
                      stacklevel=2)
    labeled = train_anom[:n_lab]
    spare = train_anom[n_lab:]

    wanted = int(round(contamination * train_norm.size / (1.0 - contamination)))
    n_cont = min(wanted, spare.size)
    if n_cont < wanted:
        warnings.warn(f"only {spare.size} spare anomalies for contamination; wanted {wanted}", stacklevel=2)
    unlabeled = np.concatenate([train_norm, spare[:n_cont]])
    return WeakLabelSplit(
        train_unlabeled=np.sort(unlabeled),
        train_labeled_anomalies=np.sort(labeled),
        test=np.sort(test),
        contamination_rate=contamination,
        n_labeled=n_lab,
        seed=None if seed is None else int(seed),
        n_contaminants=n_cont,
    )
