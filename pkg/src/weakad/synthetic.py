"""Synthetic tabular data on a curved low-dimensional manifold with three kinds of anomaly.

Normal rows are ``embed(t) + noise`` where ``t`` is an intrinsic coordinate in
[-1, 1]^k that never enters one corner of the cube, ``embed`` is a fixed random
two-layer tanh map into R^m, and the noise lives only in the first half of the
features. Anomalies come in three equal groups:

* ``distance``: pushed off the manifold by a long offset within the noisy features;
* ``coordinate``: on the manifold, but with intrinsic coordinates in the empty corner;
* ``direction``: offset along one fixed direction of the noise-free half of the features.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .dataset import ColumnSpec, Dataset, RawTable, preprocess
from .numerics import make_rng

KINDS = ("distance", "coordinate", "direction")


def _embedding(intrinsic_dim: int, dim: int, rng: np.random.Generator, curvature: float, spread: float, width: int = 16):
    a1 = rng.normal(scale=curvature, size=(intrinsic_dim, width))
    b1 = rng.uniform(-0.5, 0.5, size=width)
    a2 = rng.normal(scale=1.0 / np.sqrt(width), size=(width, dim))
    # rescale so the mean per-feature spread over the cube is ``spread`` whatever the curvature
    probe = np.tanh(rng.uniform(-1.0, 1.0, size=(2000, intrinsic_dim)) @ a1 + b1) @ a2
    a2 *= spread / probe.std(axis=0).mean()

    def embed(t: np.ndarray) -> np.ndarray:
        return np.tanh(t @ a1 + b1) @ a2

    return embed


def _in_corner(t: np.ndarray, corner: float) -> np.ndarray:
    return (t[:, 0] > corner) & (t[:, 1] > corner)


def _sample_coords(n: int, k: int, corner: float, inside: bool, rng: np.random.Generator) -> np.ndarray:
    if inside:
        t = rng.uniform(-1.0, 1.0, size=(n, k))
        t[:, :2] = rng.uniform(corner, 1.0, size=(n, 2))
        return t
    out = np.empty((0, k))
    while out.shape[0] < n:
        t = rng.uniform(-1.0, 1.0, size=(2 * n, k))
        out = np.vstack([out, t[~_in_corner(t, corner)]])
    return out[:n]


def manifold_arrays(
    n_normal: int = 5000,
    n_anomaly: int = 250,
    dim: int = 20,
    intrinsic_dim: int = 3,
    noise: float = 0.03,
    curvature: float = 0.3,
    spread: float = 0.5,
    corner: float = 0.5,
    offset: tuple[float, float] = (1.0, 2.0),
    quiet_offset: tuple[float, float] = (0.2, 0.4),
    jitter: float = 0.3,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Raw (unscaled) features, labels and the anomaly kind per row (``""`` for normals)."""
    if dim < 4 or not 2 <= intrinsic_dim < dim:
        raise ValueError("need dim >= 4 and 2 <= intrinsic_dim < dim")
    rng = make_rng(seed)
    embed = _embedding(intrinsic_dim, dim, rng, curvature, spread)
    noisy = dim // 2

    def noise_rows(n: int) -> np.ndarray:
        eps = np.zeros((n, dim))
        eps[:, :noisy] = rng.normal(scale=noise, size=(n, noisy))
        return eps

    def on_manifold(n: int, inside: bool = False) -> np.ndarray:
        return embed(_sample_coords(n, intrinsic_dim, corner, inside, rng))

    normals = on_manifold(n_normal) + noise_rows(n_normal)

    counts = [n_anomaly // 3 + (1 if i < n_anomaly % 3 else 0) for i in range(3)]
    groups = []
    # long offsets along the noisy features: ordinary direction, unusual length
    direction = np.zeros((counts[0], dim))
    direction[:, :noisy] = rng.normal(size=(counts[0], noisy))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    groups.append(on_manifold(counts[0]) + noise_rows(counts[0]) + direction * rng.uniform(*offset, size=(counts[0], 1)))
    # ordinary residuals at intrinsic coordinates normals never take
    groups.append(on_manifold(counts[1], inside=True) + noise_rows(counts[1]))
    # one abnormal residual direction, jittered, confined to the quiet features
    fault = rng.normal(size=dim - noisy)
    fault /= np.linalg.norm(fault)
    quiet = fault + rng.normal(scale=jitter / np.sqrt(dim - noisy), size=(counts[2], dim - noisy))
    quiet /= np.linalg.norm(quiet, axis=1, keepdims=True)
    shifted = np.zeros((counts[2], dim))
    shifted[:, noisy:] = quiet * rng.uniform(*quiet_offset, size=(counts[2], 1))
    groups.append(on_manifold(counts[2]) + noise_rows(counts[2]) + shifted)

    feats = np.vstack([normals, *groups])
    labels = np.r_[np.zeros(n_normal, dtype=np.int8), np.ones(n_anomaly, dtype=np.int8)]
    kinds = np.array([""] * n_normal + [k for k, c in zip(KINDS, counts) for _ in range(c)])
    order = rng.permutation(feats.shape[0])
    return feats[order], labels[order], kinds[order]


def manifold_raw_table(**kwargs) -> RawTable:
    feats, labels, _ = manifold_arrays(**kwargs)
    names = [f"x{j}" for j in range(feats.shape[1])]
    data = {n: feats[:, j].copy() for j, n in enumerate(names)}
    return RawTable([ColumnSpec(n, "numeric") for n in names], data, [str(int(v)) for v in labels], "label")


def manifold_dataset(**kwargs) -> Dataset:
    """The synthetic table pushed through the standard preprocessing."""
    return preprocess(manifold_raw_table(**kwargs))


def write_csv(path: str | Path, **kwargs) -> None:
    feats, labels, _ = manifold_arrays(**kwargs)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(feats.shape[1])] + ["label"])
        for row, y in zip(feats, labels):
            w.writerow([repr(float(v)) for v in row] + [int(y)])
