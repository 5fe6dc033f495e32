"""Objective terms and their gradients.

Batch terms are averaged over the batch rather than summed, so the learning rate
does not depend on batch size. Unlabeled samples enter with ``y = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_A0 = 5.0
DEFAULT_LAMBDA = 1.0


@dataclass(frozen=True)
class LossTerms:
    l_ae: float
    l_e: float
    l_d: float
    l_joint: float
    a0: float
    lam: float


def _labels(labels: np.ndarray, n: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.shape[0] != n:
        raise ValueError(f"{y.shape[0]} labels for {n} samples")
    if np.any((y != 0.0) & (y != 1.0)):
        raise ValueError("labels must be 0 or 1")
    return y


def loss_e(errors: np.ndarray, labels: np.ndarray, a0: float = DEFAULT_A0) -> tuple[float, np.ndarray]:
    """Pull residual lengths of normals down, push anomalies' above ``a0``.

    Per sample: ``(1 - y) * e + y * max(0, a0 - e)``.
    """
    e = np.asarray(errors, dtype=np.float64).reshape(-1)
    y = _labels(labels, e.shape[0])
    n = e.shape[0]
    inside = (a0 - e) > 0.0
    per = (1.0 - y) * e + y * np.where(inside, a0 - e, 0.0)
    grad = ((1.0 - y) - y * inside) / n
    return float(per.sum() / n), grad


def loss_d(scores: np.ndarray, labels: np.ndarray, a0: float = DEFAULT_A0) -> tuple[float, np.ndarray]:
    """Deviation loss: ``(1 - y) * |s| + y * max(0, a0 - s)``, subgradient 0 at ``s = 0``."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = _labels(labels, s.shape[0])
    n = s.shape[0]
    inside = (a0 - s) > 0.0
    per = (1.0 - y) * np.abs(s) + y * np.where(inside, a0 - s, 0.0)
    grad = ((1.0 - y) * np.sign(s) - y * inside) / n
    return float(per.sum() / n), grad


def loss_joint(
    scores: np.ndarray,
    errors: np.ndarray,
    labels: np.ndarray,
    a0: float = DEFAULT_A0,
    lam: float = DEFAULT_LAMBDA,
) -> tuple[LossTerms, np.ndarray, np.ndarray]:
    """``L_d + lam * L_e``.

    Returns the terms, the gradient on scores and the gradient on residual lengths
    coming from the ``L_e`` term only; the caller routes the latter into the encoder.
    """
    ld, g_s = loss_d(scores, labels, a0)
    le, g_e = loss_e(errors, labels, a0)
    terms = LossTerms(l_ae=0.0, l_e=le, l_d=ld, l_joint=ld + lam * le, a0=a0, lam=lam)
    return terms, g_s, lam * g_e


def loss_pretrain(residuals: np.ndarray) -> tuple[float, np.ndarray]:
    """Root mean square reconstruction error over a ``(n, m)`` batch of residuals.

    Returns the loss and its gradient w.r.t. the residuals (zero at a perfect fit).
    """
    res = np.asarray(residuals, dtype=np.float64)
    if res.ndim == 1:
        res = res[None, :]
    if res.size == 0:
        raise ValueError("loss_pretrain needs a non-empty batch")
    value = float(np.sqrt(np.mean(res * res)))
    if value == 0.0:
        return 0.0, np.zeros_like(res)
    return value, res / (res.size * value)
