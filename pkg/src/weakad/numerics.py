"""Dense array helpers, seeded RNG, Glorot init, Adam/SGD and a finite-difference checker.

Matrices are plain ``numpy.float64`` arrays. Parameter sets are ``dict[str, ndarray]``
so the optimizer and the gradient checker can walk them by name.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

ParamSet = dict[str, np.ndarray]


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """PCG64 generator; identical seeds give identical streams on every platform."""
    return np.random.Generator(np.random.PCG64(seed))


def split_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent child streams derived from one seed."""
    return [make_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"matmul produced non-finite entries for {a.shape} x {b.shape}")
    return out


def init_glorot(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform in [-s, s] with s = sqrt(6 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise ValueError(f"init_glorot needs positive dimensions, got ({rows}, {cols})")
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def _check_shapes(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
    if params.keys() != grads.keys():
        missing = set(params) ^ set(grads)
        raise ValueError(f"parameter/gradient name mismatch: {sorted(missing)}")
    for name, p in params.items():
        if p.shape != grads[name].shape:
            raise ValueError(f"shape mismatch for {name!r}: param {p.shape} vs grad {grads[name].shape}")


@dataclass
class OptimizerState:
    """Adam moments keyed like the parameter set.

    ``kind="sgd"`` ignores the moments and applies ``p -= lr * g``.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    kind: str = "adam"
    step: int = 0
    m: ParamSet = field(default_factory=dict)
    v: ParamSet = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray], **kwargs) -> "OptimizerState":
        state = cls(**kwargs)
        if state.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer kind {state.kind!r}")
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.items()}
        return state


def adam_step(params: ParamSet, grads: Mapping[str, np.ndarray], state: OptimizerState) -> None:
    """Update ``params`` in place and advance ``state.step`` by one."""
    _check_shapes(params, grads)
    _check_shapes(params, state.m)
    state.step += 1
    if state.kind == "sgd":
        for name, p in params.items():
            p -= state.lr * grads[name]
        return
    b1, b2 = state.beta1, state.beta2
    # bias corrections folded into the step size
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    step_size = state.lr * math.sqrt(corr2) / corr1
    eps_hat = state.eps * math.sqrt(corr2)
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= step_size * m / (np.sqrt(v) + eps_hat)


def finite_diff_grad(
    loss_fn: Callable[[ParamSet], float],
    params: ParamSet,
    epsilon: float = 1e-5,
) -> ParamSet:
    """Central differences of ``loss_fn`` w.r.t. every coordinate of ``params``.

    Parameters are perturbed in place and restored afterwards.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    grads: ParamSet = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = float(loss_fn(params))
            flat[i] = orig - epsilon
            f_minus = float(loss_fn(params))
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise FloatingPointError(
                    f"non-finite loss probing {name}[{tuple(int(j) for j in np.unravel_index(i, p.shape))}]"
                )
            gflat[i] = (f_plus - f_minus) / (2.0 * epsilon)
        grads[name] = g
    return grads


def max_relative_error(
    analytic: Mapping[str, np.ndarray],
    numeric: Mapping[str, np.ndarray],
    floor: float = 1e-6,
) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, floor) over all parameters."""
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
