"""Anomaly score generator: an MLP over ``[r, h]`` with the residual length injected into every layer.

Each layer computes ``z_k = f(z_{k-1} @ W_k + b_k + e * w_k)`` where ``w_k`` has one
entry per output unit. The last layer is linear and one unit wide.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .encoder import Encoding
from .layers import Dense, activate, activation_grad
from .numerics import ParamSet, init_glorot

FACTORS = ("h", "r", "e")
ERROR_MODES = ("inject", "first_layer", "none")


def normalize_factors(factors: Sequence[str] | str) -> tuple[str, ...]:
    """Canonical ordered factor tuple from e.g. ``"h,e"`` or ``["e", "h"]``."""
    if isinstance(factors, str):
        factors = [f.strip() for f in factors.split(",") if f.strip()]
    unknown = set(factors) - set(FACTORS)
    if unknown:
        raise ValueError(f"unknown factors {sorted(unknown)}; choose from h, r, e")
    out = tuple(f for f in FACTORS if f in factors)
    if not out:
        raise ValueError("factor mask must not be empty")
    return out


def input_width(input_dim: int, latent_dim: int, factors: Sequence[str], error_mode: str) -> int:
    width = 0
    if "r" in factors:
        width += input_dim
    if "h" in factors:
        width += latent_dim
    if "e" in factors and error_mode == "first_layer":
        width += 1
    return width


@dataclass
class ScoreNetParams:
    layers: list[Dense]
    inject: list[np.ndarray] | None = None
    factors: tuple[str, ...] = FACTORS
    error_mode: str = "inject"

    def __post_init__(self) -> None:
        if self.error_mode not in ERROR_MODES:
            raise ValueError(f"unknown error mode {self.error_mode!r}")
        if self.layers[-1].fan_out != 1:
            raise ValueError("final score layer must have a single output")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.fan_out != nxt.fan_in:
                raise ValueError(f"score layers do not chain: {prev.fan_out} -> {nxt.fan_in}")
        if self.error_mode == "inject":
            if self.inject is None or len(self.inject) != len(self.layers):
                raise ValueError("inject mode needs one injection vector per layer")
            for layer, w in zip(self.layers, self.inject):
                if w.shape != (layer.fan_out,):
                    raise ValueError(f"injection vector shape {w.shape} != ({layer.fan_out},)")
        elif self.inject is not None:
            raise ValueError(f"error mode {self.error_mode!r} carries no injection weights")

    @property
    def input_width(self) -> int:
        return self.layers[0].fan_in

    @classmethod
    def init(
        cls,
        input_dim: int,
        latent_dim: int,
        rng: np.random.Generator,
        hidden: Sequence[int] = (64, 32),
        factors: Sequence[str] = FACTORS,
        error_mode: str = "inject",
        activation: str = "relu",
        width: int | None = None,
    ) -> "ScoreNetParams":
        """Glorot-initialized scorer.

        ``width`` overrides the first-layer input width (used when the scorer is fed
        something other than the three factors).
        """
        factors = normalize_factors(factors)
        if "e" not in factors and error_mode != "none":
            error_mode = "none"
        if width is None:
            width = input_width(input_dim, latent_dim, factors, error_mode)
        widths = [width, *hidden, 1]
        layers = [
            Dense.glorot(widths[i], widths[i + 1], rng, activation if i < len(widths) - 2 else "linear")
            for i in range(len(widths) - 1)
        ]
        inject = None
        if error_mode == "inject":
            inject = [init_glorot(1, w, rng)[0] for w in widths[1:]]
        return cls(layers, inject, factors, error_mode)

    def params(self) -> ParamSet:
        out: ParamSet = {}
        for i, layer in enumerate(self.layers):
            out[f"sg.l{i}.W"] = layer.W
            out[f"sg.l{i}.b"] = layer.b
            if self.inject is not None:
                out[f"sg.l{i}.we"] = self.inject[i]
        return out

    def copy(self) -> "ScoreNetParams":
        inject = None if self.inject is None else [w.copy() for w in self.inject]
        return ScoreNetParams([l.copy() for l in self.layers], inject, self.factors, self.error_mode)


def assemble_input(h: np.ndarray, r: np.ndarray, e: np.ndarray, params: ScoreNetParams) -> np.ndarray:
    """First-layer input ``[r, h]`` (plus an ``e`` column in first-layer mode), masked by factors."""
    parts = []
    if "r" in params.factors:
        parts.append(r)
    if "h" in params.factors:
        parts.append(h)
    if "e" in params.factors and params.error_mode == "first_layer":
        parts.append(e[:, None])
    if not parts:
        return np.zeros((h.shape[0], 0))
    return np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0]


@dataclass
class ScoreCache:
    z0: np.ndarray
    e: np.ndarray | None
    steps: list


def score_forward(z0: np.ndarray, e: np.ndarray | None, params: ScoreNetParams) -> tuple[np.ndarray, ScoreCache]:
    if z0.ndim != 2 or z0.shape[1] != params.input_width:
        raise ValueError(f"score input width {z0.shape} does not match scorer width {params.input_width}")
    steps = []
    a = z0
    inject = params.inject if params.error_mode == "inject" else None
    if inject is not None and e is None:
        raise ValueError("injection scorer needs the residual length e")
    for k, layer in enumerate(params.layers):
        z = a @ layer.W + layer.b
        if inject is not None:
            z = z + e[:, None] * inject[k]
        out = activate(z, layer.activation)
        steps.append((a, z, out))
        a = out
    return a[:, 0], ScoreCache(z0, e, steps)


def score_backward(
    upstream: np.ndarray, cache: ScoreCache, params: ScoreNetParams
) -> tuple[ParamSet, np.ndarray, np.ndarray]:
    """Returns parameter grads, grad w.r.t. the first-layer input, and grad w.r.t. ``e``.

    The ``e`` gradient sums the contributions of every injection term.
    """
    g = np.asarray(upstream, dtype=np.float64).reshape(-1, 1)
    n = g.shape[0]
    grads: ParamSet = {}
    g_e = np.zeros(n)
    inject = params.inject if params.error_mode == "inject" else None
    for k in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[k]
        a_in, z, out = cache.steps[k]
        gz = activation_grad(z, out, g, layer.activation)
        grads[f"sg.l{k}.W"] = a_in.T @ gz
        grads[f"sg.l{k}.b"] = gz.sum(axis=0)
        if inject is not None:
            grads[f"sg.l{k}.we"] = cache.e @ gz
            g_e += gz @ inject[k]
        g = gz @ layer.W.T
    return grads, g, g_e


def _split_input_grad(g_z0: np.ndarray, params: ScoreNetParams, m: int, d: int):
    g_r = g_h = None
    g_e = np.zeros(g_z0.shape[0])
    col = 0
    if "r" in params.factors:
        g_r = g_z0[:, col:col + m]
        col += m
    if "h" in params.factors:
        g_h = g_z0[:, col:col + d]
        col += d
    if "e" in params.factors and params.error_mode == "first_layer":
        g_e = g_e + g_z0[:, col]
    return g_h, g_r, g_e


def factor_grads(
    upstream: np.ndarray, cache: ScoreCache, params: ScoreNetParams, m: int, d: int
) -> tuple[ParamSet, np.ndarray | None, np.ndarray | None, np.ndarray]:
    """Backprop a score gradient down to ``(h, r, e)``; masked-out factors get ``None``."""
    grads, g_z0, g_e_inject = score_backward(upstream, cache, params)
    g_h, g_r, g_e = _split_input_grad(g_z0, params, m, d)
    return grads, g_h, g_r, g_e + g_e_inject


def _encoding_batch(enc: Encoding) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    h = np.asarray(enc.h, dtype=np.float64)
    single = h.ndim == 1
    if single:
        return h[None, :], np.asarray(enc.r, dtype=np.float64)[None, :], np.array([float(enc.e)]), True
    return h, np.asarray(enc.r, dtype=np.float64), np.asarray(enc.e, dtype=np.float64), False


def score(enc: Encoding, params: ScoreNetParams) -> np.ndarray | float:
    """Score one encoding (returns a float) or a batch of them (returns a vector)."""
    h, r, e, single = _encoding_batch(enc)
    z0 = assemble_input(h, r, e, params)
    s, _ = score_forward(z0, e, params)
    return float(s[0]) if single else s


def score_first_layer_only_variant(enc: Encoding, params: ScoreNetParams) -> np.ndarray | float:
    """Score with ``e`` concatenated to ``[r, h]`` at the input and no per-layer injection."""
    if params.error_mode != "first_layer":
        raise ValueError("parameters were not built for the first-layer error variant")
    return score(enc, params)
