"""Fully connected layers with cached forward passes and manual backprop.

Row-major batches: an input of shape ``(n, fan_in)`` maps to ``(n, fan_out)`` via
``x @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import init_glorot

ACTIVATIONS = ("relu", "linear", "tanh")


def activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "linear":
        return z
    if kind == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(z: np.ndarray, a: np.ndarray, upstream: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return upstream * (z > 0.0)
    if kind == "linear":
        return upstream
    if kind == "tanh":
        return upstream * (1.0 - a * a)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class Dense:
    W: np.ndarray
    b: np.ndarray
    activation: str = "relu"

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ValueError(f"bias shape {self.b.shape} does not fit weight shape {self.W.shape}")

    @property
    def fan_in(self) -> int:
        return self.W.shape[0]

    @property
    def fan_out(self) -> int:
        return self.W.shape[1]

    @classmethod
    def glorot(cls, fan_in: int, fan_out: int, rng: np.random.Generator, activation: str = "relu") -> "Dense":
        if fan_in == 0:
            # a layer fed by an empty input still needs a weight block to concatenate against
            W = np.zeros((0, fan_out))
        else:
            W = init_glorot(fan_in, fan_out, rng)
        return cls(W, np.zeros(fan_out), activation)

    @classmethod
    def zeros(cls, fan_in: int, fan_out: int, activation: str = "relu") -> "Dense":
        return cls(np.zeros((fan_in, fan_out)), np.zeros(fan_out), activation)

    def copy(self) -> "Dense":
        return Dense(self.W.copy(), self.b.copy(), self.activation)


def stack_forward(x: np.ndarray, layers: list[Dense]) -> tuple[np.ndarray, list]:
    """Run ``x`` through ``layers``; the cache holds (input, preactivation, output) per layer."""
    cache = []
    a = x
    for layer in layers:
        z = a @ layer.W + layer.b
        out = activate(z, layer.activation)
        cache.append((a, z, out))
        a = out
    return a, cache


def stack_backward(
    grad_out: np.ndarray, layers: list[Dense], cache: list
) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Return the input gradient and per-layer ``(dW, db)`` in layer order."""
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)  # type: ignore[list-item]
    g = grad_out
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        a_in, z, out = cache[i]
        gz = activation_grad(z, out, g, layer.activation)
        grads[i] = (a_in.T @ gz, gz.sum(axis=0))
        g = gz @ layer.W.T
    return g, grads
