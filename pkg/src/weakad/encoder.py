"""Autoencoder feature encoder.

A sample ``x`` is described by three factors taken from its reconstruction ``x_hat``:
the latent code ``h``, the unit residual direction ``r = (x_hat - x) / e`` and the
residual length ``e = ||x_hat - x||``. All functions accept a single vector or a
row-major batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .layers import Dense, stack_backward, stack_forward
from .numerics import ParamSet

# below this residual length the direction is undefined and reported as zero
RESIDUAL_EPS = 1e-12


def default_architecture(input_dim: int) -> tuple[list[int], int]:
    """Encoder hidden widths and latent width for an ``input_dim``-feature table."""
    hidden = math.ceil(input_dim / 2)
    latent = max(2, min(20, math.ceil(input_dim / 4)))
    return [hidden], latent


@dataclass
class AutoencoderParams:
    encoder: list[Dense]
    decoder: list[Dense]

    def __post_init__(self) -> None:
        if not self.encoder or not self.decoder:
            raise ValueError("encoder and decoder need at least one layer each")
        _check_chain(self.encoder, "encoder")
        _check_chain(self.decoder, "decoder")
        m = self.encoder[0].fan_in
        d = self.encoder[-1].fan_out
        if self.decoder[0].fan_in != d:
            raise ValueError(f"decoder input width {self.decoder[0].fan_in} != latent width {d}")
        if self.decoder[-1].fan_out != m:
            raise ValueError(f"decoder output width {self.decoder[-1].fan_out} != input width {m}")
        if d >= m:
            raise ValueError(f"latent width {d} must be smaller than input width {m}")

    @property
    def input_dim(self) -> int:
        return self.encoder[0].fan_in

    @property
    def latent_dim(self) -> int:
        return self.encoder[-1].fan_out

    @classmethod
    def init(
        cls,
        input_dim: int,
        rng: np.random.Generator,
        hidden: Sequence[int] | None = None,
        latent_dim: int | None = None,
        activation: str = "relu",
        code_activation: str = "linear",
        output_activation: str = "linear",
    ) -> "AutoencoderParams":
        """Glorot-initialized autoencoder; the decoder mirrors the encoder widths."""
        default_hidden, default_latent = default_architecture(input_dim)
        hidden = list(default_hidden if hidden is None else hidden)
        latent_dim = default_latent if latent_dim is None else latent_dim
        if latent_dim >= input_dim:
            raise ValueError(f"latent width {latent_dim} must be smaller than input width {input_dim}")
        widths = [input_dim, *hidden, latent_dim]
        encoder = [
            Dense.glorot(widths[i], widths[i + 1], rng, activation if i < len(widths) - 2 else code_activation)
            for i in range(len(widths) - 1)
        ]
        back = widths[::-1]
        decoder = [
            Dense.glorot(back[i], back[i + 1], rng, activation if i < len(back) - 2 else output_activation)
            for i in range(len(back) - 1)
        ]
        return cls(encoder, decoder)

    def params(self) -> ParamSet:
        out: ParamSet = {}
        for tag, layers in (("enc", self.encoder), ("dec", self.decoder)):
            for i, layer in enumerate(layers):
                out[f"ae.{tag}{i}.W"] = layer.W
                out[f"ae.{tag}{i}.b"] = layer.b
        return out

    def copy(self) -> "AutoencoderParams":
        return AutoencoderParams([l.copy() for l in self.encoder], [l.copy() for l in self.decoder])


def _check_chain(layers: list[Dense], what: str) -> None:
    for prev, nxt in zip(layers, layers[1:]):
        if prev.fan_out != nxt.fan_in:
            raise ValueError(f"{what} widths do not chain: {prev.fan_out} -> {nxt.fan_in}")


@dataclass
class Encoding:
    h: np.ndarray
    r: np.ndarray
    e: np.ndarray | float


@dataclass
class EncoderCache:
    x: np.ndarray
    enc: list
    dec: list
    h: np.ndarray
    x_hat: np.ndarray
    diff: np.ndarray
    e: np.ndarray
    r: np.ndarray
    valid: np.ndarray


def _as_batch(x: np.ndarray, width: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != width:
        raise ValueError(f"{what} expects width {width}, got shape {x.shape}")
    return x2, single


def encode(x: np.ndarray, params: AutoencoderParams) -> np.ndarray:
    xb, single = _as_batch(x, params.input_dim, "encode")
    h, _ = stack_forward(xb, params.encoder)
    return h[0] if single else h


def reconstruct(h: np.ndarray, params: AutoencoderParams) -> np.ndarray:
    hb, single = _as_batch(h, params.latent_dim, "reconstruct")
    x_hat, _ = stack_forward(hb, params.decoder)
    return x_hat[0] if single else x_hat


def encoding_forward(x: np.ndarray, params: AutoencoderParams) -> EncoderCache:
    """Batched forward pass keeping everything backprop needs."""
    xb, _ = _as_batch(x, params.input_dim, "encoding_forward")
    h, enc_cache = stack_forward(xb, params.encoder)
    x_hat, dec_cache = stack_forward(h, params.decoder)
    diff = x_hat - xb
    e = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    valid = e > RESIDUAL_EPS
    safe = np.where(valid, e, 1.0)
    r = np.where(valid[:, None], diff / safe[:, None], 0.0)
    return EncoderCache(xb, enc_cache, dec_cache, h, x_hat, diff, e, r, valid)


def three_factors(x: np.ndarray, params: AutoencoderParams) -> Encoding:
    cache = encoding_forward(x, params)
    if np.asarray(x).ndim == 1:
        return Encoding(cache.h[0], cache.r[0], float(cache.e[0]))
    return Encoding(cache.h, cache.r, cache.e)


def backprop_through_encoding(
    cache: EncoderCache,
    params: AutoencoderParams,
    grad_h: np.ndarray | None = None,
    grad_r: np.ndarray | None = None,
    grad_e: np.ndarray | None = None,
    grad_x_hat: np.ndarray | None = None,
) -> tuple[ParamSet, np.ndarray]:
    """Gradients of a scalar loss w.r.t. the autoencoder parameters and the input.

    Rows whose residual is shorter than ``RESIDUAL_EPS`` contribute nothing through
    ``r`` or ``e``.
    """
    g_diff = np.zeros_like(cache.diff)
    inv_e = np.where(cache.valid, 1.0 / np.where(cache.valid, cache.e, 1.0), 0.0)
    if grad_e is not None:
        g_diff += (np.asarray(grad_e) * cache.valid)[:, None] * cache.r
    if grad_r is not None:
        proj = np.einsum("ij,ij->i", grad_r, cache.r)
        g_diff += (grad_r - cache.r * proj[:, None]) * inv_e[:, None]
    g_xhat = g_diff if grad_x_hat is None else g_diff + grad_x_hat
    g_h, dec_grads = stack_backward(g_xhat, params.decoder, cache.dec)
    if grad_h is not None:
        g_h = g_h + grad_h
    g_x, enc_grads = stack_backward(g_h, params.encoder, cache.enc)
    g_x = g_x - g_diff  # diff = x_hat - x

    grads: ParamSet = {}
    for tag, layer_grads in (("enc", enc_grads), ("dec", dec_grads)):
        for i, (dW, db) in enumerate(layer_grads):
            grads[f"ae.{tag}{i}.W"] = dW
            grads[f"ae.{tag}{i}.b"] = db
    return grads, g_x
