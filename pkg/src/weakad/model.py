"""The full detector: autoencoder encoding feeding the score generator, trained jointly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import AutoencoderParams, backprop_through_encoding, encoding_forward
from .losses import LossTerms, loss_joint, loss_pretrain
from .numerics import ParamSet
from .scorer import ScoreNetParams, assemble_input, factor_grads, score_backward, score_forward

INPUT_MODES = ("factors", "reconstruction")


@dataclass
class Detector:
    ae: AutoencoderParams
    scorer: ScoreNetParams
    input_mode: str = "factors"

    def __post_init__(self) -> None:
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"unknown input mode {self.input_mode!r}")
        if self.input_mode == "reconstruction":
            if self.scorer.input_width != self.ae.input_dim or self.scorer.error_mode != "none":
                raise ValueError("reconstruction-fed scorer must be a plain MLP over the input width")

    @property
    def input_dim(self) -> int:
        return self.ae.input_dim

    def params(self) -> ParamSet:
        return {**self.ae.params(), **self.scorer.params()}

    def copy(self) -> "Detector":
        return Detector(self.ae.copy(), self.scorer.copy(), self.input_mode)

    def _forward(self, x: np.ndarray):
        enc = encoding_forward(x, self.ae)
        if self.input_mode == "reconstruction":
            s, sc = score_forward(enc.x_hat, None, self.scorer)
        else:
            z0 = assemble_input(enc.h, enc.r, enc.e, self.scorer)
            s, sc = score_forward(z0, enc.e, self.scorer)
        return s, enc, sc

    def scores(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected features of width {self.input_dim}, got shape {x.shape}")
        return self._forward(x)[0]

    def joint_loss_and_grads(
        self,
        x: np.ndarray,
        y: np.ndarray,
        a0: float,
        lam: float,
    ) -> tuple[LossTerms, ParamSet]:
        """Deviation loss on scores plus ``lam`` times the margin loss on residual lengths.

        The margin term only reaches autoencoder parameters; the deviation term reaches both.
        """
        s, enc, sc = self._forward(x)
        terms, g_s, g_e_margin = loss_joint(s, enc.e, y, a0, lam)
        if self.input_mode == "reconstruction":
            sg_grads, g_z0, _ = score_backward(g_s, sc, self.scorer)
            ae_grads, _ = backprop_through_encoding(enc, self.ae, grad_e=g_e_margin, grad_x_hat=g_z0)
        else:
            sg_grads, g_h, g_r, g_e = factor_grads(g_s, sc, self.scorer, self.ae.input_dim, self.ae.latent_dim)
            ae_grads, _ = backprop_through_encoding(enc, self.ae, grad_h=g_h, grad_r=g_r, grad_e=g_e + g_e_margin)
        return terms, {**ae_grads, **sg_grads}


def pretrain_loss_and_grads(ae: AutoencoderParams, x: np.ndarray) -> tuple[float, ParamSet]:
    """RMSE reconstruction loss and its autoencoder gradients."""
    enc = encoding_forward(x, ae)
    value, g_res = loss_pretrain(enc.diff)
    grads, _ = backprop_through_encoding(enc, ae, grad_x_hat=g_res)
    return value, grads
