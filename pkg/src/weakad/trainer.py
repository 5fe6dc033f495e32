"""Two-stage training.

Stage 1 fits the autoencoder alone on the unlabeled pool with an RMSE loss. Stage 2
loads those weights, attaches a freshly initialized scorer and optimizes everything
on balanced batches: half unlabeled rows (labeled 0), half labeled anomalies drawn
with replacement. Both stages stop at an epoch cap or when the epoch-mean training
loss stops improving.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np

from .dataset import WeakLabelSplit
from .encoder import AutoencoderParams
from .losses import DEFAULT_A0, DEFAULT_LAMBDA
from .model import Detector, pretrain_loss_and_grads
from .numerics import OptimizerState, adam_step, make_rng
from .scorer import ScoreNetParams, normalize_factors
from .serialization import load_checkpoint, model_meta, save_checkpoint

log = logging.getLogger(__name__)

VARIANTS: dict[str, dict[str, bool]] = {
    "proposed": {},
    "no-pretrain": {"no_pretrain": True},
    "no-le-term": {"no_le_term": True},
    "first-layer-e": {"first_layer_e_only": True},
    "reconstruction-input": {"reconstruction_input": True},
}


class TrainingDivergence(RuntimeError):
    def __init__(self, stage: str, epoch: int, detail: str = "non-finite loss"):
        super().__init__(f"training diverged in stage {stage} at epoch {epoch}: {detail}")
        self.stage = stage
        self.epoch = epoch
        self.run_index: int | None = None


@dataclass
class TrainConfig:
    a0: float = DEFAULT_A0
    lam: float = DEFAULT_LAMBDA
    batch_size: int = 256
    stage1_epochs: int = 100
    stage2_epochs: int = 200
    lr_pretrain: float = 1e-3
    lr_joint: float = 1e-4
    optimizer: str = "adam"
    patience: int = 10
    min_delta: float = 1e-5
    seed: int = 0
    factors: tuple[str, ...] = ("h", "r", "e")
    no_pretrain: bool = False
    no_le_term: bool = False
    first_layer_e_only: bool = False
    reconstruction_input: bool = False
    encoder_hidden: tuple[int, ...] | None = None
    latent_dim: int | None = None
    scorer_hidden: tuple[int, ...] = (64, 32)
    code_activation: str = "linear"

    def __post_init__(self) -> None:
        self.factors = normalize_factors(self.factors)
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError(f"batch_size must be even and >= 2, got {self.batch_size}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.encoder_hidden is not None:
            self.encoder_hidden = tuple(self.encoder_hidden)
        self.scorer_hidden = tuple(self.scorer_hidden)

    def with_variant(self, name: str) -> "TrainConfig":
        if name not in VARIANTS:
            raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
        return replace(self, **VARIANTS[name])

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in raw.items() if k in names})


@dataclass
class BalancedBatch:
    unlabeled: np.ndarray
    anomalies: np.ndarray

    def indices(self) -> np.ndarray:
        return np.concatenate([self.unlabeled, self.anomalies])

    def labels(self) -> np.ndarray:
        return np.r_[np.zeros(self.unlabeled.size), np.ones(self.anomalies.size)]


def _require_labeled(split: WeakLabelSplit) -> None:
    if split.train_labeled_anomalies.size == 0:
        raise ValueError("no labeled anomalies: the label-free setting is not supported")


def sample_balanced_batch(split: WeakLabelSplit, batch_size: int, rng: np.random.Generator) -> BalancedBatch:
    """One batch: ``batch_size / 2`` distinct unlabeled rows and as many anomaly draws with replacement."""
    _require_labeled(split)
    if batch_size < 2 or batch_size % 2:
        raise ValueError("batch_size must be even")
    half = batch_size // 2
    pool = split.train_unlabeled
    unl = rng.choice(pool, size=half, replace=pool.size < half)
    anom = rng.choice(split.train_labeled_anomalies, size=half, replace=True)
    return BalancedBatch(unl, anom)


def iter_balanced_batches(split: WeakLabelSplit, batch_size: int, rng: np.random.Generator) -> Iterator[BalancedBatch]:
    """One epoch: a pass over the unlabeled pool in half-batches.

    A trailing chunk shorter than a half-batch is skipped; the next epoch's shuffle
    covers it.
    """
    _require_labeled(split)
    half = batch_size // 2
    pool = split.train_unlabeled
    if pool.size < half:
        yield sample_balanced_batch(split, batch_size, rng)
        return
    perm = rng.permutation(pool)
    for start in range(0, pool.size - half + 1, half):
        anom = rng.choice(split.train_labeled_anomalies, size=half, replace=True)
        yield BalancedBatch(perm[start:start + half], anom)


class _Plateau:
    def __init__(self, patience: int, min_delta: float):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.stale = 0

    def update(self, loss: float) -> bool:
        if self.best - loss >= self.min_delta:
            self.best = loss
            self.stale = 0
        else:
            self.stale += 1
        return self.patience > 0 and self.stale >= self.patience

    def state(self) -> dict[str, float]:
        return {"best": self.best if math.isfinite(self.best) else None, "stale": self.stale}

    def restore(self, raw: dict[str, Any]) -> None:
        self.best = math.inf if raw["best"] is None else raw["best"]
        self.stale = raw["stale"]


def init_autoencoder(input_dim: int, cfg: TrainConfig, rng: np.random.Generator) -> AutoencoderParams:
    return AutoencoderParams.init(input_dim, rng, hidden=cfg.encoder_hidden, latent_dim=cfg.latent_dim,
                                  code_activation=cfg.code_activation)


def init_detector(ae: AutoencoderParams, cfg: TrainConfig, rng: np.random.Generator) -> Detector:
    if cfg.reconstruction_input:
        scorer = ScoreNetParams.init(ae.input_dim, ae.latent_dim, rng, cfg.scorer_hidden, factors=cfg.factors,
                                     error_mode="none", width=ae.input_dim)
        return Detector(ae, scorer, "reconstruction")
    mode = "first_layer" if cfg.first_layer_e_only else "inject"
    scorer = ScoreNetParams.init(ae.input_dim, ae.latent_dim, rng, cfg.scorer_hidden, factors=cfg.factors,
                                 error_mode=mode)
    return Detector(ae, scorer)


def _restore(params: dict[str, np.ndarray], saved: dict[str, np.ndarray]) -> None:
    if params.keys() != saved.keys():
        raise ValueError("checkpoint does not match the model architecture")
    for k, p in params.items():
        p[...] = saved[k]


def _resume(checkpoint: Path | None, stage: str, params, rng, plateau) -> tuple[int, OptimizerState | None]:
    if checkpoint is None or not Path(checkpoint).exists():
        return 0, None
    saved, meta, opt = load_checkpoint(checkpoint)
    if meta.get("stage") != stage:
        return 0, None
    _restore(params, saved)
    rng.bit_generator.state = meta["rng"]
    plateau.restore(meta["plateau"])
    log.info("stage=%s resume_epoch=%d checkpoint=%s", stage, meta["epoch"], checkpoint)
    if meta.get("done"):
        return -1, opt
    return meta["epoch"], opt


def _checkpoint(path, stage, params, opt, rng, plateau, epoch, done, arch) -> None:
    if path is None:
        return
    meta = {"stage": stage, "epoch": epoch, "done": done, "rng": rng.bit_generator.state,
            "plateau": plateau.state(), "architecture": arch}
    save_checkpoint(path, params, meta, opt)


def pretrain(
    features: np.ndarray,
    split: WeakLabelSplit,
    cfg: TrainConfig,
    rng: np.random.Generator,
    ae: AutoencoderParams | None = None,
    checkpoint: Path | None = None,
) -> AutoencoderParams:
    """Fit the autoencoder on the unlabeled pool (updated in place and returned)."""
    pool = split.train_unlabeled
    if pool.size == 0:
        raise ValueError("empty unlabeled pool")
    if ae is None:
        ae = init_autoencoder(features.shape[1], cfg, rng)
    params = ae.params()
    plateau = _Plateau(cfg.patience, cfg.min_delta)
    start, opt = _resume(checkpoint, "pretrain", params, rng, plateau)
    if start < 0:
        return ae
    opt = opt or OptimizerState.for_params(params, lr=cfg.lr_pretrain, kind=cfg.optimizer)
    for epoch in range(start, cfg.stage1_epochs):
        perm = rng.permutation(pool)
        total = 0.0
        count = 0
        for s in range(0, perm.size, cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            loss, grads = pretrain_loss_and_grads(ae, features[idx])
            if not math.isfinite(loss):
                raise TrainingDivergence("pretrain", epoch)
            adam_step(params, grads, opt)
            total += loss * idx.size
            count += idx.size
        epoch_loss = total / count
        log.info("stage=pretrain epoch=%d loss=%.6g", epoch, epoch_loss)
        stop = plateau.update(epoch_loss)
        _checkpoint(checkpoint, "pretrain", params, opt, rng, plateau, epoch + 1, stop, None)
        if stop:
            break
    return ae


def train_joint(
    features: np.ndarray,
    split: WeakLabelSplit,
    pretrained: AutoencoderParams,
    cfg: TrainConfig,
    rng: np.random.Generator,
    checkpoint: Path | None = None,
) -> Detector:
    """End-to-end optimization of encoder and scorer on balanced batches."""
    _require_labeled(split)
    det = init_detector(pretrained, cfg, rng)
    lam = 0.0 if cfg.no_le_term else cfg.lam
    params = det.params()
    plateau = _Plateau(cfg.patience, cfg.min_delta)
    start, opt = _resume(checkpoint, "joint", params, rng, plateau)
    if start < 0:
        return det
    opt = opt or OptimizerState.for_params(params, lr=cfg.lr_joint, kind=cfg.optimizer)
    for epoch in range(start, cfg.stage2_epochs):
        sums = np.zeros(3)
        n_batches = 0
        for batch in iter_balanced_batches(split, cfg.batch_size, rng):
            terms, grads = det.joint_loss_and_grads(features[batch.indices()], batch.labels(), cfg.a0, lam)
            if not math.isfinite(terms.l_joint):
                raise TrainingDivergence("joint", epoch)
            adam_step(params, grads, opt)
            sums += (terms.l_joint, terms.l_d, terms.l_e)
            n_batches += 1
        epoch_loss, l_d, l_e = sums / n_batches
        log.info("stage=joint epoch=%d loss=%.6g l_d=%.6g l_e=%.6g", epoch, epoch_loss, l_d, l_e)
        stop = plateau.update(epoch_loss)
        _checkpoint(checkpoint, "joint", params, opt, rng, plateau, epoch + 1, stop, model_meta(det))
        if stop:
            break
    return det


@dataclass
class FitResult:
    model: Detector
    seconds: dict[str, float] = field(default_factory=dict)


def fit(
    features: np.ndarray,
    split: WeakLabelSplit,
    cfg: TrainConfig,
    rng: np.random.Generator | None = None,
    checkpoint_dir: str | Path | None = None,
) -> FitResult:
    """Both stages; the stage-1 pass is skipped under ``no_pretrain``."""
    rng = make_rng(cfg.seed) if rng is None else rng
    ck1 = ck2 = None
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
        ck1 = Path(checkpoint_dir) / "stage1.ckpt"
        ck2 = Path(checkpoint_dir) / "stage2.ckpt"
    t0 = time.perf_counter()
    ae = init_autoencoder(features.shape[1], cfg, rng)
    if not cfg.no_pretrain:
        ae = pretrain(features, split, cfg, rng, ae=ae, checkpoint=ck1)
    t1 = time.perf_counter()
    det = train_joint(features, split, ae, cfg, rng, checkpoint=ck2)
    t2 = time.perf_counter()
    return FitResult(det, {"stage1": t1 - t0, "stage2": t2 - t1})


def predict_scores(model: Detector, features: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Anomaly scores row by row (higher is more anomalous)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValueError(f"expected width {model.input_dim}, got shape {x.shape}")
    out = np.empty(x.shape[0])
    for s in range(0, x.shape[0], chunk):
        out[s:s + chunk] = model.scores(x[s:s + chunk])
    return out
