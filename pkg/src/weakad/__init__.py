"""Weakly supervised anomaly detection on tabular data with autoencoder feature encoding."""

__version__ = "0.1.0"

from .dataset import DataError, Dataset, Schema, load_csv, make_weak_split, preprocess
from .encoder import AutoencoderParams, three_factors
from .metrics import aggregate_runs, auc_pr, auc_roc, evaluate
from .model import Detector
from .serialization import load_model, save_model
from .trainer import TrainConfig, TrainingDivergence, fit, predict_scores

__all__ = [
    "AutoencoderParams",
    "DataError",
    "Dataset",
    "Detector",
    "Schema",
    "TrainConfig",
    "TrainingDivergence",
    "aggregate_runs",
    "auc_pr",
    "auc_roc",
    "evaluate",
    "fit",
    "load_csv",
    "load_model",
    "make_weak_split",
    "predict_scores",
    "preprocess",
    "save_model",
    "three_factors",
]
