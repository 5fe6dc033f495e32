"""Versioned binary container for models and training checkpoints.

Layout: 8-byte magic, little-endian uint32 header length, UTF-8 JSON header, then
every array as little-endian float64 in header order. The header lists each array's
name and shape plus free-form metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .encoder import AutoencoderParams
from .layers import Dense
from .model import Detector
from .numerics import OptimizerState
from .scorer import ScoreNetParams

MAGIC = b"WKADMD01"
FORMAT_VERSION = 1


def write_container(path: str | Path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> None:
    header = {
        "format": FORMAT_VERSION,
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
        "meta": meta,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    tmp.replace(path)


def read_container(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise ValueError(f"{path}: not a model container")
    (hlen,) = struct.unpack_from("<I", blob, len(MAGIC))
    off = len(MAGIC) + 4
    header = json.loads(blob[off:off + hlen].decode("utf-8"))
    if header.get("format") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported container format {header.get('format')}")
    off += hlen
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arrays[entry["name"]] = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape).astype(
            np.float64)
        off += 8 * count
    return arrays, header["meta"]


def model_meta(det: Detector) -> dict[str, Any]:
    return {
        "input_mode": det.input_mode,
        "encoder_activations": [l.activation for l in det.ae.encoder],
        "decoder_activations": [l.activation for l in det.ae.decoder],
        "scorer_activations": [l.activation for l in det.scorer.layers],
        "factors": list(det.scorer.factors),
        "error_mode": det.scorer.error_mode,
    }


def detector_from(arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> Detector:
    def dense(prefix: str, act: str) -> Dense:
        return Dense(arrays[f"{prefix}.W"].copy(), arrays[f"{prefix}.b"].copy(), act)

    encoder = [dense(f"ae.enc{i}", a) for i, a in enumerate(meta["encoder_activations"])]
    decoder = [dense(f"ae.dec{i}", a) for i, a in enumerate(meta["decoder_activations"])]
    layers = [dense(f"sg.l{i}", a) for i, a in enumerate(meta["scorer_activations"])]
    inject = None
    if meta["error_mode"] == "inject":
        inject = [arrays[f"sg.l{i}.we"].copy() for i in range(len(layers))]
    scorer = ScoreNetParams(layers, inject, tuple(meta["factors"]), meta["error_mode"])
    return Detector(AutoencoderParams(encoder, decoder), scorer, meta["input_mode"])


def save_model(path: str | Path, det: Detector, extra: Mapping[str, Any] | None = None) -> None:
    meta = {"kind": "model", **model_meta(det)}
    if extra:
        meta["extra"] = dict(extra)
    write_container(path, det.params(), meta)


def load_model(path: str | Path) -> Detector:
    arrays, meta = read_container(path)
    return detector_from(arrays, meta)


def save_checkpoint(
    path: str | Path,
    params: Mapping[str, np.ndarray],
    meta: Mapping[str, Any],
    opt: OptimizerState,
) -> None:
    """Parameters, Adam moments and arbitrary JSON-able progress metadata."""
    arrays = dict(params)
    for k in params:
        arrays[f"opt.m.{k}"] = opt.m[k]
        arrays[f"opt.v.{k}"] = opt.v[k]
    full_meta = {
        **meta,
        "optimizer": {"kind": opt.kind, "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
                      "eps": opt.eps, "step": opt.step},
    }
    write_container(path, arrays, full_meta)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any], OptimizerState]:
    arrays, meta = read_container(path)
    o = meta["optimizer"]
    params = {k: v for k, v in arrays.items() if not k.startswith("opt.")}
    opt = OptimizerState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], kind=o["kind"],
                         step=o["step"])
    opt.m = {k: arrays[f"opt.m.{k}"] for k in params}
    opt.v = {k: arrays[f"opt.v.{k}"] for k in params}
    return params, meta, opt
