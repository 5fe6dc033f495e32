"""Shared builders for the test suite."""

import numpy as np

from weakad.encoder import AutoencoderParams
from weakad.model import Detector
from weakad.scorer import ScoreNetParams


def jitter(params, rng, scale=0.3):
    # random biases keep preactivations off the ReLU kink for finite differences
    for p in params.values():
        p += rng.normal(scale=scale, size=p.shape)


def random_detector(rng, m=5, d=2, enc_hidden=(3,), sg_hidden=(4, 3), factors="h,r,e",
                    error_mode="inject", input_mode="factors", scale=0.3):
    ae = AutoencoderParams.init(m, rng, hidden=enc_hidden, latent_dim=d, activation="tanh")
    if input_mode == "reconstruction":
        sg = ScoreNetParams.init(m, d, rng, hidden=sg_hidden, factors="h", error_mode="none", width=m)
    else:
        sg = ScoreNetParams.init(m, d, rng, hidden=sg_hidden, factors=factors, error_mode=error_mode)
    det = Detector(ae, sg, input_mode)
    jitter(det.params(), rng, scale)
    return det


def toy_table(n_normal=100, n_anomaly=10, m=4, seed=0):
    from weakad.dataset import Dataset

    rng = np.random.default_rng(seed)
    feats = rng.uniform(size=(n_normal + n_anomaly, m))
    labels = np.r_[np.zeros(n_normal), np.ones(n_anomaly)].astype(np.int8)
    return Dataset(feats, labels, [f"f{j}" for j in range(m)])


# acceptance verdicts, printed in the terminal summary
VERDICTS = {}


def verdict(criterion, ok, detail=""):
    line = f"criterion {criterion}: {'SKIP' if ok is None else 'PASS' if ok else 'FAIL'} {detail}".rstrip()
    VERDICTS[criterion] = line
    print(line)
    return ok
