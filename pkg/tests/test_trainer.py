import logging

import numpy as np
import pytest
from scipy.stats import chisquare

from weakad.dataset import Dataset, WeakLabelSplit, make_weak_split
from weakad.encoder import three_factors
from weakad.numerics import make_rng
from weakad.scorer import score
from weakad.synthetic import manifold_dataset
from weakad.trainer import (
    VARIANTS,
    TrainConfig,
    TrainingDivergence,
    fit,
    init_autoencoder,
    iter_balanced_batches,
    predict_scores,
    pretrain,
    sample_balanced_batch,
    train_joint,
)


def pool_split(n_unlabeled, n_labeled):
    return WeakLabelSplit(
        np.arange(n_unlabeled), np.arange(n_unlabeled, n_unlabeled + n_labeled), np.array([], dtype=int), 0.0, n_labeled
    )


def small_problem(seed=0, n=300, m=6):
    """Normals near a line in R^m, anomalies far off it."""
    rng = make_rng(seed)
    t = rng.uniform(-1, 1, size=(n, 1))
    direction = rng.normal(size=(1, m))
    normals = 0.5 + 0.2 * t @ direction + rng.normal(scale=0.01, size=(n, m))
    anomalies = 0.5 + rng.normal(scale=0.6, size=(40, m))
    feats = np.vstack([normals, anomalies])
    labels = np.r_[np.zeros(n), np.ones(40)]
    return Dataset(feats, labels, [f"x{j}" for j in range(m)])


def tiny_cfg(**kw):
    base = dict(stage1_epochs=5, stage2_epochs=5, batch_size=32, scorer_hidden=(8, 4))
    base.update(kw)
    return TrainConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=7)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="lbfgs")
    with pytest.raises(ValueError):
        TrainConfig().with_variant("nope")
    cfg = TrainConfig(factors="e,h", scorer_hidden=[3])
    assert cfg.factors == ("h", "e") and cfg.scorer_hidden == (3,)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_variants_set_flags():
    assert TrainConfig().with_variant("no-pretrain").no_pretrain
    assert TrainConfig().with_variant("no-le-term").no_le_term
    assert TrainConfig().with_variant("first-layer-e").first_layer_e_only
    assert TrainConfig().with_variant("reconstruction-input").reconstruction_input
    assert TrainConfig().with_variant("proposed") == TrainConfig()
    assert set(VARIANTS) == {"proposed", "no-pretrain", "no-le-term", "first-layer-e", "reconstruction-input"}


def test_batch_of_eight():
    b = sample_balanced_batch(pool_split(50, 5), 8, make_rng(0))
    assert b.unlabeled.size == 4 and b.anomalies.size == 4
    assert np.unique(b.unlabeled).size == 4
    assert b.labels().tolist() == [0, 0, 0, 0, 1, 1, 1, 1]


def test_small_labeled_pool_repeats():
    b = sample_balanced_batch(pool_split(100, 2), 64, make_rng(0))
    assert b.anomalies.size == 32
    assert set(b.anomalies.tolist()) <= {100, 101}
    assert np.unique(b.anomalies).size < b.anomalies.size


def test_anomaly_draws_uniform():
    split = pool_split(20, 7)
    rng = make_rng(5)
    draws = np.concatenate([sample_balanced_batch(split, 20, rng).anomalies for _ in range(10_000)])
    assert draws.size == 100_000
    counts = np.bincount(draws - 20, minlength=7)
    expected = draws.size / 7
    sigma = np.sqrt(draws.size * (1 / 7) * (6 / 7))
    assert np.all(np.abs(counts - expected) < 3 * sigma)
    assert chisquare(counts).pvalue > 1e-3


def test_epoch_covers_pool_without_replacement():
    split = pool_split(100, 3)
    batches = list(iter_balanced_batches(split, 20, make_rng(1)))
    unl = np.concatenate([b.unlabeled for b in batches])
    assert len(batches) == 10
    assert np.array_equal(np.sort(unl), np.arange(100))
    assert all(b.anomalies.size == 10 for b in batches)


def test_empty_labeled_pool():
    with pytest.raises(ValueError, match="label-free"):
        sample_balanced_batch(pool_split(10, 0), 4, make_rng(0))


def test_zero_epochs_returns_initialization():
    ds = small_problem()
    sp = make_weak_split(ds, 10, 0.0, 0.2, 0)
    rng = make_rng(1)
    ae = init_autoencoder(ds.n_features, TrainConfig(), rng)
    before = {k: v.copy() for k, v in ae.params().items()}
    pretrain(ds.features, sp, tiny_cfg(stage1_epochs=0), rng, ae=ae)
    assert all(np.array_equal(before[k], v) for k, v in ae.params().items())


def test_linear_autoencoder_recovers_rank_one():
    rng = make_rng(2)
    t = rng.uniform(-1, 1, size=(200, 1))
    x = np.hstack([t, -0.5 * t]) + np.array([0.3, 0.6])
    ds = Dataset(x, np.r_[np.zeros(199), 1], ["a", "b"])
    sp = WeakLabelSplit(np.arange(199), np.array([199]), np.array([], dtype=int), 0.0, 1)
    cfg = TrainConfig(encoder_hidden=(), latent_dim=1, stage1_epochs=400, lr_pretrain=1e-2, batch_size=32, patience=0)
    ae = init_autoencoder(2, cfg, make_rng(3))
    initial = float(np.sqrt(np.mean(three_factors(x, ae).e ** 2 / 2)))
    pretrain(x, sp, cfg, make_rng(3), ae=ae)
    final = float(np.sqrt(np.mean(three_factors(x, ae).e ** 2 / 2)))
    assert final < 0.01 * initial


def test_synthetic_reconstruction_halves():
    ds = manifold_dataset(n_normal=1500, n_anomaly=60)
    sp = make_weak_split(ds, 10, 0.02, 0.2, 0)
    rng = make_rng(0)
    cfg = TrainConfig(stage1_epochs=40)
    ae = init_autoencoder(ds.n_features, cfg, rng)
    held_out = sp.test[ds.labels[sp.test] == 0]
    before = three_factors(ds.features[held_out], ae).e.mean()
    pretrain(ds.features, sp, cfg, rng, ae=ae)
    after = three_factors(ds.features[held_out], ae).e.mean()
    assert after <= before / 2


def test_no_pretrain_starts_from_random_init():
    ds = small_problem()
    sp = make_weak_split(ds, 10, 0.0, 0.2, 0)
    cfg = tiny_cfg(stage2_epochs=0).with_variant("no-pretrain")
    out = fit(ds.features, sp, cfg, make_rng(4))
    fresh = init_autoencoder(ds.n_features, cfg, make_rng(4))
    for k, v in fresh.params().items():
        assert np.array_equal(out.model.ae.params()[k], v)
    assert out.seconds["stage1"] < 0.05


def test_e_only_scorer_trains():
    ds = small_problem()
    sp = make_weak_split(ds, 10, 0.0, 0.2, 0)
    out = fit(ds.features, sp, tiny_cfg(factors="e"), make_rng(0))
    assert out.model.scorer.input_width == 0
    assert np.all(np.isfinite(predict_scores(out.model, ds.features)))


def test_anomalies_outscore_normals_after_training():
    ds = small_problem()
    sp = make_weak_split(ds, 10, 0.0, 0.2, 0)
    out = fit(ds.features, sp, tiny_cfg(stage1_epochs=30, stage2_epochs=30, lr_joint=1e-3), make_rng(0))
    s = predict_scores(out.model, ds.features[sp.test])
    y = ds.labels[sp.test]
    assert s[y == 1].mean() > s[y == 0].mean()


@pytest.mark.parametrize("variant", sorted(VARIANTS))
def test_every_variant_runs(variant):
    ds = small_problem()
    sp = make_weak_split(ds, 10, 0.02, 0.2, 0)
    out = fit(ds.features, sp, tiny_cfg(stage1_epochs=2, stage2_epochs=2).with_variant(variant), make_rng(0))
    assert np.all(np.isfinite(predict_scores(out.model, ds.features)))


def test_no_le_term_blocks_margin_gradient():
    ds = small_problem()
    det = fit(ds.features, make_weak_split(ds, 10, 0.0, 0.2, 0), tiny_cfg(factors="e", stage2_epochs=1),
              make_rng(0)).model
    for w in det.scorer.inject:
        w[:] = 0.0
    x = ds.features[:16]
    y = np.r_[np.zeros(8), np.ones(8)]
    _, grads = det.joint_loss_and_grads(x, y, 5.0, 0.0)
    assert all(not grads[k].any() for k in det.ae.params())
    _, with_term = det.joint_loss_and_grads(x, y, 5.0, 1.0)
    assert any(with_term[k].any() for k in det.ae.params())


def test_fit_deterministic():
    ds = small_problem()
    sp = make_weak_split(ds, 10, 0.02, 0.2, 0)
    a = fit(ds.features, sp, tiny_cfg(), make_rng(9)).model.params()
    b = fit(ds.features, sp, tiny_cfg(), make_rng(9)).model.params()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_predict_scores_rows_independent():
    ds = small_problem()
    sp = make_weak_split(ds, 10, 0.0, 0.2, 0)
    model = fit(ds.features, sp, tiny_cfg(stage1_epochs=1, stage2_epochs=1), make_rng(0)).model
    x = ds.features[:50]
    s = predict_scores(model, x)
    perm = make_rng(1).permutation(50)
    np.testing.assert_allclose(predict_scores(model, x[perm]), s[perm], rtol=0, atol=1e-12)
    dup = predict_scores(model, np.vstack([x[3], x[3], x[3]]))
    assert dup[0] == dup[1] == dup[2]
    np.testing.assert_allclose(predict_scores(model, x, chunk=7), s, rtol=0, atol=1e-12)
    manual = [score(three_factors(row, model.ae), model.scorer) for row in x[:5]]
    np.testing.assert_allclose(s[:5], manual, atol=1e-12)
    with pytest.raises(ValueError):
        predict_scores(model, x[:, :3])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_stage_and_epoch():
    ds = small_problem()
    sp = make_weak_split(ds, 10, 0.0, 0.2, 0)
    cfg = tiny_cfg(optimizer="sgd", lr_pretrain=1e200)
    with pytest.raises(TrainingDivergence) as info:
        fit(ds.features, sp, cfg, make_rng(0))
    assert info.value.stage == "pretrain"
    assert "epoch" in str(info.value)


def test_progress_log_lines(caplog):
    ds = small_problem()
    sp = make_weak_split(ds, 10, 0.0, 0.2, 0)
    with caplog.at_level(logging.INFO, logger="weakad.trainer"):
        fit(ds.features, sp, tiny_cfg(stage1_epochs=2, stage2_epochs=2), make_rng(0))
    lines = [r.getMessage() for r in caplog.records]
    assert "stage=pretrain epoch=0 loss=" in lines[0]
    joint = [l for l in lines if l.startswith("stage=joint")]
    assert len(joint) == 2
    assert all(dict(kv.split("=") for kv in l.split()) for l in joint)


def test_plateau_stops_early():
    ds = small_problem()
    sp = make_weak_split(ds, 10, 0.0, 0.2, 0)
    # with a zero learning rate the loss only moves through batch sampling, so patience ends each stage
    cfg = tiny_cfg(stage1_epochs=50, stage2_epochs=50, lr_pretrain=0.0, lr_joint=0.0, patience=3)
    records = []
    handler = logging.Handler()
    handler.emit = records.append
    logger = logging.getLogger("weakad.trainer")
    logger.addHandler(handler)
    old = logger.level
    logger.setLevel(logging.INFO)
    try:
        fit(ds.features, sp, cfg, make_rng(0))
    finally:
        logger.removeHandler(handler)
        logger.setLevel(old)
    msgs = [r.getMessage() for r in records]
    assert sum(m.startswith("stage=pretrain") for m in msgs) == 4
    assert sum(m.startswith("stage=joint") for m in msgs) < 50


def test_checkpoint_resume_matches_uninterrupted(tmp_path):
    ds = small_problem()
    sp = make_weak_split(ds, 10, 0.0, 0.2, 0)
    cfg = tiny_cfg(stage1_epochs=4, stage2_epochs=6)
    straight = fit(ds.features, sp, cfg, make_rng(3), checkpoint_dir=tmp_path / "a").model.params()
    # stop after three joint epochs, then resume with the full budget
    fit(ds.features, sp, tiny_cfg(stage1_epochs=4, stage2_epochs=3), make_rng(3), checkpoint_dir=tmp_path / "b")
    resumed = fit(ds.features, sp, cfg, make_rng(3), checkpoint_dir=tmp_path / "b").model.params()
    assert all(np.array_equal(straight[k], resumed[k]) for k in straight)
