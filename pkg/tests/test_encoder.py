import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from weakad.encoder import (
    RESIDUAL_EPS,
    AutoencoderParams,
    backprop_through_encoding,
    default_architecture,
    encode,
    encoding_forward,
    reconstruct,
    three_factors,
)
from weakad.layers import Dense, activate
from weakad.numerics import finite_diff_grad, make_rng, max_relative_error

from helpers import jitter


def linear_ae(W_enc, W_dec):
    m, d = W_enc.shape
    return AutoencoderParams(
        [Dense(W_enc, np.zeros(d), "linear")], [Dense(W_dec, np.zeros(m), "linear")]
    )


def test_default_architecture():
    assert default_architecture(6) == ([3], 2)
    assert default_architecture(20) == ([10], 5)
    assert default_architecture(122) == ([61], 20)
    for m in range(3, 200):
        hidden, d = default_architecture(m)
        assert d < m


def test_bottleneck_enforced():
    with pytest.raises(ValueError):
        AutoencoderParams.init(4, make_rng(0), latent_dim=4)
    with pytest.raises(ValueError):
        linear_ae(np.eye(3), np.eye(3))


def test_chain_validation():
    enc = [Dense.zeros(5, 3), Dense.zeros(4, 2)]
    with pytest.raises(ValueError, match="chain"):
        AutoencoderParams(enc, [Dense.zeros(2, 5)])


def test_zero_encoder_gives_activation_of_zero():
    ae = AutoencoderParams([Dense.zeros(4, 2, "tanh")], [Dense.zeros(2, 4, "linear")])
    x = make_rng(1).normal(size=4)
    assert np.array_equal(encode(x, ae), activate(np.zeros(2), "tanh"))


def test_identity_slice_encoder():
    W = np.eye(5)[:, :2]
    ae = linear_ae(W, np.zeros((2, 5)))
    x = np.arange(5.0)
    assert np.array_equal(encode(x, ae), [0.0, 1.0])


def test_encode_matches_layer_by_layer():
    rng = make_rng(2)
    ae = AutoencoderParams.init(6, rng, hidden=[4], latent_dim=3)
    jitter(ae.params(), rng)
    x = rng.normal(size=(3, 6))
    l0, l1 = ae.encoder
    hand = np.maximum(x @ l0.W + l0.b, 0.0) @ l1.W + l1.b
    np.testing.assert_allclose(encode(x, ae), hand, atol=1e-14)
    d0, d1 = ae.decoder
    hand_rec = np.maximum(hand @ d0.W + d0.b, 0.0) @ d1.W + d1.b
    np.testing.assert_allclose(reconstruct(hand, ae), hand_rec, atol=1e-14)


def test_zero_decoder_reconstructs_zero():
    ae = AutoencoderParams([Dense.zeros(4, 2)], [Dense.zeros(2, 4, "linear")])
    assert not reconstruct(np.array([1.0, -2.0]), ae).any()


def test_pseudo_inverse_decoder_recovers_span():
    rng = make_rng(3)
    W = rng.normal(size=(5, 2))
    ae = linear_ae(W, np.linalg.pinv(W))
    x = rng.normal(size=2) @ np.linalg.pinv(W)  # in the row space of W^T
    np.testing.assert_allclose(reconstruct(encode(x, ae), ae), x, atol=1e-9)


def test_width_mismatch():
    ae = AutoencoderParams.init(5, make_rng(0), latent_dim=2)
    with pytest.raises(ValueError):
        encode(np.zeros(4), ae)
    with pytest.raises(ValueError):
        reconstruct(np.zeros(3), ae)


def test_three_four_five_residual():
    ae = linear_ae(np.zeros((2, 1)), np.zeros((1, 2)))
    ae.decoder[0].b[:] = [3.0, 4.0]
    enc = three_factors(np.zeros(2), ae)
    assert enc.e == 5.0
    np.testing.assert_allclose(enc.r, [0.6, 0.8], atol=1e-15)


def test_perfect_reconstruction_zero_direction():
    W = np.eye(3)[:, :2]
    ae = linear_ae(W, W.T)
    enc = three_factors(np.array([0.2, -0.7, 0.0]), ae)
    assert enc.e == 0.0
    assert not enc.r.any()


def test_random_factors_match_brute_force():
    rng = make_rng(4)
    ae = AutoencoderParams.init(7, rng, hidden=[5], latent_dim=3)
    jitter(ae.params(), rng)
    x = rng.normal(size=(4, 7))
    enc = three_factors(x, ae)
    x_hat = reconstruct(encode(x, ae), ae)
    for i in range(4):
        diff = x_hat[i] - x[i]
        e = np.sqrt(sum(v * v for v in diff))
        assert enc.e[i] == pytest.approx(e, abs=1e-12)
        np.testing.assert_allclose(enc.r[i], diff / e, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 9), st.integers(1, 64), st.floats(0.01, 5.0), st.integers(0, 2**32 - 1))
def test_encoding_invariants(m, n, scale, seed):
    rng = make_rng(seed)
    ae = AutoencoderParams.init(m, rng, hidden=[max(1, m // 2)], latent_dim=max(1, m // 3) if m > 2 else 1)
    jitter(ae.params(), rng, scale)
    x = rng.normal(scale=scale, size=(n, m))
    enc = three_factors(x, ae)
    assert np.all(enc.e >= 0)
    big = enc.e > RESIDUAL_EPS
    np.testing.assert_allclose(np.linalg.norm(enc.r[big], axis=1), 1.0, atol=1e-9)
    assert not enc.r[~big].any()


def _ae_loss(ae, x, wh, wr, we):
    c = encoding_forward(x, ae)
    return float(np.sum(c.h * wh) + np.sum(c.r * wr) + np.sum(c.e * we))


def test_e_path_linear_hand_formula():
    rng = make_rng(5)
    W = rng.normal(size=(3, 1))
    D = rng.normal(size=(1, 3))
    ae = linear_ae(W, D)
    x = rng.normal(size=(1, 3))
    cache = encoding_forward(x, ae)
    grads, _ = backprop_through_encoding(cache, ae, grad_e=np.ones(1))
    # e = ||x W D - x||, so de/dD = (x W)^T r and de/dW = x^T (r D^T)
    r = cache.r
    np.testing.assert_allclose(grads["ae.dec0.W"], (x @ W).T @ r, atol=1e-12)
    np.testing.assert_allclose(grads["ae.enc0.W"], x.T @ (r @ D.T), atol=1e-12)


def test_zero_upstream_zero_grads():
    rng = make_rng(6)
    ae = AutoencoderParams.init(5, rng, latent_dim=2)
    cache = encoding_forward(rng.normal(size=(3, 5)), ae)
    grads, gx = backprop_through_encoding(cache, ae, np.zeros((3, 2)), np.zeros((3, 5)), np.zeros(3))
    assert all(not g.any() for g in grads.values()) and not gx.any()


def test_degenerate_residual_has_zero_gradient():
    W = np.eye(3)[:, :2]
    ae = linear_ae(W, W.T)
    x = np.array([[0.3, 0.1, 0.0]])
    cache = encoding_forward(x, ae)
    grads, _ = backprop_through_encoding(cache, ae, grad_r=np.ones((1, 3)), grad_e=np.ones(1))
    assert all(not g.any() for g in grads.values())


@settings(max_examples=20, deadline=None)
@given(st.integers(3, 7), st.integers(1, 5), st.sampled_from(["relu", "tanh"]), st.integers(0, 2**32 - 1))
def test_three_factor_gradients_match_finite_differences(m, n, act, seed):
    rng = make_rng(seed)
    d = max(1, m // 3)
    ae = AutoencoderParams.init(m, rng, hidden=[m - 1], latent_dim=d, activation=act)
    jitter(ae.params(), rng)
    x = rng.normal(size=(n, m))
    wh, wr, we = rng.normal(size=(n, d)), rng.normal(size=(n, m)), rng.normal(size=n)
    cache = encoding_forward(x, ae)
    grads, g_x = backprop_through_encoding(cache, ae, wh, wr, we)
    num = finite_diff_grad(lambda p: _ae_loss(ae, x, wh, wr, we), ae.params())
    assert max_relative_error(grads, num) < 1e-4
    x_box = {"x": x}
    num_x = finite_diff_grad(lambda p: _ae_loss(ae, p["x"], wh, wr, we), x_box)
    assert max_relative_error({"x": g_x}, num_x) < 1e-4
