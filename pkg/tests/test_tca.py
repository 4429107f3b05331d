import itertools

import numpy as np
import pytest

from tcagcn import autodiff as ad
from tcagcn.autodiff import Tensor
from tcagcn.graph import load_graph, spatial_partition
from tcagcn.tca import (
    TcaParams,
    calibration,
    channel_aggregate,
    correlation_model,
    refine_topology,
    tca_forward,
    temporal_aggregate,
)

import oracles


def make_params(c, c1, seed=0, activation="relu", randomize=True):
    rng = np.random.default_rng(seed)
    p = TcaParams(c, c1, rng, reduction_q=2, reduction=1, corr_activation=activation, calib_activation=activation)
    if randomize:
        p.alpha.data[...] = rng.standard_normal(1)
        p.calib2.weight.data[...] = 0.3 * rng.standard_normal(p.calib2.weight.shape)
        p.calib1.bias.data[...] = 0.1 * rng.standard_normal(p.calib1.bias.shape)
        p.calib2.bias.data[...] = 0.1 * rng.standard_normal(p.calib2.bias.shape)
    return p


SHAPES = list(itertools.product([1, 2, 3, 4], repeat=4))


@pytest.mark.parametrize("t,n,c,c1", SHAPES[::7])
def test_temporal_aggregate_matches_loop(t, n, c, c1):
    rng = np.random.default_rng(t * 64 + n * 16 + c * 4 + c1)
    x, w0, alpha_t = rng.standard_normal((t, n, c)), rng.standard_normal((c1, c)), rng.standard_normal((t, c1))
    got = temporal_aggregate(Tensor(x[None]), Tensor(w0), Tensor(alpha_t[None])).data[0]
    assert np.allclose(got, oracles.temporal_aggregate(x, w0, alpha_t), rtol=0, atol=1e-12)


@pytest.mark.parametrize("t,n,c,c1", SHAPES[::7])
def test_channel_aggregate_matches_loop(t, n, c, c1):
    rng = np.random.default_rng(c1)
    a, s = rng.standard_normal((t, n, c1)), rng.standard_normal((n, n, c1))
    got = channel_aggregate(Tensor(a[None]), Tensor(s[None])).data[0]
    assert np.allclose(got, oracles.channel_aggregate(a, s), rtol=0, atol=1e-12)


@pytest.mark.parametrize("activation", ["relu", "tanh", "sigmoid"])
@pytest.mark.parametrize("t,n,c,c1", [(1, 1, 1, 1), (3, 4, 2, 3), (4, 2, 4, 4)])
def test_correlation_and_calibration_match_loop(activation, t, n, c, c1):
    p = make_params(c, c1, seed=t + n, activation=activation)
    x = np.random.default_rng(5).standard_normal((t, n, c))
    q = correlation_model(Tensor(x[None]), p).data[0]
    want = oracles.correlation(x, p.phi.weight.data, p.psi.weight.data, p.xi.weight.data, activation)
    assert np.allclose(q, want, rtol=0, atol=1e-12)
    a = calibration(Tensor(x[None]), p).data[0]
    want = oracles.calibration(
        x, p.calib1.weight.data, p.calib1.bias.data, p.calib2.weight.data, p.calib2.bias.data, activation
    )
    assert np.allclose(a, want, rtol=0, atol=1e-12)


def test_tca_forward_composes_the_pieces():
    g = load_graph("toy5")
    mu = spatial_partition(g).normalized[1]
    p = make_params(3, 4, seed=2)
    x = np.random.default_rng(1).standard_normal((6, 5, 3))
    out, parts = tca_forward(Tensor(x[None]), mu, p, return_parts=True)
    q = oracles.correlation(x, p.phi.weight.data, p.psi.weight.data, p.xi.weight.data)
    s = p.alpha.data[0] * q + mu[:, :, None]
    assert np.allclose(parts["topology"].data[0], s, atol=1e-12)
    a = oracles.temporal_aggregate(x, p.W0.data, parts["calibration"].data[0])
    assert np.allclose(out.data[0], oracles.channel_aggregate(a, s), atol=1e-12)


def test_alpha_zero_and_fresh_calibration_reduce_to_static_graph_conv():
    g = load_graph("toy9")
    rng = np.random.default_rng(0)
    p = TcaParams(4, 8, rng)  # fresh: alpha = 0, second calibration layer zero
    x = rng.standard_normal((2, 5, 9, 4))
    for mu in spatial_partition(g).normalized:
        out, parts = tca_forward(Tensor(x), mu, p, return_parts=True)
        assert np.array_equal(parts["calibration"].data, np.ones((2, 5, 8)))
        static = np.einsum("nm,btmc,oc->btno", mu, x, p.W0.data)
        assert np.max(np.abs(out.data - static)) <= 1e-12


def test_zero_calibration_shares_weights_across_frames():
    p = make_params(3, 4, seed=1)
    p.calib2.weight.data[...] = 0.0
    p.calib2.bias.data[...] = 0.0
    x = np.random.default_rng(2).standard_normal((1, 5, 3, 3))
    alpha_t = calibration(Tensor(x), p).data
    assert np.array_equal(alpha_t, np.ones_like(alpha_t))
    # with alpha_t == 1 each frame sees the same linear map, so swapping frames commutes
    swapped = x[:, ::-1]
    a = temporal_aggregate(Tensor(x), p.W0, Tensor(alpha_t)).data
    b = temporal_aggregate(Tensor(swapped), p.W0, Tensor(alpha_t)).data
    assert np.allclose(a[:, ::-1], b, atol=1e-14)


def test_nonzero_calibration_makes_frame_weights_differ():
    p = make_params(3, 4, seed=1)
    x = np.random.default_rng(2).standard_normal((1, 5, 3, 3))
    alpha_t = calibration(Tensor(x), p).data[0]
    assert np.ptp(alpha_t, axis=0).max() > 1e-3


def test_refine_topology_broadcasts_prior_per_channel():
    q = np.random.default_rng(0).standard_normal((2, 3, 3, 4))
    mu = np.arange(9.0).reshape(3, 3)
    s = refine_topology(Tensor(q), mu, Tensor(np.array([0.5]))).data
    assert np.allclose(s, 0.5 * q + mu[None, :, :, None])


@pytest.mark.parametrize("activation", ["tanh", "sigmoid"])
def test_tca_forward_gradients(activation):
    g = load_graph("toy5")
    mu = spatial_partition(g).normalized[2]
    p = make_params(3, 4, seed=3, activation=activation)
    y = Tensor(np.random.default_rng(4).standard_normal((2, 4, 5, 4)))

    def f(t):
        return ad.tsum(ad.mul(tca_forward(t, mu, p), y))

    assert ad.gradcheck(f, np.random.default_rng(1).standard_normal((2, 4, 5, 3))) < 1e-6


def test_tca_parameter_gradients():
    g = load_graph("toy5")
    mu = spatial_partition(g).normalized[0]
    p = make_params(4, 4, seed=5, activation="tanh")
    x = Tensor(np.random.default_rng(1).standard_normal((2, 4, 5, 4)))
    y = np.random.default_rng(2).standard_normal((2, 4, 5, 4))

    def loss():
        return ad.tsum(ad.mul(tca_forward(x, mu, p), y))

    ad.backward(loss())
    params = [t for _, t in p.named_parameters()]
    analytic = [t.grad.copy() for t in params]
    numeric = ad.numeric_grad(lambda: loss().item(), [t.data for t in params])
    for (name, _), a, n in zip(p.named_parameters(), analytic, numeric):
        assert ad.relative_error(a, n).max() < 1e-6, name


def test_shape_mismatch_raises():
    p = make_params(3, 4)
    with pytest.raises(ad.ShapeError):
        tca_forward(Tensor(np.ones((1, 4, 5, 2))), np.eye(5), p)
