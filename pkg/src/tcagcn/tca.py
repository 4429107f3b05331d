"""Temporal-channel aggregation for one partition subset.

Shapes follow ``(..., T, N, C)``: any leading axes (usually the batch) are
carried through unchanged.
"""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Linear, Module, TemporalConv


class TcaParams(Module):
    """Parameters of one TCA module.

    ``phi``/``psi`` squeeze ``C`` to ``max(1, C // reduction_q)`` channels and
    ``xi`` expands the pairwise differences to ``C1``.  The calibration branch
    is two kernel-3 temporal convolutions ``C -> max(1, C // reduction) -> C1``
    whose second layer starts at zero, so a fresh module has ``alpha_t == 1``.
    """

    def __init__(
        self,
        c_in,
        c_out,
        rng,
        reduction_q=8,
        reduction=2,
        corr_activation="relu",
        calib_activation="relu",
    ):
        rel = max(1, c_in // reduction_q)
        mid = max(1, c_in // reduction)
        self.alpha = Tensor(np.zeros(1), requires_grad=True)
        self.phi = Linear(c_in, rel, rng, bias=False)
        self.psi = Linear(c_in, rel, rng, bias=False)
        self.xi = Linear(rel, c_out, rng, bias=False)
        bound = np.sqrt(1.0 / c_in)
        self.W0 = Tensor(rng.uniform(-bound, bound, (c_out, c_in)), requires_grad=True)
        self.calib1 = TemporalConv(c_in, mid, 3, rng)
        self.calib2 = TemporalConv(mid, c_out, 3, rng, zero=True)
        self.corr_activation = corr_activation
        self.calib_activation = calib_activation
        self.c_in, self.c_out = c_in, c_out


def correlation_model(x, params):
    """Channel-specific joint correlations ``Q`` of shape ``(..., N, N, C1)``."""
    pooled = ad.pool(x, -3, "mean")  # (..., N, C)
    u = params.phi(pooled)
    v = params.psi(pooled)
    lead = u.shape[:-2]
    n, r = u.shape[-2:]
    diff = ad.reshape(u, lead + (n, 1, r)) - ad.reshape(v, lead + (1, n, r))
    return params.xi(ad.activation(params.corr_activation)(diff))


def refine_topology(q, mu_k, alpha):
    """``S[..., c] = alpha * Q[..., c] + mu_k`` for every channel ``c``."""
    mu = np.asarray(mu_k.data if isinstance(mu_k, Tensor) else mu_k, dtype=np.float64)
    return ad.add(ad.mul(alpha, q), mu[:, :, None])


def calibration(x, params):
    """Per-frame output-channel calibration ``alpha_t = 1 + G(x)``, shape ``(..., T, C1)``."""
    frames = ad.pool(x, -2, "mean", keepdims=True)  # (..., T, 1, C)
    h = ad.activation(params.calib_activation)(params.calib1(frames))
    b = params.calib2(h)
    shape = b.shape[:-2] + (b.shape[-1],)
    return ad.add(ad.reshape(b, shape), 1.0)


def temporal_aggregate(x, w0, alpha_t):
    """Frame-wise linear map with weights ``W_t = alpha_t[:, None] * W0``.

    ``A_out[..., t, n, :] = W_t @ x[..., t, n, :]``.
    """
    base = ad.linear(x, w0, transpose=True)
    gate = ad.reshape(alpha_t, alpha_t.shape[:-1] + (1, alpha_t.shape[-1]))
    return ad.mul(base, gate)


def channel_aggregate(a_out, s):
    """``F[..., t, n, c] = sum_m S[..., n, m, c] * A_out[..., t, m, c]``."""
    return ad.joint_mix(s, a_out)


def tca_forward(x, mu_k, params, return_parts=False):
    """One TCA module for partition subset ``k`` with prior topology ``mu_k``."""
    alpha_t = calibration(x, params)
    a_out = temporal_aggregate(x, params.W0, alpha_t)
    s = refine_topology(correlation_model(x, params), mu_k, params.alpha)
    out = channel_aggregate(a_out, s)
    if return_parts:
        return out, {"topology": s, "calibration": alpha_t, "temporal": a_out}
    return out
