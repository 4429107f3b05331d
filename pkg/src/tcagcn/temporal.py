"""Multi-scale temporal convolution followed by a single-input attention gate."""

from . import autodiff as ad
from .nn import BatchNorm, Linear, Module, TemporalConv

BRANCH_KINDS = ("conv_d1", "conv_d2", "maxpool", "point")


class Branch(Module):
    """One MSCONV branch producing ``C1 / 4`` channels.

    Conv and pool branches: 1x1 reduce, BN, ReLU, then a kernel-5 temporal
    conv (dilation 1 or 2) or a window-3 max pool, then BN.  The point branch
    is a strided 1x1 conv and BN only.
    """

    def __init__(self, kind, c_in, c_branch, rng):
        if kind not in BRANCH_KINDS:
            raise ValueError(f"unknown branch kind {kind!r}")
        self.kind = kind
        self.reduce = TemporalConv(c_in, c_branch, 1, rng, bias=False)
        self.bn_in = BatchNorm(c_branch) if kind != "point" else None
        if kind.startswith("conv"):
            self.temporal = TemporalConv(c_branch, c_branch, 5, rng, dilation=int(kind[-1]), bias=False)
        else:
            self.temporal = None
        self.bn_out = BatchNorm(c_branch)

    def __call__(self, z, stride=1):
        if self.kind == "point":
            return self.bn_out(self.reduce(z, stride=stride))
        h = ad.relu(self.bn_in(self.reduce(z)))
        if self.kind == "maxpool":
            h = ad.max_pool_temporal(h, 3, stride)
        else:
            h = self.temporal(h, stride=stride)
        return self.bn_out(h)


class Bottleneck(Module):
    def __init__(self, channels, hidden, rng):
        self.down = Linear(channels, hidden, rng)
        self.up = Linear(hidden, channels, rng)

    def __call__(self, z):
        return self.up(ad.relu(self.down(z)))


class TfParams(Module):
    def __init__(self, channels, rng, reduction_aff=4):
        if channels % 4:
            raise ValueError(f"TF module needs channels divisible by 4, got {channels}")
        c_branch = channels // 4
        self.branches = [Branch(kind, channels, c_branch, rng) for kind in BRANCH_KINDS]
        hidden = max(1, channels // reduction_aff)
        self.local = Bottleneck(channels, hidden, rng)
        self.glob = Bottleneck(channels, hidden, rng)
        self.channels = channels


def msconv(f_out, params, stride=1):
    """Concatenate the four branch outputs along channels; ``T' = ceil(T / stride)``."""
    if f_out.shape[-1] % 4:
        raise ValueError(f"channels must be divisible by 4, got {f_out.shape[-1]}")
    return ad.concat([b(f_out, stride) for b in params.branches], axis=-1)


def attention_gate(z, params):
    """``sigmoid(l(Z) + g(Z))`` with ``g`` applied to the (T, N) mean and broadcast back."""
    local = params.local(z)
    pooled = ad.pool(z, (-3, -2), "mean", keepdims=True)
    return ad.sigmoid(ad.add(local, params.glob(pooled)))


def aff_fuse(z, params, return_gate=False):
    gate = attention_gate(z, params)
    out = ad.mul(z, gate)
    return (out, gate) if return_gate else out


def tf_forward(f_out, params, stride=1):
    return aff_fuse(msconv(f_out, params, stride), params)
