"""Whole-network gradient checks and intermediate-tensor dumps."""

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import BatchNorm
from .tca import tca_forward

GRADCHECK_TOL = 1e-4


def _zero_init_params(model):
    # parameters that start at exactly zero give exactly-zero gradients for
    # everything upstream of them, which a gradient check cannot distinguish
    # from a missing backward; move them off zero first
    for block in model.blocks:
        for tca in block.tca:
            yield tca.alpha
            yield tca.calib2.weight
            if tca.calib2.bias is not None:
                yield tca.calib2.bias


def perturb_for_gradcheck(model, rng, scale=0.1):
    """Move the model off its symmetric initial point.

    Zero-initialized parameters get small random values.  Batch-norm
    ``gamma = 1, beta = 0`` followed by relu, max-pool and another
    batch norm makes the loss almost invariant to ``gamma``; its gradient
    then sits near 1e-7 where finite differences are rounding-limited, so
    every batch-norm affine pair is jittered too.
    """
    for p in _zero_init_params(model):
        p.data[...] = scale * rng.standard_normal(p.shape)
    for mod in model.modules():
        if isinstance(mod, BatchNorm):
            mod.gamma.data[...] = 1.0 + scale * rng.standard_normal(mod.gamma.shape)
            mod.beta.data[...] = scale * rng.standard_normal(mod.beta.shape)


def pick_smooth_input(model, shape, labels, rng, tries=20):
    """Draw standard-normal inputs and keep the one farthest from any relu/max-pool kink."""
    best, best_margin = None, -math.inf
    for _ in range(tries):
        x = rng.standard_normal(shape)
        with ad.kink_monitor() as rec:
            ad.cross_entropy(model(Tensor(x)), labels)
        if rec["margin"] > best_margin:
            best, best_margin = x, rec["margin"]
    return best, best_margin


def network_gradcheck(model, x, labels, eps=1e-5):
    """Max relative error per named parameter between backward and central differences.

    The model stays in training mode, so batch-norm statistics are part of
    the differentiated function.  Returns ``{name: max_rel_err}`` in
    parameter order.
    """
    model.train()
    labels = np.asarray(labels)
    params = list(model.named_parameters())
    model.zero_grad()
    loss = ad.cross_entropy(model(Tensor(x)), labels)
    ad.backward(loss)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for _, p in params]

    def value():
        return ad.cross_entropy(model(Tensor(x)), labels).item()

    numeric = ad.numeric_grad(value, [p.data for _, p in params], eps)
    return {
        name: float(ad.relative_error(a, n).max())
        for (name, _), a, n in zip(params, analytic, numeric)
    }


def inspect_sample(model, x, block=0):
    """Topologies, calibration curves and joint feature magnitudes for one sample.

    ``x`` is a single ``(T, N, C)`` sample.  Returns ``topology`` as a list of
    ``(N, N, C1)`` arrays (one per partition subset), ``calibration`` as a
    list of ``(T, C1)`` arrays, and ``joint_features`` as the ``(T', N)``
    channel-wise L2 norm of the inspected block's output.
    """
    if not 0 <= block < len(model.blocks):
        raise IndexError(f"block {block} out of range for {len(model.blocks)} blocks")
    model.eval()
    h = model.data_bn(Tensor(np.asarray(x, dtype=np.float64)[None]))
    for b in model.blocks[:block]:
        h = b(h)
    target = model.blocks[block]
    topology, calibration = [], []
    for mu, params in zip(target.mu, target.tca):
        _, parts = tca_forward(h, mu, params, return_parts=True)
        topology.append(parts["topology"].data[0])
        calibration.append(parts["calibration"].data[0])
    out = target(h).data[0]
    return {
        "topology": topology,
        "calibration": calibration,
        "joint_features": np.sqrt((out**2).sum(axis=-1)),
    }
