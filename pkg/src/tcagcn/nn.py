"""Parameter containers on top of :mod:`tcagcn.autodiff`."""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Attribute-discovered parameter tree.

    Trainable tensors, child modules and lists of child modules assigned as
    attributes are found in assignment order, so parameter names are stable.
    """

    training = True

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Module):
                yield from value.named_buffers(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{name}.{i}.")
        yield from self._own_buffers(prefix)

    def _own_buffers(self, prefix):
        return iter(())

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def state_dict(self):
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        expected = set(own) | set(bufs)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise KeyError(f"state mismatch; missing={missing} unexpected={extra}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()
        for name, b in bufs.items():
            b[...] = state[name]


def _param(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


class Linear(Module):
    """Channel map over the last axis; weight stored as ``(C_in, C_out)``."""

    def __init__(self, c_in, c_out, rng, bias=True, zero=False):
        bound = np.sqrt(1.0 / c_in)
        w = np.zeros((c_in, c_out)) if zero else rng.uniform(-bound, bound, (c_in, c_out))
        self.weight = _param(w)
        self.bias = _param(np.zeros(c_out)) if bias else None

    def __call__(self, x):
        return ad.linear(x, self.weight, self.bias)


class TemporalConv(Module):
    def __init__(self, c_in, c_out, kernel_size, rng, stride=1, dilation=1, bias=True, zero=False):
        fan_in = kernel_size * c_in
        bound = np.sqrt(1.0 / fan_in)
        shape = (kernel_size, c_in, c_out)
        self.weight = _param(np.zeros(shape) if zero else rng.uniform(-bound, bound, shape))
        self.bias = _param(np.zeros(c_out)) if bias else None
        self.stride = stride
        self.dilation = dilation

    def __call__(self, x, stride=None):
        stride = self.stride if stride is None else stride
        return ad.conv_temporal(x, self.weight, self.bias, stride=stride, dilation=self.dilation)


class BatchNorm(Module):
    def __init__(self, channels, gamma=1.0, momentum=0.9, eps=1e-5):
        self.gamma = _param(np.full(channels, float(gamma)))
        self.beta = _param(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def _own_buffers(self, prefix):
        yield f"{prefix}running_mean", self.running_mean
        yield f"{prefix}running_var", self.running_var

    def __call__(self, x):
        return ad.batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )
