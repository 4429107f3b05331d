"""TCAF blocks, the full classifier, stream derivation and the SGD training loop."""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import load_graph, spatial_partition
from .nn import BatchNorm, Linear, Module, TemporalConv
from .tca import TcaParams, tca_forward
from .temporal import TfParams, tf_forward

logger = logging.getLogger(__name__)

STREAMS = ("joint", "bone", "joint_motion", "bone_motion")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class BlockSpec:
    in_channels: int
    out_channels: int
    temporal_stride: int = 1

    def __post_init__(self):
        if self.out_channels % 4:
            raise ValueError(f"out_channels must be divisible by 4, got {self.out_channels}")
        if self.temporal_stride not in (1, 2):
            raise ValueError(f"temporal_stride must be 1 or 2, got {self.temporal_stride}")


def channel_plan(widths=(64, 128, 256), counts=(4, 3, 3), in_channels=3):
    """Stage layout: each stage after the first opens with a stride-2 block."""
    specs, c_prev = [], in_channels
    for stage, (width, count) in enumerate(zip(widths, counts)):
        for i in range(count):
            stride = 2 if stage > 0 and i == 0 else 1
            specs.append(BlockSpec(c_prev, width, stride))
            c_prev = width
    return tuple(specs)


@dataclass
class ModelConfig:
    num_classes: int
    blocks: tuple = field(default_factory=channel_plan)
    graph: object = "ntu25"
    in_channels: int = 3
    reduction_q: int = 8
    reduction: int = 2
    reduction_aff: int = 4
    corr_activation: str = "relu"
    calib_activation: str = "relu"

    def __post_init__(self):
        self.blocks = tuple(b if isinstance(b, BlockSpec) else BlockSpec(*b) for b in self.blocks)
        if not self.blocks:
            raise ValueError("need at least one block")
        if self.blocks[0].in_channels != self.in_channels:
            raise ValueError("first block must consume the input channels")
        for prev, nxt in zip(self.blocks, self.blocks[1:]):
            if prev.out_channels != nxt.in_channels:
                raise ValueError(f"block widths do not chain: {prev} -> {nxt}")

    def to_dict(self):
        d = asdict(self)
        d["blocks"] = [[b.in_channels, b.out_channels, b.temporal_stride] for b in self.blocks]
        g = self.graph
        d["graph"] = g.to_dict() if hasattr(g, "to_dict") else g
        return d


class Residual(Module):
    def __init__(self, c_in, c_out, stride, rng):
        self.conv = TemporalConv(c_in, c_out, 1, rng, stride=stride, bias=False)
        self.bn = BatchNorm(c_out)

    def __call__(self, x):
        return self.bn(self.conv(x))


class TCAFBlock(Module):
    """Three TCA modules (one per partition subset) summed, then the TF module.

    ``H = relu(BN(sum_k TCA_k(X)) + res_s(X))`` and
    ``Y = relu(TF(H) + res_t(H))``; a residual is the identity when shapes
    match and a strided 1x1 conv with BN otherwise.
    """

    def __init__(self, spec, partitions, rng, cfg):
        c_in, c_out, stride = spec.in_channels, spec.out_channels, spec.temporal_stride
        self.tca = [
            TcaParams(
                c_in,
                c_out,
                rng,
                reduction_q=cfg.reduction_q,
                reduction=cfg.reduction,
                corr_activation=cfg.corr_activation,
                calib_activation=cfg.calib_activation,
            )
            for _ in range(partitions.num_subsets)
        ]
        self.bn_spatial = BatchNorm(c_out)
        self.res_spatial = Residual(c_in, c_out, 1, rng) if c_in != c_out else None
        self.tf = TfParams(c_out, rng, reduction_aff=cfg.reduction_aff)
        self.res_temporal = Residual(c_out, c_out, stride, rng) if stride != 1 else None
        self.spec = spec
        self.mu = partitions.normalized

    def spatial(self, x):
        h = tca_forward(x, self.mu[0], self.tca[0])
        for k in range(1, len(self.tca)):
            h = ad.add(h, tca_forward(x, self.mu[k], self.tca[k]))
        res = x if self.res_spatial is None else self.res_spatial(x)
        return ad.relu(ad.add(self.bn_spatial(h), res))

    def temporal(self, h):
        res = h if self.res_temporal is None else self.res_temporal(h)
        return ad.relu(ad.add(tf_forward(h, self.tf, self.spec.temporal_stride), res))

    def __call__(self, x):
        return self.temporal(self.spatial(x))


class TCAGCN(Module):
    """Input BN, a stack of TCAF blocks, global (T, N) mean pool, linear classifier."""

    def __init__(self, config, seed=0):
        self.config = config
        graph = load_graph(config.graph)
        self.graph = graph
        partitions = spatial_partition(graph)
        rng = np.random.default_rng(seed)
        self.data_bn = BatchNorm(config.in_channels)
        self.blocks = [TCAFBlock(spec, partitions, rng, config) for spec in config.blocks]
        self.fc = Linear(config.blocks[-1].out_channels, config.num_classes, rng)
        self.min_frames = 2 ** sum(b.temporal_stride == 2 for b in config.blocks)

    def features(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 4:
            raise ad.ShapeError(f"expected (batch, T, N, C) input, got {x.shape}")
        _, t_len, n, c = x.shape
        if n != self.graph.num_joints or c != self.config.in_channels:
            raise ad.ShapeError(
                f"input has {n} joints x {c} channels, model expects "
                f"{self.graph.num_joints} x {self.config.in_channels}"
            )
        if t_len < self.min_frames:
            raise ValueError(f"T={t_len} is too short for the strided stages (need >= {self.min_frames})")
        h = self.data_bn(x)
        for block in self.blocks:
            h = block(h)
        return h

    def __call__(self, x):
        pooled = ad.pool(self.features(x), (1, 2), "mean")
        return self.fc(pooled)


def center_normalize(x, center):
    """Translate each sample so the center joint of the first frame sits at the origin."""
    x = np.asarray(x, dtype=np.float64)
    return x - x[..., :1, center : center + 1, :]


def derive_streams(joints, graph):
    """Joint, bone, joint-motion and bone-motion encodings of ``(..., T, N, C)`` coordinates.

    A bone is the joint minus its parent (zero at the center joint); motion
    is the next frame minus the current one, zero on the last frame.
    """
    joints = np.asarray(joints, dtype=np.float64)
    if graph.parent is None or len(graph.parent) != joints.shape[-2]:
        raise ValueError("graph parent map missing or inconsistent with the joint axis")
    parent = np.array([j if p is None else p for j, p in enumerate(graph.parent)])
    bone = joints - joints[..., parent, :]

    def motion(a):
        m = np.zeros_like(a)
        m[..., :-1, :, :] = a[..., 1:, :, :] - a[..., :-1, :, :]
        return m

    return {"joint": joints, "bone": bone, "joint_motion": motion(joints), "bone_motion": motion(bone)}


@dataclass
class Schedule:
    epochs: int = 65
    batch_size: int = 16
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 4e-4
    warmup_epochs: int = 5
    lr_steps: tuple = (35, 55)
    lr_decay: float = 0.1

    def lr_at(self, epoch):
        """Learning rate for 1-based ``epoch``: linear warmup, then step decays."""
        if epoch <= self.warmup_epochs:
            return self.base_lr * epoch / self.warmup_epochs
        return self.base_lr * self.lr_decay ** sum(epoch > s for s in self.lr_steps)


class SGD:
    """Momentum SGD with coupled L2 weight decay."""

    def __init__(self, params, momentum=0.9, weight_decay=0.0):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros(p.shape) for p in self.params]

    def step(self, lr):
        for p, v in zip(self.params, self.velocity):
            g = p.grad if p.grad is not None else 0.0
            d = g + self.weight_decay * p.data
            v *= self.momentum
            v += d
            p.data = p.data - lr * v


def _batches(n, batch_size, rng):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def evaluate_logits(model, x, batch_size=64):
    """Eval-mode logits; rows that overflow come back non-finite with a warning."""
    was_training = model.training
    model.eval()
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            out = [model(Tensor(x[idx])).data for idx in _batches(len(x), batch_size, None)]
    finally:
        model.train(was_training)
    logits = np.concatenate(out, axis=0)
    bad = int(np.sum(~np.isfinite(logits).all(axis=1)))
    if bad:
        logger.warning("eval-mode forward produced non-finite logits for %d of %d samples", bad, len(logits))
    return logits


def refresh_batch_norm(model, x, batch_size=64):
    """Recompute every BatchNorm's running statistics from ``x`` with the current weights.

    Running averages collected over many SGD steps lag the weights.  Each
    block is close to cubic in its input, so in eval mode a modest mismatch
    compounds through the stack and can overflow.  Batch ``k`` of this pass
    is folded in with momentum ``(k - 1) / k``, which leaves the running
    values equal to the plain average of the per-batch statistics.
    """
    norms = [m for m in model.modules() if isinstance(m, BatchNorm)]
    saved = [m.momentum for m in norms]
    was_training = model.training
    model.train()
    try:
        for k, idx in enumerate(_batches(len(x), batch_size, None), start=1):
            for m in norms:
                m.momentum = (k - 1) / k
            model(Tensor(x[idx]))
    finally:
        for m, momentum in zip(norms, saved):
            m.momentum = momentum
        model.train(was_training)


def accuracy(logits, labels):
    """Fraction of rows whose argmax equals the label; non-finite rows count as wrong."""
    logits = np.asarray(logits)
    finite = np.isfinite(logits).all(axis=1)
    return float(np.mean(finite & (np.argmax(logits, axis=1) == np.asarray(labels))))


def train(
    model,
    x,
    y,
    schedule,
    seed=0,
    x_eval=None,
    y_eval=None,
    target_accuracy=None,
    eval_each_epoch=True,
    refresh_stats=True,
):
    """Fit ``model`` by cross-entropy SGD; returns one metrics dict per epoch.

    Stops early once the epoch's training accuracy reaches
    ``target_accuracy`` (when given).  A non-finite loss raises
    :class:`TrainingDiverged`.  With ``refresh_stats`` the BatchNorm running
    statistics are recomputed from the training set (see
    :func:`refresh_batch_norm`) before each evaluation and after the last
    epoch; the optimization path itself is unaffected.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if len(x) == 0:
        raise ValueError("empty training set")
    if schedule.batch_size < 1:
        raise ValueError("batch size must be >= 1")
    if x_eval is None:
        x_eval, y_eval = x, y
    rng = np.random.default_rng(seed)
    opt = SGD(model.parameters(), schedule.momentum, schedule.weight_decay)
    history = []
    model.train()
    for epoch in range(1, schedule.epochs + 1):
        lr = schedule.lr_at(epoch)
        total, correct = 0.0, 0
        for b, idx in enumerate(_batches(len(x), schedule.batch_size, rng)):
            model.zero_grad()
            logits = model(Tensor(x[idx]))
            loss = ad.cross_entropy(logits, y[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at epoch {epoch}, batch {b} (lr={lr:g})")
            ad.backward(loss)
            opt.step(lr)
            total += value * len(idx)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == y[idx]))
        row = {"epoch": epoch, "lr": lr, "loss": total / len(x), "train_acc": correct / len(x)}
        stop = epoch == schedule.epochs or (target_accuracy is not None and row["train_acc"] >= target_accuracy)
        if refresh_stats and (eval_each_epoch or stop):
            refresh_batch_norm(model, x)
        row["eval_acc"] = accuracy(evaluate_logits(model, x_eval), y_eval) if eval_each_epoch else float("nan")
        history.append(row)
        logger.info("epoch %d lr %.4g loss %.5f train_acc %.3f eval_acc %.3f", *row.values())
        if stop:
            break
    return history


def predict_scores(model, x, y, stream_id="joint"):
    """Eval-mode raw logits for every sample, packaged for fusion."""
    from .fusion import ScoreMatrix

    logits = evaluate_logits(model, np.asarray(x, dtype=np.float64))
    if not np.isfinite(logits).all():
        raise FloatingPointError(f"stream {stream_id!r}: eval-mode logits are not finite")
    return ScoreMatrix(stream_id, logits, np.asarray(y))
