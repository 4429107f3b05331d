"""Run configuration: one JSON file per run plus command-line overrides."""

import json
from dataclasses import asdict, dataclass, fields

from .network import STREAMS


class ConfigError(ValueError):
    pass


def _int_tuple(v):
    return tuple(int(x) for x in v)


@dataclass(frozen=True)
class RunConfig:
    # files
    dataset: str = None
    eval_dataset: str = None
    checkpoint: str = None
    out: str = None
    # graph and synthetic data
    graph: str = "toy9"
    num_classes: int = 2
    samples_per_class: int = 20
    frames: int = 16
    noise: float = 0.05
    amplitude: float = 0.3
    split: int = 0
    # network
    widths: tuple = (16, 32, 64)
    counts: tuple = (4, 3, 3)
    width_scale: float = 1.0
    blocks: tuple = None
    reduction_q: int = 8
    reduction: int = 2
    reduction_aff: int = 4
    corr_activation: str = "relu"
    calib_activation: str = "relu"
    # training
    stream: str = "joint"
    streams: tuple = STREAMS
    normalize: bool = True
    epochs: int = 40
    batch_size: int = 16
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 4e-4
    warmup_epochs: int = 5
    lr_steps: tuple = (20, 30)
    target_accuracy: float = None
    refresh_bn: bool = True
    seed: int = 0
    # fusion
    step: float = 0.05
    mode: str = "exact"
    preset: tuple = None
    stream_order: tuple = STREAMS
    # inspection
    sample_id: str = None
    block: int = 0

    def __post_init__(self):
        conv = {
            "widths": _int_tuple,
            "counts": _int_tuple,
            "lr_steps": _int_tuple,
            "streams": tuple,
            "stream_order": tuple,
            "preset": lambda v: tuple(float(x) for x in v),
            "blocks": lambda v: tuple(_int_tuple(b) for b in v),
        }
        for name, fn in conv.items():
            value = getattr(self, name)
            if value is not None:
                try:
                    object.__setattr__(self, name, fn(value))
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"{name}: {exc}") from None
        try:
            self.validate()
        except TypeError as exc:
            raise ConfigError(f"badly typed config value: {exc}") from None

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.num_classes >= 1 and self.samples_per_class >= 1 and self.frames >= 1,
             "num_classes, samples_per_class and frames must be positive")
        need(self.noise >= 0 and self.amplitude > 0, "noise must be >= 0 and amplitude > 0")
        need(len(self.widths) == len(self.counts) and self.widths, "widths and counts must be non-empty and equal length")
        need(all(w > 0 for w in self.widths) and all(c > 0 for c in self.counts), "widths and counts must be positive")
        need(self.width_scale > 0, "width_scale must be positive")
        need(self.blocks is None or all(len(b) == 3 for b in self.blocks), "blocks entries are (in, out, stride)")
        need(min(self.reduction_q, self.reduction, self.reduction_aff) >= 1, "reductions must be >= 1")
        for name in ("corr_activation", "calib_activation"):
            need(getattr(self, name) in ("relu", "tanh", "sigmoid"), f"{name} must be relu, tanh or sigmoid")
        need(self.stream in STREAMS, f"stream must be one of {STREAMS}")
        need(self.streams and set(self.streams) <= set(STREAMS), f"streams must be drawn from {STREAMS}")
        need(sorted(self.stream_order) == sorted(STREAMS), f"stream_order must be a permutation of {STREAMS}")
        need(self.epochs >= 1 and self.batch_size >= 1 and self.warmup_epochs >= 0, "bad epochs/batch_size/warmup")
        need(self.base_lr > 0 and 0 <= self.momentum < 1 and self.weight_decay >= 0, "bad optimizer settings")
        need(self.target_accuracy is None or 0 < self.target_accuracy <= 1, "target_accuracy must lie in (0, 1]")
        need(0 < self.step <= 1, "step must lie in (0, 1]")
        need(self.mode in ("exact", "greedy"), "mode must be exact or greedy")
        need(self.preset is None or (len(self.preset) == 4 and all(w > 0 for w in self.preset)),
             "preset must be four positive weights")
        need(self.block >= 0, "block must be >= 0")
        need(isinstance(self.graph, str), "graph must be a template name or JSON path")
        need(self.seed >= 0 and self.split >= 0, "seed and split must be >= 0")

    def scaled_widths(self):
        """Stage widths times ``width_scale``, rounded to a multiple of 4 (at least 4)."""
        return tuple(max(4, 4 * round(w * self.width_scale / 4)) for w in self.widths)

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = [list(x) if isinstance(x, tuple) else x for x in v]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None

    @classmethod
    def load(cls, path=None, overrides=None):
        """Defaults, then the JSON file at ``path``, then ``overrides`` (None values skipped)."""
        data = {}
        if path is not None:
            with open(path) as fh:
                text = fh.read()
            data = cls.from_json(text).to_dict()
        for k, v in (overrides or {}).items():
            if v is not None:
                data[k] = v
        return cls.from_dict(data)
