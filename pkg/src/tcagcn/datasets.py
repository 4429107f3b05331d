"""Labeled skeleton datasets: synthetic generation and the manifest + binary file format."""

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import load_graph
from .tensor_io import read_records, write_records


@dataclass
class LabeledDataset:
    samples: np.ndarray  # (num_samples, T, N, 3)
    labels: np.ndarray
    graph: object
    num_classes: int
    sample_ids: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.samples.ndim != 4:
            raise ValueError(f"samples must be (num_samples, T, N, C), got {self.samples.shape}")
        if len(self.labels) != len(self.samples):
            raise ValueError("one label per sample required")
        if self.samples.shape[2] != self.graph.num_joints:
            raise ValueError(
                f"samples have {self.samples.shape[2]} joints, graph {self.graph.name} has {self.graph.num_joints}"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not self.sample_ids:
            self.sample_ids = tuple(f"s{i:05d}" for i in range(len(self.samples)))
        self.sample_ids = tuple(str(s) for s in self.sample_ids)
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ValueError("sample ids must be unique")

    def __len__(self):
        return len(self.samples)


@dataclass
class SyntheticSpec:
    """Per-class sinusoidal joint trajectories around a fixed rest pose.

    Class ``k`` moves every coordinate as
    ``amplitude * sin(2*pi*(k + 1)*t/T + phase[k, n, d])``; samples add
    i.i.d. Gaussian noise of std ``noise``.  The rest pose and phases depend
    only on ``seed``; ``split`` reseeds the noise alone, so splits drawn with
    one ``seed`` share their class archetypes.  Noise-free archetypes are at
    least ``min_distance`` apart in Euclidean norm, so the nearest-archetype
    rule is exact whenever the noise norm stays below half of it; the
    manifest records ``noise_threshold = min_distance / (2 * sqrt(T*N*3))``,
    the per-coordinate std at which the typical noise norm reaches that
    half-distance.
    """

    num_classes: int = 2
    samples_per_class: int = 20
    T: int = 16
    graph: str = "toy9"
    noise: float = 0.05
    amplitude: float = 0.3
    seed: int = 0
    split: int = 0

    def validate(self):
        if self.num_classes < 1 or self.samples_per_class < 1 or self.T < 1:
            raise ValueError("num_classes, samples_per_class and T must be positive")
        if self.seed < 0 or self.split < 0:
            raise ValueError("seed and split must be >= 0")
        if self.noise < 0 or self.amplitude <= 0:
            raise ValueError("noise must be >= 0 and amplitude > 0")
        load_graph(self.graph)


def _archetypes(spec, graph, rng):
    n = graph.num_joints
    depth = np.array(graph.depth, dtype=np.float64)
    # rest pose: joints spread by hop distance with a seeded horizontal offset
    rest = np.stack([rng.uniform(-0.5, 0.5, n), -0.3 * depth, rng.uniform(-0.1, 0.1, n)], axis=1)
    phase = rng.uniform(0, 2 * np.pi, (spec.num_classes, n, 3))
    t = np.arange(spec.T)[:, None, None]
    out = []
    for k in range(spec.num_classes):
        wave = np.sin(2 * np.pi * (k + 1) * t / spec.T + phase[k][None])
        out.append(rest[None] + spec.amplitude * wave)
    return np.stack(out)  # (K, T, N, 3)


def make_synthetic(spec):
    spec.validate()
    graph = load_graph(spec.graph)
    arche = _archetypes(spec, graph, np.random.default_rng(spec.seed))
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    noise_rng = np.random.default_rng([spec.seed, spec.split])
    samples = arche[labels] + spec.noise * noise_rng.standard_normal((len(labels),) + arche.shape[1:])
    flat = arche.reshape(spec.num_classes, -1)
    if spec.num_classes > 1:
        dist = np.sqrt(((flat[:, None] - flat[None]) ** 2).sum(-1))
        min_distance = float(dist[~np.eye(spec.num_classes, dtype=bool)].min())
    else:
        min_distance = float("inf")
    meta = {
        "synthetic": asdict(spec),
        "min_distance": min_distance,
        "noise_threshold": min_distance / (2 * np.sqrt(flat.shape[1])),
    }
    ids = tuple(f"p{spec.split}-{i:05d}" for i in range(len(labels)))
    return LabeledDataset(samples, labels, graph, spec.num_classes, ids, meta=meta)


def save_dataset(path, dataset, graph_ref=None):
    """Write ``path`` (JSON manifest) and ``path + '.bin'`` (tensor records)."""
    bin_path = str(path) + ".bin"
    offsets = write_records(bin_path, list(dataset.samples))
    graph_ref = graph_ref or dataset.graph.to_dict()
    manifest = {
        "graph_ref": graph_ref,
        "num_classes": int(dataset.num_classes),
        "payload": os.path.basename(bin_path),
        "samples": [
            {"id": sid, "label": int(lab), "shape": list(x.shape), "offset": off}
            for sid, lab, x, off in zip(dataset.sample_ids, dataset.labels, dataset.samples, offsets)
        ],
    }
    manifest.update(dataset.meta)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def load_dataset(path):
    with open(path) as fh:
        manifest = json.load(fh)
    for key in ("graph_ref", "num_classes", "samples"):
        if key not in manifest:
            raise ValueError(f"dataset manifest {path} lacks field {key!r}")
    graph = load_graph(manifest["graph_ref"])
    entries = manifest["samples"]
    bin_path = os.path.join(os.path.dirname(str(path)), manifest.get("payload", os.path.basename(str(path)) + ".bin"))
    arrays = read_records(bin_path, [e["offset"] for e in entries])
    for e, a in zip(entries, arrays):
        if list(a.shape) != list(e["shape"]):
            raise ValueError(f"sample {e['id']}: manifest shape {e['shape']} != payload {list(a.shape)}")
    if len({a.shape for a in arrays}) > 1:
        raise ValueError("all samples must share one shape")
    meta = {k: v for k, v in manifest.items() if k not in ("graph_ref", "num_classes", "samples", "payload")}
    return LabeledDataset(
        np.stack(arrays) if arrays else np.zeros((0, 1, graph.num_joints, 3)),
        [e["label"] for e in entries],
        graph,
        manifest["num_classes"],
        tuple(e["id"] for e in entries),
        meta,
    )
