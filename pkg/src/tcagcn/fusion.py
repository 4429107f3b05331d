"""Weighted four-stream score fusion with a constrained grid search.

The fused score of sample ``i`` is ``a*r1 + b*r2 + c*r3 + d*r4``; weights
live on the lattice ``{step, 2*step, ..., 1}`` and must satisfy
``b > a > c > d``.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np


class FusionError(ValueError):
    pass


@dataclass
class ScoreMatrix:
    stream_id: str
    scores: np.ndarray  # (num_samples, num_classes)
    labels: np.ndarray  # (num_samples,)
    sample_ids: tuple = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.scores.ndim != 2:
            raise FusionError(f"{self.stream_id}: scores must be 2-D, got {self.scores.shape}")
        if self.labels.shape != (self.scores.shape[0],):
            raise FusionError(f"{self.stream_id}: {self.labels.shape[0]} labels for {self.scores.shape[0]} rows")
        if not np.all(np.isfinite(self.scores)):
            raise FusionError(f"{self.stream_id}: non-finite scores")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.scores.shape[1]):
            raise FusionError(f"{self.stream_id}: labels outside [0, {self.scores.shape[1]})")
        if self.sample_ids is None:
            self.sample_ids = tuple(str(i) for i in range(self.scores.shape[0]))
        else:
            self.sample_ids = tuple(str(s) for s in self.sample_ids)

    @property
    def num_samples(self):
        return self.scores.shape[0]

    @property
    def num_classes(self):
        return self.scores.shape[1]


@dataclass(frozen=True)
class FusionResult:
    weights: tuple
    accuracy: float
    right: int
    zong: int
    tuples_evaluated: int = 1

    def __post_init__(self):
        check_order(self.weights)

    def to_dict(self):
        return {
            "weights": list(self.weights),
            "accuracy": self.accuracy,
            "right": self.right,
            "zong": self.zong,
            "tuples_evaluated": self.tuples_evaluated,
        }


def check_order(weights):
    a, b, c, d = weights
    if not all(0 < w <= 1 for w in weights):
        raise FusionError(f"weights {tuple(weights)} must lie in (0, 1]")
    if not b > a > c > d:
        raise FusionError(f"weights {tuple(weights)} violate b > a > c > d")


def _stack(streams):
    streams = list(streams)
    if len(streams) != 4:
        raise FusionError(f"fusion needs exactly four streams, got {len(streams)}")
    ref = streams[0]
    for s in streams[1:]:
        if s.scores.shape != ref.scores.shape:
            raise FusionError(f"stream {s.stream_id} has shape {s.scores.shape}, expected {ref.scores.shape}")
        if s.sample_ids != ref.sample_ids:
            diff = sorted(set(s.sample_ids) ^ set(ref.sample_ids))
            raise FusionError(f"stream {s.stream_id} sample ids differ from {ref.stream_id}: {diff or 'order'}")
        if not np.array_equal(s.labels, ref.labels):
            raise FusionError(f"stream {s.stream_id} labels differ from {ref.stream_id}")
    if ref.num_samples == 0:
        raise FusionError("no samples to fuse")
    return np.stack([s.scores for s in streams]), ref.labels


def fused_predictions(streams, weights):
    """Argmax of the weighted score sum; exact ties go to the lowest class index."""
    r, _ = _stack(streams)
    a, b, c, d = (float(w) for w in weights)
    y = a * r[0] + b * r[1] + c * r[2] + d * r[3]
    return np.argmax(y, axis=1)


def fuse_accuracy(streams, weights):
    """Return ``(accuracy, right)`` for one positive weight tuple."""
    if any(not w > 0 for w in weights):
        raise FusionError(f"weights must be positive, got {tuple(weights)}")
    r, labels = _stack(streams)
    right = int(np.sum(fused_predictions(streams, weights) == labels))
    return right / len(labels), right


def static_fuse(streams, preset_weights, require_order=False):
    """Accuracy of a fixed preset; ``require_order`` also enforces ``b > a > c > d``."""
    if require_order:
        check_order(preset_weights)
    return fuse_accuracy(streams, preset_weights)


def grid_levels(step=0.05):
    if not 0 < step <= 1:
        raise FusionError(f"step must lie in (0, 1], got {step}")
    count = int(math.floor(1.0 / step + 1e-9))
    return np.round(np.arange(1, count + 1) * step, 12)


def feasible_grid(step=0.05):
    """All ``(a, b, c, d)`` lattice tuples with ``b > a > c > d``, as a ``(M, 4)`` array."""
    levels = grid_levels(step)
    rows = []
    for d, c, a, b in itertools.combinations(range(len(levels)), 4):
        rows.append((levels[a], levels[b], levels[c], levels[d]))
    grid = np.array(rows, dtype=np.float64).reshape(-1, 4)
    if len(grid) == 0:
        raise FusionError(f"no feasible tuples at step {step}: need at least four levels")
    return grid


def _rights(r, labels, weights):
    out = np.empty(len(weights), dtype=np.int64)
    chunk = max(1, 1_000_000 // r[0].size)
    for lo in range(0, len(weights), chunk):
        w = weights[lo : lo + chunk]
        # same association order as fused_predictions, so ties resolve identically
        y = (
            w[:, 0, None, None] * r[0]
            + w[:, 1, None, None] * r[1]
            + w[:, 2, None, None] * r[2]
            + w[:, 3, None, None] * r[3]
        )
        out[lo : lo + chunk] = (np.argmax(y, axis=2) == labels).sum(axis=1)
    return out


def _best(weights, rights):
    # maximize right, then (b, a, c, d) lexicographically
    order = np.lexsort((weights[:, 3], weights[:, 2], weights[:, 0], weights[:, 1], rights))
    return order[-1]


def solve(streams, step=0.05):
    """Exhaustive search of the feasible lattice for the most accurate tuple."""
    r, labels = _stack(streams)
    grid = feasible_grid(step)
    rights = _rights(r, labels, grid)
    i = _best(grid, rights)
    return FusionResult(
        tuple(float(w) for w in grid[i]), int(rights[i]) / len(labels), int(rights[i]), len(labels), len(grid)
    )


DEFAULT_START = (0.6, 0.8, 0.4, 0.2)


def solve_greedy(streams, step=0.05, start=DEFAULT_START):
    """Accept-if-improved coordinate search from ``start``.

    Each sweep tries moving one weight by one lattice step; a move is kept
    only when it is feasible and strictly increases the correct count.
    Stops when a full sweep makes no change.
    """
    r, labels = _stack(streams)
    levels = grid_levels(step)
    idx = [int(np.argmin(np.abs(levels - w))) for w in start]
    check_order(tuple(levels[i] for i in idx))

    def score(ix):
        return int(_rights(r, labels, np.array([[levels[i] for i in ix]]))[0])

    best = score(idx)
    evaluated = 1
    improved = True
    while improved:
        improved = False
        for k in (1, 0, 2, 3):
            for delta in (1, -1):
                cand = list(idx)
                cand[k] += delta
                if not 0 <= cand[k] < len(levels):
                    continue
                a, b, c, d = cand
                if not b > a > c > d:
                    continue
                s = score(cand)
                evaluated += 1
                if s > best:
                    best, idx, improved = s, cand, True
    weights = tuple(float(levels[i]) for i in idx)
    return FusionResult(weights, best / len(labels), best, len(labels), evaluated)
