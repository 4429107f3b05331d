"""Skeleton trees and their spatial-configuration partition."""

import json
from collections import deque
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

TEMPLATES = ("ntu25", "nwucla20", "toy9", "toy5")


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class SkeletonGraph:
    """A tree over ``num_joints`` joints rooted at ``center``.

    ``parent[center]`` is ``None``; ``depth`` holds hop distances to the center.
    """

    num_joints: int
    edges: tuple
    center: int
    parent: tuple
    depth: tuple
    name: str = field(default="custom", compare=False)

    def adjacency(self):
        a = np.zeros((self.num_joints, self.num_joints))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def relabel(self, perm):
        """Graph with joint ``j`` renamed ``perm[j]``."""
        perm = [int(p) for p in perm]
        if sorted(perm) != list(range(self.num_joints)):
            raise GraphError("perm must be a permutation of the joint indices")
        edges = [(perm[i], perm[j]) for i, j in self.edges]
        return build_graph(edges, self.num_joints, perm[self.center], name=self.name)

    def to_dict(self):
        return {
            "name": self.name,
            "num_joints": self.num_joints,
            "center": self.center,
            "edges": [list(e) for e in self.edges],
        }


@dataclass(frozen=True)
class PartitionedAdjacency:
    masks: np.ndarray  # (3, N, N) 0/1; row = receiving joint, column = neighbor
    normalized: np.ndarray  # (3, N, N)

    @property
    def num_subsets(self):
        return self.masks.shape[0]


def build_graph(edge_list, num_joints, center_joint, name="custom"):
    n = int(num_joints)
    if n < 2:
        raise GraphError(f"need at least 2 joints, got {n}")
    if not 0 <= center_joint < n:
        raise GraphError(f"center joint {center_joint} out of range for {n} joints")
    edges, seen = [], set()
    nbrs = [[] for _ in range(n)]
    for e in edge_list:
        i, j = int(e[0]), int(e[1])
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"edge ({i}, {j}) references a joint outside [0, {n})")
        if i == j:
            raise GraphError(f"self-loop at joint {i}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise GraphError(f"duplicate edge {key}")
        seen.add(key)
        edges.append((i, j))
        nbrs[i].append(j)
        nbrs[j].append(i)
    parent = [None] * n
    depth = [-1] * n
    depth[center_joint] = 0
    queue = deque([center_joint])
    while queue:
        u = queue.popleft()
        for v in sorted(nbrs[u]):
            if depth[v] < 0:
                depth[v] = depth[u] + 1
                parent[v] = u
                queue.append(v)
    if min(depth) < 0:
        missing = [v for v in range(n) if depth[v] < 0]
        raise GraphError(f"graph is disconnected; unreachable joints {missing}")
    if len(edges) != n - 1:
        raise GraphError(f"graph has a cycle ({len(edges)} edges for {n} joints)")
    return SkeletonGraph(n, tuple(edges), int(center_joint), tuple(parent), tuple(depth), name)


def load_graph(source):
    """Load a graph from a template name, a JSON path, or an already-parsed dict."""
    if isinstance(source, SkeletonGraph):
        return source
    if isinstance(source, dict):
        cfg = source
    elif source in TEMPLATES:
        cfg = json.loads(resources.files("tcagcn.data").joinpath(f"{source}.json").read_text())
    else:
        with open(source) as fh:
            cfg = json.load(fh)
    try:
        return build_graph(cfg["edges"], cfg["num_joints"], cfg["center"], name=cfg.get("name", "custom"))
    except KeyError as exc:
        raise GraphError(f"graph config is missing field {exc}") from None


def spatial_partition(graph):
    """Split ``A + I`` into root, centripetal and centrifugal masks.

    For receiving joint ``i`` and neighbor ``j``: the self-loop is the root
    subset; ``j`` no farther from the center than ``i`` is centripetal (equal
    distances included); ``j`` farther is centrifugal.
    """
    n = graph.num_joints
    masks = np.zeros((3, n, n))
    masks[0] = np.eye(n)
    depth = graph.depth
    for a, b in graph.edges:
        for i, j in ((a, b), (b, a)):
            k = 1 if depth[j] <= depth[i] else 2
            masks[k, i, j] = 1.0
    return PartitionedAdjacency(masks, np.stack([normalize_adjacency(m) for m in masks]))


def normalize_adjacency(mask):
    """Symmetric degree normalization ``D_r^{-1/2} M D_c^{-1/2}``.

    ``D_r`` and ``D_c`` hold row and column sums; a zero degree counts as
    infinite so its row or column stays zero.  For a symmetric mask both are
    the usual degree matrix.
    """
    m = np.asarray(mask, dtype=np.float64)
    rows, cols = m.sum(axis=1), m.sum(axis=0)
    with np.errstate(divide="ignore"):
        r = np.where(rows > 0, 1.0 / np.sqrt(rows), 0.0)
        c = np.where(cols > 0, 1.0 / np.sqrt(cols), 0.0)
    return r[:, None] * m * c[None, :]
