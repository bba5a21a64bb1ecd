"""Hierarchical v-ary routing over prototypes and covering-net helpers.

A routing tree lets inference find a (usually nearest) prototype with at
most ``v * height`` distance queries instead of K.  Trees built here are
balanced so the height is ceil(log_v K), giving the ``v * ceil(log_v K)``
query bound.  Descent is greedy on node representatives and is therefore a
heuristic: agreement with exact nearest-prototype assignment is measured,
not guaranteed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .partition import PrototypeSet, kmeans


@dataclass
class TreeNode:
    """One tree node: a representative point, children, and for leaves the
    prototype index it stands for."""

    point: np.ndarray
    children: list["TreeNode"] = field(default_factory=list)
    proto_index: int | None = None

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class RoutingTree:
    arity: int
    root: TreeNode
    n_protos: int

    @property
    def height(self) -> int:
        def depth(node: TreeNode) -> int:
            return 0 if node.is_leaf else 1 + max(depth(c) for c in node.children)
        return depth(self.root)

    def leaf_indices(self) -> list[int]:
        out: list[int] = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node.proto_index)
            else:
                stack.extend(reversed(node.children))
        return out


@dataclass(frozen=True)
class CoveringNet:
    """Centers within ``radius`` of every covered point, pairwise >= radius apart."""

    centers: np.ndarray
    radius: float


def greedy_cover(points, delta: float) -> CoveringNet:
    """Farthest-point selection of a delta-cover with delta-separated centers.

    Starts from the first point and repeatedly adds the point farthest from
    all chosen centers while that distance is >= delta.  On return every
    input point lies within delta of some center.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError("greedy_cover needs a nonempty (N, n) point set")
    if not delta > 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    chosen = [0]
    mind = np.linalg.norm(pts - pts[0], axis=1)
    while True:
        far = int(np.argmax(mind))
        if mind[far] < delta:
            break
        chosen.append(far)
        mind = np.minimum(mind, np.linalg.norm(pts - pts[far], axis=1))
    return CoveringNet(pts[chosen].copy(), float(delta))


def _balanced_groups(points: np.ndarray, arity: int,
                     rng: np.random.Generator) -> list[np.ndarray]:
    """Split row indices of ``points`` into <= arity groups of size
    <= ceil(len/arity).

    K-means (K' = min(arity, n)) finds where the mass sits; the points are
    then ordered by their projection onto the principal spread direction of
    the centroids and chunked into equal slabs.  Chunking (rather than raw
    k-means labels) enforces the capacity that keeps the tree height at
    ceil(log_arity K).
    """
    n = points.shape[0]
    k = min(arity, n)
    cap = -(-n // k)  # ceil(n / k)
    centers = kmeans(points, k, seed=int(rng.integers(2 ** 32))).points
    spread = centers - centers.mean(axis=0)
    _, vecs = np.linalg.eigh(spread.T @ spread)
    proj = (points - points.mean(axis=0)) @ vecs[:, -1]
    order = np.argsort(proj, kind="stable")
    return [np.sort(order[i * cap:(i + 1) * cap])
            for i in range(k) if len(order[i * cap:(i + 1) * cap])]


def build_tree(protos: PrototypeSet, arity: int, seed: int) -> RoutingTree:
    """Recursive balanced k-means grouping of the prototypes.

    Each internal node holds up to ``arity`` children whose representatives
    are the means of their prototype groups; every prototype ends up in
    exactly one leaf.  Group sizes are capped at ceil(size/arity) so the
    tree height is ceil(log_arity K).  Deterministic per seed.
    """
    if arity < 2:
        raise ValueError(f"arity must be >= 2, got {arity}")
    rng = np.random.default_rng(seed)

    def make(indices: np.ndarray) -> TreeNode:
        pts = protos.points[indices]
        if len(indices) == 1:
            return TreeNode(pts[0], proto_index=int(indices[0]))
        children = []
        for group in _balanced_groups(pts, arity, rng):
            child = make(indices[group])
            child.point = protos.points[indices[group]].mean(axis=0)
            children.append(child)
        return TreeNode(pts.mean(axis=0), children=children)

    root = make(np.arange(protos.k, dtype=np.int64))
    return RoutingTree(arity, root, protos.k)


def tree_route(tree: RoutingTree, x) -> tuple[int, int]:
    """Greedy descent: enter the nearest child representative at each node.

    Ties go to the lowest child index.  Returns the reached leaf's
    prototype index and the number of distance queries performed.
    """
    x = np.asarray(x, dtype=np.float64)
    node = tree.root
    queries = 0
    while not node.is_leaf:
        reps = np.stack([c.point for c in node.children])
        d2 = np.sum((reps - x) ** 2, axis=1)
        queries += len(node.children)
        node = node.children[int(np.argmin(d2))]
    return node.proto_index, queries


def tree_counts(v: int, h: int) -> tuple[int, int]:
    """Leaves and nodes of the complete v-ary tree of height h.

    ``leaves = v**h`` and ``nodes = (v**(h+1) - 1) / (v - 1)``, evaluated
    in exact integer arithmetic (no overflow).
    """
    if v < 2:
        raise ValueError(f"v must be >= 2, got {v}")
    if h < 0:
        raise ValueError(f"h must be >= 0, got {h}")
    leaves = v ** h
    nodes = (v ** (h + 1) - 1) // (v - 1)
    return leaves, nodes


def tree_nodes_variant(v: int, h: int) -> float:
    """Same numerator as ``tree_counts`` over ``h - 1`` instead of ``v - 1``.

    Not a valid complete-tree node count in general (already wrong at
    v=2, h=3: the true count is 15, this gives 7.5); exposed only so the
    two denominator conventions can be compared side by side.  Undefined
    at h = 1.
    """
    if v < 2:
        raise ValueError(f"v must be >= 2, got {v}")
    if h == 1:
        return math.inf
    return (v ** (h + 1) - 1) / (h - 1)


def _ceil_guard(x: float, tol: float = 1e-9) -> int:
    """Ceiling that snaps values within ``tol`` of an integer first.

    Keeps formula ceilings robust against float roundoff (e.g.
    0.1**-1 = 10.000000000000002 must ceil to 10, not 11).
    """
    nearest = round(x)
    if abs(x - nearest) <= tol * max(1.0, abs(x)):
        return int(nearest)
    return math.ceil(x)


def height_bound(c: float, delta: float, diam: float, v: int) -> int:
    """Height ceil(log_v(c) * (1 + log2(diam/delta))), clamped at >= 0.

    ``c`` is the doubling number of the covered set (> 1), ``delta`` the
    target covering radius, ``diam`` the set diameter.  All logs are base
    2 except the explicit base-v one.  ``delta > diam`` is permitted: the
    log term then goes negative and the result clamps at 0.
    """
    if not c > 1:
        raise ValueError(f"doubling number must be > 1, got {c}")
    if not delta > 0 or not diam > 0:
        raise ValueError("delta and diam must be > 0")
    if v < 2:
        raise ValueError(f"v must be >= 2, got {v}")
    value = (math.log2(c) / math.log2(v)) * (1.0 + math.log2(diam / delta))
    return max(0, _ceil_guard(value))
