"""Prototype sets, nearest-prototype assignment, and soft routing weights.

The K prototypes partition input space into cells; a point belongs to the
cell of its nearest prototype, with exact ties resolved to the lowest
prototype index so the cells are disjoint.  Soft routing replaces the hard
argmin with a softmax over negative distances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PrototypeSet:
    """K pairwise-distinct points in R^n.  Immutable after construction."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("prototype set needs a (K, n) array with K >= 1")
        if not np.all(np.isfinite(pts)):
            raise ValueError("prototype coordinates must be finite")
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise ValueError("prototypes must be pairwise distinct")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def k(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def _check_input(x, dim: int):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != dim:
        raise ValueError(f"input shape {x.shape} incompatible with prototype dim {dim}")
    return batch, single


def distances(x, protos: PrototypeSet) -> np.ndarray:
    """Euclidean distances from x (n,) or (N, n) to every prototype."""
    batch, single = _check_input(x, protos.dim)
    diff = batch[:, None, :] - protos.points[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=2))
    return d[0] if single else d


def assign(x, protos: PrototypeSet):
    """Index of the nearest prototype, lowest index on exact ties.

    Accepts a single vector (returns an int) or a batch (returns an int
    array).
    """
    batch, single = _check_input(x, protos.dim)
    diff = batch[:, None, :] - protos.points[None, :, :]
    d2 = np.sum(diff * diff, axis=2)
    idx = np.argmin(d2, axis=1)  # argmin takes the first minimum: lowest index
    return int(idx[0]) if single else idx


def softmax_routing(x, protos: PrototypeSet, temperature: float = 1.0) -> np.ndarray:
    """Softmax of negative prototype distances, stabilized by max-subtraction.

    Returns a probability vector of length K (or an (N, K) matrix for a
    batch); rows sum to 1.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    d = distances(x, protos)
    single = d.ndim == 1
    s = -np.atleast_2d(d) / temperature
    s = s - s.max(axis=1, keepdims=True)
    w = np.exp(s)
    w /= w.sum(axis=1, keepdims=True)
    return w[0] if single else w


def init_prototypes(bounds, k: int, seed: int, max_retries: int = 100) -> PrototypeSet:
    """K points sampled i.i.d. uniformly inside a box, deterministic per seed.

    ``bounds`` is a sequence of per-dimension (low, high) pairs with
    low < high.  The draw is repeated (up to ``max_retries``) if any two
    points coincide; a box too degenerate to yield distinct points raises.
    """
    bounds = np.asarray(bounds, dtype=np.float64)
    if bounds.ndim != 2 or bounds.shape[1] != 2:
        raise ValueError("bounds must be a sequence of (low, high) pairs")
    if not np.all(bounds[:, 0] < bounds[:, 1]):
        raise ValueError("each bound needs low < high")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        pts = rng.uniform(bounds[:, 0], bounds[:, 1], size=(k, bounds.shape[0]))
        if np.unique(pts, axis=0).shape[0] == k:
            return PrototypeSet(pts)
    raise ValueError("could not draw distinct prototypes; box is degenerate")


def _plusplus_seeding(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total == 0:  # cannot happen with >= k distinct samples
            centers[i] = x[rng.integers(n)]
        else:
            centers[i] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((x - centers[i]) ** 2, axis=1))
    return centers


def kmeans(features, k: int, seed: int, max_iters: int = 100, tol: float = 1e-6,
           return_inertia: bool = False):
    """Lloyd iterations from k-means++ seeding.

    Stops when the largest centroid shift drops below ``tol`` or after
    ``max_iters`` iterations.  Empty clusters are re-seeded to the sample
    farthest from its current centroid.  Requires at least ``k`` distinct
    samples.  With ``return_inertia`` also returns the per-iteration
    inertia trace (sum of squared distances to assigned centroids).
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("features must be a nonempty (N, n) matrix")
    if np.unique(x, axis=0).shape[0] < k:
        raise ValueError(f"k-means needs at least {k} distinct samples")
    rng = np.random.default_rng(seed)
    centers = _plusplus_seeding(x, k, rng)

    inertia_trace = []
    for _ in range(max_iters):
        d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(d2, axis=1)
        own = d2[np.arange(x.shape[0]), labels]
        inertia_trace.append(float(own.sum()))
        new_centers = centers.copy()
        empties = []
        for i in range(k):
            mask = labels == i
            if mask.any():
                new_centers[i] = x[mask].mean(axis=0)
            else:
                empties.append(i)
        # empty clusters steal the samples that fit their centroids worst,
        # one distinct sample per empty cluster
        far_order = np.argsort(-own, kind="stable")
        for i, j in zip(empties, far_order):
            new_centers[i] = x[j]
        shift = float(np.max(np.linalg.norm(new_centers - centers, axis=1)))
        centers = new_centers
        if shift < tol:
            break

    # distinct-centroid repair; duplicates are a pathological corner case
    for _ in range(k):
        uniq, first = np.unique(centers, axis=0, return_index=True)
        if uniq.shape[0] == k:
            break
        dup = [i for i in range(k) if i not in set(first)]
        d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        far_order = np.argsort(-d2.min(axis=1), kind="stable")
        for i, j in zip(dup, far_order):
            centers[i] = x[j]

    protos = PrototypeSet(centers)
    return (protos, inertia_trace) if return_inertia else protos


def cell_histogram(assignments, labels, k: int | None = None) -> dict[int, dict[int, int]]:
    """Per-cell class counts ``{cell: {class: count}}``.

    Cells that received no samples are absent unless ``k`` is given, in
    which case every cell in ``range(k)`` appears (empty cells map to an
    empty histogram).
    """
    assignments = np.asarray(assignments, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if assignments.shape != labels.shape:
        raise ValueError("assignments and labels must have equal length")
    hist: dict[int, dict[int, int]] = {}
    if k is not None:
        hist = {cell: {} for cell in range(k)}
    for cell, lab in zip(assignments.tolist(), labels.tolist()):
        hist.setdefault(cell, {})
        hist[cell][lab] = hist[cell].get(lab, 0) + 1
    return hist
