"""Benchmark targets, grids, splits, and feature-file ingestion.

Regression targets are the Ackley and Rastrigin test functions and
fractional-Brownian-motion sample paths (jagged 1-D targets of tunable
Hoelder regularity).  Classification uses a synthetic Gaussian mixture or
externally computed feature files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError

# Generated datasets refuse to exceed this many rows unless overridden
# (the CLI reads the NP_SIZE_CAP environment variable into this argument).
DEFAULT_SIZE_CAP = 10_000_000

_ACKLEY_A = 20.0
_ACKLEY_B = 0.2


@dataclass
class Dataset:
    """Immutable sample container.

    Exactly one of ``targets`` (regression, shape (N, m)) and ``labels``
    (classification, shape (N,)) is set.  ``bounds`` holds per-dimension
    (low, high); it defaults to the componentwise min/max of the inputs.
    """

    inputs: np.ndarray
    targets: np.ndarray | None = None
    labels: np.ndarray | None = None
    bounds: np.ndarray | None = None
    n_classes: int | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError("inputs must be a nonempty (N, n) matrix")
        if (self.targets is None) == (self.labels is None):
            raise ValueError("exactly one of targets/labels must be set")
        n = self.inputs.shape[0]
        if self.targets is not None:
            self.targets = np.asarray(self.targets, dtype=np.float64)
            if self.targets.ndim == 1:
                self.targets = self.targets[:, None]
            if self.targets.shape[0] != n:
                raise ValueError("targets length must match inputs")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ValueError("labels must be a length-N vector")
            if self.n_classes is None:
                self.n_classes = int(self.labels.max()) + 1
        if self.bounds is None:
            self.bounds = np.stack(
                [self.inputs.min(axis=0), self.inputs.max(axis=0)], axis=1)
        else:
            self.bounds = np.asarray(self.bounds, dtype=np.float64)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def take(self, idx) -> "Dataset":
        return Dataset(
            self.inputs[idx],
            None if self.targets is None else self.targets[idx],
            None if self.labels is None else self.labels[idx],
            n_classes=self.n_classes,
        )


def ackley(x) -> np.ndarray:
    """Ackley test function, zero at the origin and positive elsewhere.

    ``20 + e - 20 exp(-0.2 sqrt(mean x_i^2)) - exp(mean cos(2 pi x_i))``.
    Accepts one vector (n,) or a batch (N, n).
    """
    x = np.asarray(x, dtype=np.float64)
    sq = np.mean(x * x, axis=-1)
    cos = np.mean(np.cos(2.0 * np.pi * x), axis=-1)
    return (_ACKLEY_A + np.e
            - _ACKLEY_A * np.exp(-_ACKLEY_B * np.sqrt(sq)) - np.exp(cos))


def rastrigin(x) -> np.ndarray:
    """Rastrigin test function ``sum x_i^2 + 10 (n - sum cos(2 pi x_i))``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    return np.sum(x * x, axis=-1) + 10.0 * (n - np.sum(np.cos(2.0 * np.pi * x), axis=-1))


def _fbm_cov(t_row: np.ndarray, t_col: np.ndarray, hurst: float) -> np.ndarray:
    two_h = 2.0 * hurst
    return 0.5 * (t_row[:, None] ** two_h + t_col[None, :] ** two_h
                  - np.abs(t_row[:, None] - t_col[None, :]) ** two_h)


def _cholesky_jitter(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * max(1.0, float(np.max(np.diag(cov))))
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise ValueError("fBm covariance is not positive definite") from exc


def fbm_path(hurst: float, count: int, seed: int) -> np.ndarray:
    """Fractional Brownian motion sampled at ``count`` equispaced times in
    [0, 1], starting at B(0) = 0.

    Samples exactly by Cholesky factorization of the covariance
    ``0.5 (s^2H + t^2H - |t - s|^2H)``; deterministic per seed.
    """
    if not 0 < hurst < 1:
        raise ValueError(f"hurst must be in (0, 1), got {hurst}")
    if count < 2:
        raise ValueError(f"count must be >= 2, got {count}")
    t = np.linspace(0.0, 1.0, count)[1:]
    chol = _cholesky_jitter(_fbm_cov(t, t, hurst))
    z = np.random.default_rng(seed).standard_normal(count - 1)
    return np.concatenate([[0.0], chol @ z])


def fbm_path_chunked(hurst: float, count: int, seed: int, chunk: int = 1024,
                     history: int = 128) -> np.ndarray:
    """Approximate fBm path for grids too large for one Cholesky factor.

    The path is generated chunk by chunk; each chunk is drawn from the
    Gaussian law conditioned on the last ``history`` generated values
    rather than the full past, which bounds every factorization at
    (chunk + history)^2.  Exact (delegates to :func:`fbm_path`) whenever
    ``count - 1 <= chunk``.
    """
    if count - 1 <= chunk:
        return fbm_path(hurst, count, seed)
    if not 0 < hurst < 1:
        raise ValueError(f"hurst must be in (0, 1), got {hurst}")
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, count)[1:]
    values = np.empty(count - 1)
    done = 0
    while done < count - 1:
        new = slice(done, min(done + chunk, count - 1))
        t_new = t[new]
        if done == 0:
            mean = np.zeros(t_new.shape[0])
            cov = _fbm_cov(t_new, t_new, hurst)
        else:
            hist = slice(max(0, done - history), done)
            t_hist = t[hist]
            c_hh = _fbm_cov(t_hist, t_hist, hurst)
            c_nh = _fbm_cov(t_new, t_hist, hurst)
            # solve against c_hh once for both the mean and the covariance
            jitter = 1e-12 * float(np.max(np.diag(c_hh)))
            c_hh = c_hh + jitter * np.eye(c_hh.shape[0])
            solved = np.linalg.solve(c_hh, np.concatenate(
                [values[hist][:, None], c_nh.T], axis=1))
            mean = c_nh @ solved[:, 0]
            cov = _fbm_cov(t_new, t_new, hurst) - c_nh @ solved[:, 1:]
            cov = 0.5 * (cov + cov.T)
        chol = _cholesky_jitter(cov)
        values[new] = mean + chol @ rng.standard_normal(t_new.shape[0])
        done = new.stop
    return np.concatenate([[0.0], values])


def regular_grid(a: float, b: float, n: int, s: int,
                 max_points: int = DEFAULT_SIZE_CAP) -> np.ndarray:
    """The s^n vertices of the regular grid on [a, b]^n, endpoints included,
    in lexicographic order (first coordinate varies slowest)."""
    if s < 2:
        raise ValueError(f"s must be >= 2, got {s}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if s ** n > max_points:
        raise ValueError(f"grid of {s}^{n} = {s ** n} points exceeds the "
                         f"size cap of {max_points}")
    axis = np.linspace(a, b, s)
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, n)


def split(dataset: Dataset, ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded uniform shuffle followed by a prefix split.

    The two parts are disjoint and together exhaust the dataset; both must
    be nonempty at the given ratio.
    """
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    n = len(dataset)
    n_train = int(round(ratio * n))
    if n_train < 1 or n_train >= n:
        raise ValueError(f"ratio {ratio} leaves an empty part for N={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.take(perm[:n_train]), dataset.take(perm[n_train:])


def gaussian_mixture(classes: int, dim: int, per_class: int, separation: float,
                     seed: int) -> Dataset:
    """Labeled Gaussian blobs with unit isotropic noise.

    Class means sit on a scaled orthogonal simplex so every pair of means
    is exactly ``separation`` apart (requires ``dim >= classes``).  With
    separation 0 all class conditionals coincide.
    """
    if classes < 2:
        raise ValueError(f"classes must be >= 2, got {classes}")
    if dim < classes:
        raise ValueError(f"dim must be >= classes for the simplex construction "
                         f"({dim} < {classes})")
    if per_class < 1:
        raise ValueError(f"per_class must be >= 1, got {per_class}")
    rng = np.random.default_rng(seed)
    means = np.zeros((classes, dim))
    scale = separation / math.sqrt(2.0)
    means[np.arange(classes), np.arange(classes)] = scale
    labels = np.repeat(np.arange(classes), per_class)
    inputs = means[labels] + rng.standard_normal((classes * per_class, dim))
    return Dataset(inputs, labels=labels, n_classes=classes)


def save_features(dataset: Dataset, path) -> None:
    """Write a labeled dataset in the plain-text feature-file format:
    header ``npf <dim> <classes>``, then one ``label f0 f1 ...`` row per
    sample."""
    if dataset.labels is None:
        raise ValueError("feature files hold labeled datasets only")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"npf {dataset.dim} {dataset.n_classes}\n")
        for label, row in zip(dataset.labels, dataset.inputs):
            fh.write(f"{int(label)} " + " ".join(repr(float(v)) for v in row) + "\n")


def load_features(path) -> Dataset:
    """Parse a feature file written by :func:`save_features`.

    Raises :class:`DataFormatError` naming the offending line on any
    malformed row or width mismatch.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "npf":
            raise DataFormatError(f"{path}: line 1: expected header "
                                  f"'npf <dim> <classes>'")
        try:
            dim, classes = int(header[1]), int(header[2])
        except ValueError as exc:
            raise DataFormatError(f"{path}: line 1: bad header numbers") from exc
        rows, labels = [], []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != dim + 1:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {dim + 1} fields, "
                    f"got {len(parts)}")
            try:
                label = int(parts[0])
                row = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: unparsable "
                                      f"field") from exc
            if not 0 <= label < classes:
                raise DataFormatError(f"{path}: line {lineno}: label {label} "
                                      f"out of range [0, {classes})")
            labels.append(label)
            rows.append(row)
    if not rows:
        raise DataFormatError(f"{path}: no samples")
    return Dataset(np.array(rows), labels=np.array(labels), n_classes=classes)


def save_dataset_csv(dataset: Dataset, path) -> None:
    """Dump inputs and targets/labels as CSV with the documented header
    ``x0,...,x{n-1},y`` (``y0..`` for multi-output, ``label`` for labels)."""
    n = dataset.dim
    cols = [f"x{i}" for i in range(n)]
    if dataset.labels is not None:
        cols.append("label")
        body = np.concatenate([dataset.inputs,
                               dataset.labels[:, None].astype(np.float64)], axis=1)
    else:
        m = dataset.targets.shape[1]
        cols.extend(["y"] if m == 1 else [f"y{i}" for i in range(m)])
        body = np.concatenate([dataset.inputs, dataset.targets], axis=1)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in body:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_dataset_csv(path) -> Dataset:
    """Load a CSV written by :func:`save_dataset_csv`."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        n = sum(1 for c in header if c.startswith("x"))
        if n == 0 or header[:n] != [f"x{i}" for i in range(n)]:
            raise DataFormatError(f"{path}: line 1: expected x0..x{{n-1}} columns")
        labeled = header[n:] == ["label"]
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != len(header):
                raise DataFormatError(f"{path}: line {lineno}: expected "
                                      f"{len(header)} fields, got {len(parts)}")
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: unparsable "
                                      f"field") from exc
    if not rows:
        raise DataFormatError(f"{path}: no samples")
    body = np.array(rows)
    if labeled:
        return Dataset(body[:, :n], labels=body[:, n].astype(np.int64))
    return Dataset(body[:, :n], targets=body[:, n:])
