"""Closed-form complexity and VC-dimension calculators.

Every function here is a pure, deterministic evaluation of an explicit
formula.  Conventions used throughout:

* all logarithms are base 2 unless the base is written out;
* real-valued bounds are available both raw and ceiled, and the ceiled
  value is the authoritative one for integer quantities;
* ceilings are guarded against float roundoff (values within 1e-9 of an
  integer snap to it first), and the VC bound ``vc_mlp_dstar`` is
  evaluated at 50 decimal digits so its ceiling is robust.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import mpmath

from .routing import _ceil_guard, height_bound, tree_counts


@dataclass(frozen=True)
class HolderModulus:
    """Modulus of continuity ``w(t) = L * t**alpha`` with alpha in (0, 1]."""

    alpha: float
    L: float

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.L < 0:
            raise ValueError(f"L must be >= 0, got {self.L}")

    def __call__(self, t: float) -> float:
        return self.L * t ** self.alpha


def modulus_inverse(mod: HolderModulus, s: float) -> float:
    """Inverse of ``t -> L * t**alpha``, i.e. ``(s / L) ** (1 / alpha)``."""
    if mod.L == 0:
        raise ValueError("modulus with L = 0 has no inverse")
    if s < 0:
        raise ValueError(f"s must be >= 0, got {s}")
    return (s / mod.L) ** (1.0 / mod.alpha)


class DepthWidth(NamedTuple):
    depth: int
    width: int


def pathway_depth_width(n: int, m: int, eps: float, r: float) -> DepthWidth:
    """Depth ``m * (19 + 2n + 11 * ceil(eps**-r))`` and width
    ``16 * max(n, 3) + m`` of one leaf network at approximation error eps.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    if r < 0:
        raise ValueError(f"r must be >= 0, got {r}")
    depth = m * (19 + 2 * n + 11 * _ceil_guard(eps ** (-r)))
    width = 16 * max(n, 3) + m
    return DepthWidth(depth, width)


def theorem_delta(n: int, m: int, eps: float, r: float, mod: HolderModulus) -> float:
    """Covering radius ``(eps**(-2r/n) / 2) * w_inv(eps / (131 * sqrt(n*m)))``.

    This is the cell radius at which each leaf network of the size given by
    :func:`pathway_depth_width` achieves uniform error eps on its cell.
    With alpha = 1, L = 1, r = 0 and n = m = 1 it reduces to eps / 262.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    return (eps ** (-2.0 * r / n) / 2.0) * modulus_inverse(
        mod, eps / (131.0 * math.sqrt(n * m)))


class TreeComplexity(NamedTuple):
    leaves: int
    height: int
    nodes: int


def tree_complexity(c: float, delta: float, diam: float, v: int) -> TreeComplexity:
    """Leaves, height, and nodes of the v-ary routing tree that covers a set
    of doubling number ``c`` and diameter ``diam`` at radius ``delta``.

    Height comes from :func:`neural_pathways.routing.height_bound`; leaves
    are ``v**height`` and nodes follow the complete-tree identity.
    """
    h = height_bound(c, delta, diam, v)
    leaves, nodes = tree_counts(v, h)
    return TreeComplexity(leaves, h, nodes)


def vc_mlp_dstar(j: int, w: int) -> int:
    """VC-dimension bound for depth-j, width-w PReLU MLPs with 1-D output:

        ceil(j + (j+1) w^2 log2(4e (j+1) w log2(2e (j+1) w)))

    evaluated at 50 decimal digits before taking the ceiling.
    """
    if j < 1 or w < 1:
        raise ValueError("j and w must be >= 1")
    with mpmath.workdps(50):
        jw = mpmath.mpf(j + 1) * w
        inner = mpmath.log(2 * mpmath.e * jw, 2)
        value = j + (j + 1) * mpmath.mpf(w) ** 2 * mpmath.log(4 * mpmath.e * jw * inner, 2)
        return int(mpmath.ceil(value))


def vc_pathways_bound_value(d: int, n: int, leaves: int) -> float:
    """Raw VC bound for prototype-partitioned classifiers:

        8 L log2(max(2, L))^2 * max(d, 2 (n+1) (L-1) log2(3L - 3))

    where ``d`` bounds the VC dimension of the per-cell classifiers and
    ``L`` is the number of cells.  The second max-arm is 0 at L = 1 (the
    limit of x*log(x)).  With L = 1 the bound is exactly 8d.
    """
    if d < 1 or n < 1 or leaves < 1:
        raise ValueError("d, n, and leaves must be >= 1")
    if leaves == 1:
        cells_term = 0.0
    else:
        cells_term = 2.0 * (n + 1) * (leaves - 1) * math.log2(3 * leaves - 3)
    return 8.0 * leaves * math.log2(max(2, leaves)) ** 2 * max(float(d), cells_term)


def vc_pathways_bound(d: int, n: int, leaves: int) -> int:
    """Ceiled (authoritative) version of :func:`vc_pathways_bound_value`."""
    return _ceil_guard(vc_pathways_bound_value(d, n, leaves))


class CurseScaling(NamedTuple):
    relu: float
    pathway_resident: float
    pathway_forward: float


def curse_scaling(n: int, alpha: float, eps: float) -> CurseScaling:
    """Asymptotic scaling terms, evaluated without their hidden constants.

    ``relu = eps**(-n / (2 alpha))`` is the parameter scaling of a single
    ReLU MLP at uniform error eps; a prototype-partitioned model instead
    keeps ``eps**-1`` parameters resident and loads
    ``(n / alpha) * log2(1/eps) / eps`` during a forward pass.  These are
    scaling terms only; the multiplicative constants are unspecified.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if not 0 < eps < 1:
        raise ValueError(f"eps must be in (0, 1), got {eps}")
    relu = eps ** (-n / (2.0 * alpha))
    resident = 1.0 / eps
    forward = (n / alpha) * math.log2(1.0 / eps) / eps
    return CurseScaling(relu, resident, forward)


@dataclass(frozen=True)
class ComplexityEstimate:
    """Joint size estimate: per-leaf network depth/width plus tree shape."""

    depth: int
    width: int
    leaves: int
    height: int
    nodes: int


def complexity_estimate(n: int, m: int, eps: float, r: float, mod: HolderModulus,
                        doubling: float, diam: float, v: int) -> ComplexityEstimate:
    """Compose the calculators into one end-to-end estimate.

    The covering radius comes from :func:`theorem_delta`, the tree that
    realizes it from :func:`tree_complexity`, and the per-leaf network
    size from :func:`pathway_depth_width`.
    """
    depth, width = pathway_depth_width(n, m, eps, r)
    delta = theorem_delta(n, m, eps, r, mod)
    leaves, height, nodes = tree_complexity(doubling, delta, diam, v)
    return ComplexityEstimate(depth, width, leaves, height, nodes)
