"""Dense MLPs with trainable per-unit activation slopes.

A network is described by a multi-index ``(d_0, ..., d_{J+1})`` of layer
widths.  Every layer but the last applies an elementwise trainable
activation; the final layer is purely affine and therefore stores no
slopes.  Two activation families are supported:

* ``prelu``: identity on the positive half-line, ``alpha * x`` on the
  negative one.  Slope 1 reduces it to the identity, slope 0 to ReLU.
* ``super-expressive``: ``alpha * x + (1 - alpha) * s(x)`` where ``s`` is
  periodic (``x mod 2``) for ``x >= 0`` and saturating (``x / (|x| + 1)``)
  for ``x < 0``.  Slope 1 again gives the identity.

All arithmetic is 64-bit.  Every function here is pure: parameters are
never mutated, updates return new values, and the same ``MlpParams`` can
be evaluated from many threads at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TrainingError

PRELU = "prelu"
SUPER_EXPRESSIVE = "super-expressive"
ACTIVATIONS = (PRELU, SUPER_EXPRESSIVE)

# Default negative-half slope for freshly initialized PReLU units.
DEFAULT_PRELU_SLOPE = 0.25


def check_multi_index(dims) -> tuple[int, ...]:
    """Validate a multi-index of layer widths and return it as a tuple."""
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2:
        raise ValueError(f"multi-index needs at least 2 entries, got {dims}")
    if any(d < 1 for d in dims):
        raise ValueError(f"multi-index entries must be >= 1, got {dims}")
    return dims


@dataclass
class LayerParams:
    """One affine layer: ``weight`` (d_out, d_in), ``bias`` (d_out,), and
    per-output-unit ``slopes`` (d_out,) or None on the final affine layer.

    Also reused as the per-layer container for gradients and optimizer
    moments, which are shaped exactly like the parameters they track.
    """

    weight: np.ndarray
    bias: np.ndarray
    slopes: np.ndarray | None

    def copy(self) -> "LayerParams":
        s = None if self.slopes is None else self.slopes.copy()
        return LayerParams(self.weight.copy(), self.bias.copy(), s)


@dataclass
class MlpParams:
    """All parameters of one network plus its activation kind."""

    dims: tuple[int, ...]
    layers: list[LayerParams]
    activation: str = PRELU

    def __post_init__(self):
        self.dims = check_multi_index(self.dims)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.layers) != len(self.dims) - 1:
            raise ValueError(
                f"expected {len(self.dims) - 1} layers for dims {self.dims}, "
                f"got {len(self.layers)}"
            )
        last = len(self.layers) - 1
        for j, layer in enumerate(self.layers):
            d_in, d_out = self.dims[j], self.dims[j + 1]
            if layer.weight.shape != (d_out, d_in) or layer.bias.shape != (d_out,):
                raise ValueError(f"layer {j} shapes inconsistent with dims {self.dims}")
            if j == last:
                if layer.slopes is not None:
                    raise ValueError("final affine layer must not carry slopes")
            elif layer.slopes is None or layer.slopes.shape != (d_out,):
                raise ValueError(f"layer {j} needs one slope per output unit")

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def copy(self) -> "MlpParams":
        return MlpParams(self.dims, [l.copy() for l in self.layers], self.activation)


# Gradients and Adam moments reuse the LayerParams layout.
GradientBuffer = list


@dataclass
class OptimizerState:
    """Adam first/second moment accumulators shaped like the parameters."""

    m: list[LayerParams]
    v: list[LayerParams]
    step: int = 0


def prelu(x, alpha):
    """PReLU: ``x`` where ``x >= 0``, else ``alpha * x``.  Elementwise."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, alpha * x)


def super_expressive(x, alpha):
    """Trainable periodic/saturating activation ``alpha*x + (1-alpha)*s(x)``.

    ``s(x) = x mod 2`` (taken in [0, 2)) for ``x >= 0`` and
    ``s(x) = x / (|x| + 1)`` for ``x < 0``.
    """
    x = np.asarray(x, dtype=np.float64)
    s = np.where(x >= 0, np.mod(x, 2.0), x / (np.abs(x) + 1.0))
    return alpha * x + (1.0 - alpha) * s


def _activate(z: np.ndarray, slopes: np.ndarray, kind: str) -> np.ndarray:
    if kind == PRELU:
        return np.where(z >= 0, z, slopes * z)
    s = np.where(z >= 0, np.mod(z, 2.0), z / (np.abs(z) + 1.0))
    return slopes * z + (1.0 - slopes) * s


def _activate_grads(z, slopes, kind):
    """Return (d_out/d_z, d_out/d_slope) for the elementwise activation.

    At the PReLU kink (z = 0) the positive branch is used, i.e. slope 1.
    """
    if kind == PRELU:
        dz = np.where(z >= 0, 1.0, slopes)
        dslope = np.where(z >= 0, 0.0, z)
        return dz, dslope
    s = np.where(z >= 0, np.mod(z, 2.0), z / (np.abs(z) + 1.0))
    ds = np.where(z >= 0, 1.0, 1.0 / (1.0 - z) ** 2)
    dz = slopes + (1.0 - slopes) * ds
    dslope = z - s
    return dz, dslope


def _as_batch(x, d0: int):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != d0:
        raise ValueError(f"input shape {x.shape} incompatible with input dim {d0}")
    return batch, single


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """Evaluate the network on a vector (d0,) or a batch (N, d0)."""
    h, single = _as_batch(x, params.in_dim)
    last = len(params.layers) - 1
    for j, layer in enumerate(params.layers):
        z = h @ layer.weight.T + layer.bias
        h = z if j == last else _activate(z, layer.slopes, params.activation)
    return h[0] if single else h


def mlp_backward(params: MlpParams, x, upstream) -> list[LayerParams]:
    """Exact gradients of ``sum(upstream * mlp_forward(params, x))``.

    ``upstream`` has shape (d_out,) for a single input or (N, d_out) for a
    batch; batch gradients are summed over the batch.  Returns one
    LayerParams-shaped gradient entry per layer.
    """
    h, single = _as_batch(x, params.in_dim)
    up = np.asarray(upstream, dtype=np.float64)
    up = up[None, :] if single else up
    if up.shape != (h.shape[0], params.out_dim):
        raise ValueError(f"upstream shape {up.shape} incompatible with output "
                         f"dim {params.out_dim} and batch {h.shape[0]}")

    last = len(params.layers) - 1
    hs = [h]  # post-activation inputs to each layer
    zs = []  # pre-activations
    for j, layer in enumerate(params.layers):
        z = hs[-1] @ layer.weight.T + layer.bias
        zs.append(z)
        hs.append(z if j == last else _activate(z, layer.slopes, params.activation))

    grads: list[LayerParams] = [None] * len(params.layers)  # type: ignore[list-item]
    delta = up  # d loss / d (layer output)
    for j in range(last, -1, -1):
        layer = params.layers[j]
        if j == last:
            dz = delta
            dslopes = None
        else:
            act_dz, act_dslope = _activate_grads(zs[j], layer.slopes, params.activation)
            dz = delta * act_dz
            dslopes = (delta * act_dslope).sum(axis=0)
        grads[j] = LayerParams(dz.T @ hs[j], dz.sum(axis=0), dslopes)
        if j > 0:
            delta = dz @ layer.weight
    return grads


def param_count(dims) -> int:
    """Nominal parameter count ``sum_j d_j * (d_{j+1} + 2)``.

    This is the count used by the complexity accounting, where every layer
    is charged a weight block plus two vectors.  The number of scalars
    actually stored is smaller because the final affine layer has no
    slopes and biases live on the output side; see
    :func:`stored_param_count` for that figure.
    """
    dims = check_multi_index(dims)
    return sum(dims[j] * (dims[j + 1] + 2) for j in range(len(dims) - 1))


def stored_param_count(dims) -> int:
    """Number of scalars an MlpParams with these dims actually stores."""
    dims = check_multi_index(dims)
    total = 0
    last = len(dims) - 2
    for j in range(len(dims) - 1):
        d_in, d_out = dims[j], dims[j + 1]
        total += d_in * d_out + d_out
        if j != last:
            total += d_out  # slopes
    return total


def init_mlp(dims, seed: int, scheme: str = "uniform", activation: str = PRELU,
             slope_init: float | None = None) -> MlpParams:
    """Build a network deterministically from a seed.

    ``scheme`` is ``"uniform"`` (weights uniform in +-sqrt(6/(fan_in+fan_out)),
    biases zero) or ``"zeros"``.  Slopes start at ``slope_init``, defaulting
    to 0.25 for PReLU and to 1.0 (the identity) for the super-expressive
    activation.
    """
    dims = check_multi_index(dims)
    if scheme not in ("uniform", "zeros"):
        raise ValueError(f"unknown init scheme {scheme!r}")
    if slope_init is None:
        slope_init = DEFAULT_PRELU_SLOPE if activation == PRELU else 1.0
    rng = np.random.default_rng(seed)
    layers = []
    last = len(dims) - 2
    for j in range(len(dims) - 1):
        d_in, d_out = dims[j], dims[j + 1]
        if scheme == "zeros":
            weight = np.zeros((d_out, d_in))
        else:
            limit = math.sqrt(6.0 / (d_in + d_out))
            weight = rng.uniform(-limit, limit, size=(d_out, d_in))
        bias = np.zeros(d_out)
        slopes = None if j == last else np.full(d_out, float(slope_init))
        layers.append(LayerParams(weight, bias, slopes))
    return MlpParams(dims, layers, activation)


def deepen(params: MlpParams, insert_count: int, noise_scale: float,
           seed: int) -> MlpParams:
    """Insert near-identity square layers just before the final affine layer.

    Each inserted layer has width ``d_J`` (the final layer's input width),
    weight = identity, bias = 0, and slope = 1, all perturbed by Gaussian
    noise of scale ``noise_scale``.  Slope 1 makes the inserted activation
    exactly linear, so with ``noise_scale = 0`` the deepened network
    computes the same function as the original, pointwise.
    """
    if insert_count < 1:
        raise ValueError(f"insert_count must be >= 1, got {insert_count}")
    if noise_scale < 0:
        raise ValueError(f"noise_scale must be >= 0, got {noise_scale}")
    rng = np.random.default_rng(seed)
    w = params.dims[-2]
    new_dims = params.dims[:-1] + (w,) * insert_count + (params.dims[-1],)
    inserted = []
    for _ in range(insert_count):
        weight = np.eye(w) + noise_scale * rng.standard_normal((w, w))
        bias = noise_scale * rng.standard_normal(w)
        slopes = 1.0 + noise_scale * rng.standard_normal(w)
        inserted.append(LayerParams(weight, bias, slopes))
    layers = [l.copy() for l in params.layers[:-1]] + inserted + [params.layers[-1].copy()]
    return MlpParams(new_dims, layers, params.activation)


def scale_output(params: MlpParams, scale, shift) -> MlpParams:
    """Post-compose the network with ``y -> scale * y + shift`` exactly.

    Folds an affine output transform into the final layer; used to map a
    network trained on standardized targets back to raw target units.
    """
    scale = np.broadcast_to(np.asarray(scale, dtype=np.float64), (params.out_dim,))
    shift = np.broadcast_to(np.asarray(shift, dtype=np.float64), (params.out_dim,))
    out = params.copy()
    final = out.layers[-1]
    final.weight = scale[:, None] * final.weight
    final.bias = scale * final.bias + shift
    return out


def zeros_like_params(params: MlpParams) -> list[LayerParams]:
    """A gradient/moment buffer of zeros shaped like ``params``."""
    out = []
    for layer in params.layers:
        s = None if layer.slopes is None else np.zeros_like(layer.slopes)
        out.append(LayerParams(np.zeros_like(layer.weight),
                               np.zeros_like(layer.bias), s))
    return out


def init_adam_state(params: MlpParams) -> OptimizerState:
    return OptimizerState(zeros_like_params(params), zeros_like_params(params), 0)


def _adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    m_new = beta1 * m + (1.0 - beta1) * g
    v_new = beta2 * v + (1.0 - beta2) * g * g
    m_hat = m_new / (1.0 - beta1 ** t)
    v_hat = v_new / (1.0 - beta2 ** t)
    return p - lr * m_hat / (np.sqrt(v_hat) + eps), m_new, v_new


def adam_step(params: MlpParams, grads: list[LayerParams], state: OptimizerState,
              lr: float, betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8) -> tuple[MlpParams, OptimizerState]:
    """One Adam update.  Pure: returns new parameters and new state.

    Rejects non-finite gradients before touching any accumulator, naming
    the offending layer and field.
    """
    beta1, beta2 = betas
    for j, g in enumerate(grads):
        for name in ("weight", "bias", "slopes"):
            arr = getattr(g, name)
            if arr is not None and not np.all(np.isfinite(arr)):
                raise TrainingError(
                    f"non-finite gradient in layer {j} field {name}; update rejected"
                )
    t = state.step + 1
    new_layers, new_m, new_v = [], [], []
    for layer, g, m, v in zip(params.layers, grads, state.m, state.v):
        w, mw, vw = _adam_update(layer.weight, g.weight, m.weight, v.weight,
                                 t, lr, beta1, beta2, eps)
        b, mb, vb = _adam_update(layer.bias, g.bias, m.bias, v.bias,
                                 t, lr, beta1, beta2, eps)
        if layer.slopes is None:
            s = ms = vs = None
        else:
            s, ms, vs = _adam_update(layer.slopes, g.slopes, m.slopes, v.slopes,
                                     t, lr, beta1, beta2, eps)
        new_layers.append(LayerParams(w, b, s))
        new_m.append(LayerParams(mw, mb, ms))
        new_v.append(LayerParams(vw, vb, vs))
    return (MlpParams(params.dims, new_layers, params.activation),
            OptimizerState(new_m, new_v, t))
