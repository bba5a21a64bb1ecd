"""Shared test oracles, kept independent of the library code paths.

The forward/gradient oracles here re-implement the network semantics from
scratch (explicit loops, finite differences) so the library is checked
against a second, separately written evaluation path.
"""

import numpy as np

from neural_pathways import nn


def affine_chain(params, x):
    """Composition of the affine maps only (ignores every activation)."""
    h = np.asarray(x, dtype=np.float64)
    for layer in params.layers:
        h = layer.weight @ h + layer.bias
    return h


def relu_forward(params, x):
    """Independent evaluation with hard ReLU in place of the activations."""
    h = np.asarray(x, dtype=np.float64)
    last = len(params.layers) - 1
    for j, layer in enumerate(params.layers):
        h = layer.weight @ h + layer.bias
        if j != last:
            h = np.maximum(h, 0.0)
    return h


def forward_with_preacts(params, x):
    """Loop-based forward returning (output, pre-activations per layer)."""
    h = np.asarray(x, dtype=np.float64)
    zs = []
    last = len(params.layers) - 1
    for j, layer in enumerate(params.layers):
        z = layer.weight @ h + layer.bias
        zs.append(z)
        if j == last:
            h = z
        else:
            h = np.where(z >= 0, z, layer.slopes * z)
    return h, zs


def numeric_net_grads(params, x, upstream, h=1e-6):
    """Central finite differences of sum(upstream * forward) over every
    stored parameter.  Mutates and restores the arrays in place."""
    def objective():
        return float(np.sum(np.asarray(upstream) * nn.mlp_forward(params, x)))

    grads = []
    for layer in params.layers:
        fields = {}
        for name in ("weight", "bias", "slopes"):
            arr = getattr(layer, name)
            if arr is None:
                fields[name] = None
                continue
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + h
                fp = objective()
                arr[idx] = orig - h
                fm = objective()
                arr[idx] = orig
                g[idx] = (fp - fm) / (2.0 * h)
            fields[name] = g
        grads.append(nn.LayerParams(**fields))
    return grads


def max_rel_err(analytic, numeric, tiny=1e-6, tiny_abs=1e-8):
    """Worst relative error between two arrays; entries where both are
    below ``tiny`` must instead agree to ``tiny_abs`` absolutely."""
    a = np.asarray(analytic).ravel()
    n = np.asarray(numeric).ravel()
    scale = np.maximum(np.abs(a), np.abs(n))
    big = scale > tiny
    assert np.all(np.abs(a - n)[~big] < tiny_abs), "near-zero entries disagree"
    if not big.any():
        return 0.0
    return float(np.max(np.abs(a - n)[big] / scale[big]))


def grad_buffers_rel_err(analytic, numeric, tiny=1e-6):
    worst = 0.0
    for ga, gn in zip(analytic, numeric):
        for name in ("weight", "bias", "slopes"):
            aa, nn_ = getattr(ga, name), getattr(gn, name)
            if aa is None:
                continue
            worst = max(worst, max_rel_err(aa, nn_, tiny=tiny))
    return worst


def random_net(rng, max_width=8, max_hidden=3, n_in=None, n_out=None,
               activation=nn.PRELU):
    """A random small network with random (nonzero) slopes."""
    hidden = [int(rng.integers(1, max_width + 1))
              for _ in range(int(rng.integers(1, max_hidden + 1)))]
    dims = ([n_in or int(rng.integers(1, max_width + 1))] + hidden
            + [n_out or int(rng.integers(1, max_width + 1))])
    net = nn.init_mlp(tuple(dims), seed=int(rng.integers(2 ** 31)),
                      activation=activation)
    for layer in net.layers:
        layer.bias = 0.1 * rng.standard_normal(layer.bias.shape)
        if layer.slopes is not None:
            layer.slopes = rng.uniform(0.1, 1.5, layer.slopes.shape)
    return net


def input_away_from_kinks(net, rng, margin=1e-3, tries=200):
    """An input whose pre-activations all stay ``margin`` away from zero."""
    for _ in range(tries):
        x = rng.uniform(-1.5, 1.5, net.in_dim)
        _, zs = forward_with_preacts(net, x)
        if all(np.all(np.abs(z) > margin) for z in zs[:-1]):
            return x
    raise AssertionError("could not find a kink-free input")
