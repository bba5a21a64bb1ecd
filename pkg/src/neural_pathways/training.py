"""Two-stage training of prototype-routed network ensembles.

Stage 1 jointly optimizes K shallow networks and the K prototype
locations by descending an energy: the task loss applied to the
softmax-of-negative-distance combination of all K network outputs.
Stage 2 freezes the prototypes, deepens every network with near-identity
layers, and then trains each network independently on the samples of its
own cell (cells may be processed concurrently; results do not depend on
scheduling because each cell's RNG stream is derived only from the seed
and the cell index).
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import Dataset
from .errors import TrainingError
from .partition import PrototypeSet, assign, cell_histogram, init_prototypes, kmeans
from .routing import RoutingTree, tree_route

MSE = "mse"
CE = "ce"
WEIGHTED_CE = "weighted-ce"
LOSSES = (MSE, CE, WEIGHTED_CE)

REPORT_CSV_HEADER = "epoch,stage,cell,loss"
_STAGE1_CELL = -1  # report rows for the joint stage carry no single cell


@dataclass
class TrainConfig:
    """Knobs for both training stages.

    ``batch_size=None`` means full-batch.  The stage-1 networks have
    ``stage1_hidden_layers`` hidden layers of width ``hidden_width``;
    deepening inserts ``insert_count`` further identity-initialized layers,
    so pathways end up with ``stage1_hidden_layers + insert_count`` hidden
    layers.
    """

    learning_rate: float = 1e-3
    batch_size: int | None = None
    epochs_stage1: int = 200
    epochs_stage2: int = 500
    temperature: float = 1.0
    noise_scale: float = 1e-3
    insert_count: int = 2
    loss: str = MSE
    hidden_width: int = 64
    stage1_hidden_layers: int = 1
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    standardize_targets: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs_stage1 < 0 or self.epochs_stage2 < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 or None")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.insert_count < 1:
            raise ValueError("insert_count must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.hidden_width < 1 or self.stage1_hidden_layers < 1:
            raise ValueError("hidden_width and stage1_hidden_layers must be >= 1")


@dataclass
class PathwayEnsemble:
    """K prototypes bound to K networks sharing input/output dimensions."""

    protos: PrototypeSet
    nets: list[nn.MlpParams]

    def __post_init__(self):
        if len(self.nets) != self.protos.k:
            raise ValueError("one network per prototype required")
        n, m = self.nets[0].in_dim, self.nets[0].out_dim
        if any(net.in_dim != n or net.out_dim != m for net in self.nets):
            raise ValueError("all networks must share input and output dims")
        if n != self.protos.dim:
            raise ValueError("network input dim must match prototype dim")

    @property
    def k(self) -> int:
        return self.protos.k


@dataclass
class TrainReport:
    """Loss curves per (stage, cell), cell sample counts, final metrics."""

    rows: list[tuple[int, int, int, float]] = field(default_factory=list)
    cell_counts: dict[int, int] = field(default_factory=dict)
    metrics: dict[str, float] = field(default_factory=dict)

    def record(self, epoch: int, stage: int, cell: int, loss: float) -> None:
        if loss < 0:
            raise ValueError("losses are non-negative")
        self.rows.append((epoch, stage, cell, loss))

    def merge(self, other: "TrainReport") -> "TrainReport":
        return TrainReport(self.rows + other.rows,
                           {**self.cell_counts, **other.cell_counts},
                           {**self.metrics, **other.metrics})

    def stage_losses(self, stage: int) -> list[float]:
        return [loss for _, s, _, loss in self.rows if s == stage]

    def to_csv(self) -> str:
        lines = [REPORT_CSV_HEADER]
        lines += [f"{e},{s},{c},{repr(l)}" for e, s, c, l in self.rows]
        return "\n".join(lines) + "\n"


def mse(pred, y) -> float:
    """Mean squared componentwise error."""
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if pred.shape != y.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {y.shape}")
    return float(np.mean((pred - y) ** 2))


def cross_entropy(logits, label: int, weights=None) -> float:
    """Numerically stabilized negative log-softmax at the true label,
    optionally scaled by a per-class weight."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise ValueError(f"label {label} out of range for {logits.shape[-1]} classes")
    z = logits - logits.max()
    lse = math.log(np.exp(z).sum())
    w = 1.0 if weights is None else float(np.asarray(weights)[label])
    return w * (lse - float(z[label]))


def class_weights(histogram: dict[int, int]) -> dict[int, float]:
    """Per-class weights inversely proportional to the class counts of one
    cell: ``total / (present * count_c)`` (0 for absent classes).

    The count-weighted mean over the cell's samples is exactly 1, so the
    weighting rebalances classes without rescaling the overall loss.
    """
    present = {c: n for c, n in histogram.items() if n > 0}
    if not present:
        raise ValueError("cannot weight an empty cell")
    total = sum(present.values())
    return {c: total / (len(present) * n) for c, n in present.items()}


def _weights_array(histogram: dict[int, int], n_classes: int) -> np.ndarray:
    w = np.zeros(n_classes)
    for c, v in class_weights(histogram).items():
        w[c] = v
    return w


def _loss_grad(pred: np.ndarray, y: np.ndarray, kind: str,
               weights: np.ndarray | None = None):
    """Mean loss over the batch and its gradient w.r.t. ``pred``."""
    n = pred.shape[0]
    if kind == MSE:
        diff = pred - y
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size
    labels = y.astype(np.int64).ravel()
    z = pred - pred.max(axis=1, keepdims=True)
    ez = np.exp(z)
    softmax = ez / ez.sum(axis=1, keepdims=True)
    logp = z - np.log(ez.sum(axis=1, keepdims=True))
    w = np.ones(n) if weights is None else weights[labels]
    loss = float(np.mean(-w * logp[np.arange(n), labels]))
    grad = softmax.copy()
    grad[np.arange(n), labels] -= 1.0
    grad *= (w / n)[:, None]
    return loss, grad


def _check_finite_forward(outs: np.ndarray, cell: int | None = None) -> None:
    if not np.all(np.isfinite(outs)):
        bad = int(np.argwhere(~np.isfinite(outs))[0][0])
        where = "" if cell is None else f" (cell {cell})"
        raise TrainingError(f"non-finite forward value at sample {bad}{where}")


def _energy_loss(x, y, proto_points, nets, kind, temperature, weights=None):
    """Energy loss plus exact gradients for the networks and prototypes.

    The prediction for each sample is the softmax(-distance/temperature)
    weighted combination of all K network outputs; gradients flow through
    both the networks and the prototype coordinates (the distance gradient
    at a coinciding sample/prototype is taken as 0).
    """
    n_samples, k = x.shape[0], proto_points.shape[0]
    outs = np.stack([nn.mlp_forward(net, x) for net in nets], axis=1)  # (N, K, m)
    _check_finite_forward(outs)
    diff = x[:, None, :] - proto_points[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))  # (N, K)
    s = -dist / temperature
    s -= s.max(axis=1, keepdims=True)
    w = np.exp(s)
    w /= w.sum(axis=1, keepdims=True)

    pred = np.einsum("nk,nkm->nm", w, outs)
    loss, dpred = _loss_grad(pred, y, kind, weights)

    net_grads = [nn.mlp_backward(net, x, w[:, i, None] * dpred)
                 for i, net in enumerate(nets)]

    d_w = np.einsum("nm,nkm->nk", dpred, outs)
    d_s = w * (d_w - np.sum(w * d_w, axis=1, keepdims=True))
    d_dist = -d_s / temperature
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(dist[:, :, None] > 0, diff / dist[:, :, None], 0.0)
    proto_grad = -np.einsum("nk,nkd->kd", d_dist, unit)
    return loss, net_grads, proto_grad


def energy_loss(batch, ensemble: PathwayEnsemble, loss: str = MSE,
                temperature: float = 1.0, weights=None):
    """Public wrapper over the energy objective.

    ``batch`` is an ``(x, y)`` pair of arrays.  Returns
    ``(scalar_loss, per_network_gradients, prototype_gradients)``.
    """
    if loss not in LOSSES:
        raise ValueError(f"loss must be one of {LOSSES}, got {loss!r}")
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    x, y = batch
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    kind = MSE if loss == MSE else CE
    if kind == MSE:
        y = np.asarray(y, dtype=np.float64)
        y = y[:, None] if y.ndim == 1 else y
    return _energy_loss(x, y, ensemble.protos.points, ensemble.nets,
                        kind, temperature, weights)


def _child_seed(*keys: int) -> int:
    return int(np.random.SeedSequence(keys).generate_state(1)[0])


def _batches(n: int, batch_size: int | None, rng: np.random.Generator | None):
    if batch_size is None or batch_size >= n:
        yield np.arange(n)
        return
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _targets_for(data: Dataset) -> np.ndarray:
    return data.targets if data.targets is not None else data.labels


def _loss_kind(cfg: TrainConfig) -> str:
    return MSE if cfg.loss == MSE else CE


def build_shallow_ensemble(protos: PrototypeSet, n: int, m: int,
                           cfg: TrainConfig) -> PathwayEnsemble:
    """K shallow networks (stage-1 architecture) bound to given prototypes."""
    dims = (n,) + (cfg.hidden_width,) * cfg.stage1_hidden_layers + (m,)
    nets = [nn.init_mlp(dims, seed=_child_seed(cfg.seed, 1, i))
            for i in range(protos.k)]
    return PathwayEnsemble(protos, nets)


def output_dim(data: Dataset) -> int:
    return data.n_classes if data.labels is not None else data.targets.shape[1]


def discover_prototypes(data: Dataset, k: int, cfg: TrainConfig,
                        ) -> tuple[PathwayEnsemble, TrainReport]:
    """Stage 1: jointly train prototype locations and K shallow networks.

    Prototypes start uniform inside the training-input bounding box; both
    they and the networks follow Adam on the energy loss for
    ``cfg.epochs_stage1`` epochs.  With 0 epochs the initialization is
    returned unchanged.  The returned prototypes are frozen (immutable)
    from here on.
    """
    if len(data) < 1:
        raise ValueError("data must be nonempty")
    protos = init_prototypes(data.bounds, k, seed=_child_seed(cfg.seed, 0))
    ensemble = build_shallow_ensemble(protos, data.dim, output_dim(data), cfg)
    x, y = data.inputs, _targets_for(data)
    kind = _loss_kind(cfg)

    nets = list(ensemble.nets)
    states = [nn.init_adam_state(net) for net in nets]
    points = protos.points.copy()
    p_m, p_v, p_t = np.zeros_like(points), np.zeros_like(points), 0
    rng = np.random.default_rng(_child_seed(cfg.seed, 2))
    report = TrainReport()

    for epoch in range(cfg.epochs_stage1):
        batch_losses = []
        for idx in _batches(len(data), cfg.batch_size, rng):
            loss, net_grads, proto_grad = _energy_loss(
                x[idx], y[idx], points, nets, kind, cfg.temperature)
            batch_losses.append(loss)
            for i in range(k):
                nets[i], states[i] = nn.adam_step(
                    nets[i], net_grads[i], states[i], cfg.learning_rate,
                    cfg.betas, cfg.adam_eps)
            if not np.all(np.isfinite(proto_grad)):
                raise TrainingError("non-finite prototype gradient; update rejected")
            p_t += 1
            points, p_m, p_v = _adam_array(points, proto_grad, p_m, p_v, p_t, cfg)
        report.record(epoch, 1, _STAGE1_CELL, float(np.mean(batch_losses)))

    return PathwayEnsemble(PrototypeSet(points), nets), report


def _adam_array(p, g, m, v, t, cfg: TrainConfig):
    beta1, beta2 = cfg.betas
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps), m, v


def deepen_ensemble(ensemble: PathwayEnsemble, cfg: TrainConfig) -> PathwayEnsemble:
    """Deepen every network with ``cfg.insert_count`` near-identity layers."""
    nets = [nn.deepen(net, cfg.insert_count, cfg.noise_scale,
                      seed=_child_seed(cfg.seed, 3, i))
            for i, net in enumerate(ensemble.nets)]
    return PathwayEnsemble(ensemble.protos, nets)


def _train_single(net: nn.MlpParams, x: np.ndarray, y: np.ndarray,
                  cfg: TrainConfig, epochs: int, seed: int, kind: str,
                  weights: np.ndarray | None = None, cell: int | None = None):
    """Adam-train one network on one sample set; returns (net, epoch_losses)."""
    state = nn.init_adam_state(net)
    rng = np.random.default_rng(seed)
    losses = []
    for _ in range(epochs):
        batch_losses = []
        for idx in _batches(x.shape[0], cfg.batch_size, rng):
            pred = nn.mlp_forward(net, x[idx])
            _check_finite_forward(pred, cell)
            loss, dpred = _loss_grad(pred, y[idx], kind, weights)
            grads = nn.mlp_backward(net, x[idx], dpred)
            net, state = nn.adam_step(net, grads, state, cfg.learning_rate,
                                      cfg.betas, cfg.adam_eps)
            batch_losses.append(loss)
        losses.append(float(np.mean(batch_losses)))
    return net, losses


def train_pathways(data: Dataset, ensemble: PathwayEnsemble, cfg: TrainConfig,
                   jobs: int = 1) -> tuple[PathwayEnsemble, TrainReport]:
    """Stage 2: train each network independently on its own cell's samples.

    Prototypes are already frozen; the data is partitioned by nearest
    prototype and network k sees only cell k.  Cells may run concurrently
    (``jobs`` worker threads); each cell's RNG stream depends only on
    (cfg.seed, cell index), so results are identical for any job count.
    Empty cells leave their network untouched and are reported with a
    warning.
    """
    x, y = data.inputs, _targets_for(data)
    cells = assign(x, ensemble.protos)
    kind = _loss_kind(cfg)
    report = TrainReport()
    report.cell_counts = {k: int(np.sum(cells == k)) for k in range(ensemble.k)}

    weights_per_cell: dict[int, np.ndarray | None] = dict.fromkeys(range(ensemble.k))
    if cfg.loss == WEIGHTED_CE:
        if data.labels is None:
            raise ValueError("weighted-ce requires a labeled dataset")
        hists = cell_histogram(cells, y, k=ensemble.k)
        for k in range(ensemble.k):
            if hists[k]:
                weights_per_cell[k] = _weights_array(hists[k], output_dim(data))

    def work(k: int):
        mask = cells == k
        return _train_single(ensemble.nets[k], x[mask], y[mask], cfg,
                             cfg.epochs_stage2, _child_seed(cfg.seed, 4, k),
                             kind, weights_per_cell[k], cell=k)

    nonempty = [k for k in range(ensemble.k) if report.cell_counts[k] > 0]
    for k in range(ensemble.k):
        if report.cell_counts[k] == 0:
            warnings.warn(f"cell {k} received no samples; its pathway keeps "
                          f"its deepened initialization")

    results: dict[int, tuple[nn.MlpParams, list[float]]] = {}
    if jobs > 1 and len(nonempty) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for k, res in zip(nonempty, pool.map(work, nonempty)):
                results[k] = res
    else:
        for k in nonempty:
            results[k] = work(k)

    nets = list(ensemble.nets)
    for k, (net, losses) in results.items():
        nets[k] = net
        for epoch, loss in enumerate(losses):
            report.record(epoch, 2, k, loss)
    report.rows.sort(key=lambda r: (r[1], r[2], r[0]))
    return PathwayEnsemble(ensemble.protos, nets), report


def baseline_width(width: int, k: int) -> int:
    """Baseline hidden width ``round(width * sqrt(k))``, so its hidden-layer
    parameter count matches the K pathways combined."""
    return int(round(width * math.sqrt(k)))


def train_baseline(data: Dataset, k: int, cfg: TrainConfig,
                   ) -> tuple[nn.MlpParams, TrainReport]:
    """Single network with pathway depth and width ``hidden_width * sqrt(k)``,
    trained on all the data with the same optimizer settings (stage-2
    epoch budget).  Class weighting does not apply (there are no cells),
    so ``weighted-ce`` falls back to plain cross-entropy here."""
    width = baseline_width(cfg.hidden_width, k)
    depth = cfg.stage1_hidden_layers + cfg.insert_count
    dims = (data.dim,) + (width,) * depth + (output_dim(data),)
    net = nn.init_mlp(dims, seed=_child_seed(cfg.seed, 5))
    x, y = data.inputs, _targets_for(data)

    scale = _TargetScale.fit(data, cfg)
    net, losses = _train_single(net, x, scale.apply(y), cfg, cfg.epochs_stage2,
                                _child_seed(cfg.seed, 5, 1), _loss_kind(cfg))
    net = scale.fold_into(net)
    report = TrainReport(cell_counts={0: len(data)})
    for epoch, loss in enumerate(losses):
        report.record(epoch, 2, 0, loss)
    return net, report


@dataclass
class _TargetScale:
    """Per-output standardization folded back into final layers afterwards."""

    mean: np.ndarray | None
    std: np.ndarray | None

    @classmethod
    def fit(cls, data: Dataset, cfg: TrainConfig) -> "_TargetScale":
        if data.targets is None or not cfg.standardize_targets:
            return cls(None, None)
        mean = data.targets.mean(axis=0)
        std = data.targets.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def apply(self, y: np.ndarray) -> np.ndarray:
        return y if self.mean is None else (y - self.mean) / self.std

    def scaled(self, data: Dataset) -> Dataset:
        if self.mean is None:
            return data
        return Dataset(data.inputs, targets=self.apply(data.targets),
                       bounds=data.bounds, n_classes=data.n_classes)

    def fold_into(self, net: nn.MlpParams) -> nn.MlpParams:
        return net if self.mean is None else nn.scale_output(net, self.std, self.mean)


def run_training(data: Dataset, k: int, cfg: TrainConfig, jobs: int = 1,
                 ) -> tuple[PathwayEnsemble, TrainReport]:
    """The full pipeline: discover prototypes, deepen, train per cell.

    Regression targets are standardized on this (training) data before
    optimization and the scaling is folded back into each network's final
    affine layer, so the returned ensemble predicts in raw target units.
    """
    scale = _TargetScale.fit(data, cfg)
    scaled = scale.scaled(data)
    ensemble, rep1 = discover_prototypes(scaled, k, cfg)
    ensemble = deepen_ensemble(ensemble, cfg)
    ensemble, rep2 = train_pathways(scaled, ensemble, cfg, jobs=jobs)
    nets = [scale.fold_into(net) for net in ensemble.nets]
    return PathwayEnsemble(ensemble.protos, nets), rep1.merge(rep2)


def run_kmeans_training(data: Dataset, k: int, cfg: TrainConfig, jobs: int = 1,
                        ) -> tuple[PathwayEnsemble, TrainReport]:
    """Pipeline variant with k-means prototypes instead of the energy stage.

    Used for classification on structured feature spaces: prototypes are
    the k-means centroids of the training inputs, the shallow networks are
    deepened immediately, and only the per-cell stage runs.
    """
    protos = kmeans(data.inputs, k, seed=_child_seed(cfg.seed, 6))
    scale = _TargetScale.fit(data, cfg)
    scaled = scale.scaled(data)
    ensemble = build_shallow_ensemble(protos, data.dim, output_dim(data), cfg)
    ensemble = deepen_ensemble(ensemble, cfg)
    ensemble, report = train_pathways(scaled, ensemble, cfg, jobs=jobs)
    nets = [scale.fold_into(net) for net in ensemble.nets]
    return PathwayEnsemble(ensemble.protos, nets), report


def soft_predict(ensemble: PathwayEnsemble, x, temperature: float = 1.0) -> np.ndarray:
    """Softmax-of-negative-distance combination of all K network outputs.

    This is the stage-1 prediction (every network contributes, weighted by
    proximity); hard routing via :func:`infer` is what inference uses.  The
    output lies componentwise in the convex hull of the K individual
    predictions.
    """
    from .partition import softmax_routing

    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    w = np.atleast_2d(softmax_routing(batch, ensemble.protos, temperature))
    outs = np.stack([nn.mlp_forward(net, batch) for net in ensemble.nets], axis=1)
    pred = np.einsum("nk,nkm->nm", w, outs)
    return pred[0] if single else pred


def infer(ensemble: PathwayEnsemble, x, router: str = "brute",
          tree: RoutingTree | None = None, exact_tree: bool = False) -> np.ndarray:
    """Route each input to one pathway and evaluate only that network.

    ``router="brute"`` scans all prototypes; ``router="tree"`` descends the
    given routing tree unless ``exact_tree`` forces the brute-force route.
    """
    if router not in ("brute", "tree"):
        raise ValueError(f"router must be 'brute' or 'tree', got {router!r}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if router == "brute" or exact_tree:
        cells = np.atleast_1d(assign(batch, ensemble.protos))
    else:
        if tree is None:
            raise ValueError("tree router requires a routing tree")
        cells = np.array([tree_route(tree, row)[0] for row in batch])
    out = np.empty((batch.shape[0], ensemble.nets[0].out_dim))
    for k in np.unique(cells):
        mask = cells == k
        out[mask] = nn.mlp_forward(ensemble.nets[k], batch[mask])
    return out[0] if single else out


def evaluate(model, dataset: Dataset, metric: str) -> float:
    """Mean metric (``"mse"`` or ``"accuracy"``) of a model on a dataset.

    ``model`` may be a PathwayEnsemble, a bare MlpParams, or any callable
    mapping an (N, n) batch to predictions.
    """
    if len(dataset) < 1:
        raise ValueError("dataset must be nonempty")
    if isinstance(model, PathwayEnsemble):
        pred = infer(model, dataset.inputs)
    elif isinstance(model, nn.MlpParams):
        pred = nn.mlp_forward(model, dataset.inputs)
    else:
        pred = np.asarray(model(dataset.inputs))
    if metric == "mse":
        return mse(pred, dataset.targets)
    if metric == "accuracy":
        return float(np.mean(np.argmax(pred, axis=1) == dataset.labels))
    raise ValueError(f"metric must be 'mse' or 'accuracy', got {metric!r}")
