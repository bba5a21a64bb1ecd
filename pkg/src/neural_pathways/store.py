"""Bit-exact model persistence and simulated device-memory accounting.

Weight files (``.npw``) hold one network in a fixed little-endian binary
layout::

    magic "NPW1" | version u32 | activation u8 | layer count u32
    per layer: d_in u32 | d_out u32 | has_slopes u8
               weight (row-major f64) | bias (f64) | slopes (f64, optional)
    crc32 u32 over all preceding bytes

A model directory pairs K weight files with a JSON manifest naming the
prototypes, the per-pathway files and their parameter counts, and an
optional routing-tree recipe.  "Device memory" is simulated by a ledger of
resident / cumulatively loaded parameter counts and prototype distance
queries; parameter counts are numbers of stored scalars.
"""

from __future__ import annotations

import json
import struct
import threading
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .errors import BudgetError, WeightsFileError
from .partition import PrototypeSet, assign
from .routing import RoutingTree, build_tree, tree_route

MAGIC = b"NPW1"
FORMAT_VERSION = 1
_ACT_TAGS = {nn.PRELU: 0, nn.SUPER_EXPRESSIVE: 1}
_ACT_NAMES = {v: k for k, v in _ACT_TAGS.items()}

LEDGER_CSV_HEADER = "peak_resident,total_loaded,prototype_queries"


@dataclass(frozen=True)
class WeightsFile:
    """Handle to one network serialized on disk."""

    path: Path
    param_count: int
    byte_size: int


def _le_f64(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_weights(params: nn.MlpParams, path) -> WeightsFile:
    """Serialize a network; the round trip through :func:`load_weights` is
    bit-identical."""
    path = Path(path)
    out = bytearray()
    out += MAGIC
    out += struct.pack("<IBI", FORMAT_VERSION, _ACT_TAGS[params.activation],
                       len(params.layers))
    for j, layer in enumerate(params.layers):
        d_out, d_in = layer.weight.shape
        has_slopes = layer.slopes is not None
        out += struct.pack("<IIB", d_in, d_out, int(has_slopes))
        out += _le_f64(layer.weight)
        out += _le_f64(layer.bias)
        if has_slopes:
            out += _le_f64(layer.slopes)
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    path.write_bytes(bytes(out))
    return WeightsFile(path, nn.stored_param_count(params.dims), len(out))


def load_weights(path) -> nn.MlpParams:
    """Parse a weight file; refuses wrong magic/version and any checksum
    mismatch (truncated or corrupted files never yield a partial value)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 13 or raw[:4] != MAGIC:
        raise WeightsFileError(f"{path}: not a weights file (bad magic)")
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) != crc:
        raise WeightsFileError(f"{path}: checksum mismatch (truncated or corrupt)")
    version, act_tag, n_layers = struct.unpack_from("<IBI", raw, 4)
    if version != FORMAT_VERSION:
        raise WeightsFileError(f"{path}: unsupported format version {version}")
    if act_tag not in _ACT_NAMES:
        raise WeightsFileError(f"{path}: unknown activation tag {act_tag}")
    offset = 13
    payload = memoryview(raw)[:-4]
    dims: list[int] = []
    layers: list[nn.LayerParams] = []
    try:
        for j in range(n_layers):
            d_in, d_out, has_slopes = struct.unpack_from("<IIB", payload, offset)
            offset += 9

            def take(count):
                nonlocal offset
                arr = np.frombuffer(payload, dtype="<f8", count=count,
                                    offset=offset).astype(np.float64)
                offset += 8 * count
                return arr

            weight = take(d_in * d_out).reshape(d_out, d_in)
            bias = take(d_out)
            slopes = take(d_out) if has_slopes else None
            if not dims:
                dims.append(d_in)
            elif dims[-1] != d_in:
                raise WeightsFileError(f"{path}: layer {j} input width {d_in} "
                                       f"does not chain with {dims[-1]}")
            dims.append(d_out)
            layers.append(nn.LayerParams(weight, bias, slopes))
    except ValueError as exc:  # frombuffer ran out of bytes
        raise WeightsFileError(f"{path}: body shorter than declared layout") from exc
    if offset != len(payload):
        raise WeightsFileError(f"{path}: {len(payload) - offset} trailing bytes")
    return nn.MlpParams(tuple(dims), layers, _ACT_NAMES[act_tag])


MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


@dataclass
class Manifest:
    """Model directory index: prototypes plus per-pathway weight files.

    ``routing`` optionally records ``{"arity": v, "seed": s}`` so the
    routing tree can be rebuilt deterministically.  ``extra`` carries
    free-form reproducibility metadata (e.g. the train/test split seed).
    """

    n: int
    m: int
    prototypes: np.ndarray
    pathway_files: list[str]
    param_counts: list[int]
    routing: dict | None = None
    extra: dict = field(default_factory=dict)
    root: Path | None = None
    version: int = MANIFEST_VERSION

    @property
    def k(self) -> int:
        return len(self.pathway_files)

    def pathway_path(self, i: int) -> Path:
        if self.root is None:
            raise ValueError("manifest is not attached to a directory")
        return self.root / self.pathway_files[i]


def save_manifest(manifest: Manifest, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if len(set(manifest.pathway_files)) != len(manifest.pathway_files):
        raise ValueError("pathway file names must be unique")
    doc = {
        "version": manifest.version,
        "n": manifest.n,
        "m": manifest.m,
        "k": manifest.k,
        "prototypes": manifest.prototypes.tolist(),
        "pathways": [{"file": f, "param_count": c}
                     for f, c in zip(manifest.pathway_files, manifest.param_counts)],
        "routing": manifest.routing,
        "extra": manifest.extra,
    }
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path


def load_manifest(directory) -> Manifest:
    directory = Path(directory)
    doc = json.loads((directory / MANIFEST_NAME).read_text(encoding="utf-8"))
    if doc.get("version") != MANIFEST_VERSION:
        raise WeightsFileError(f"unsupported manifest version {doc.get('version')}")
    files = [p["file"] for p in doc["pathways"]]
    counts = [int(p["param_count"]) for p in doc["pathways"]]
    if len(files) != int(doc["k"]) or len(set(files)) != len(files):
        raise WeightsFileError("manifest pathway entries inconsistent")
    return Manifest(int(doc["n"]), int(doc["m"]),
                    np.asarray(doc["prototypes"], dtype=np.float64),
                    files, counts, doc.get("routing"), doc.get("extra", {}),
                    root=directory)


def save_ensemble(protos: PrototypeSet, nets: list[nn.MlpParams], directory,
                  routing: dict | None = None, extra: dict | None = None) -> Manifest:
    """Write K weight files plus the manifest binding them to the prototypes."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files, counts = [], []
    for i, net in enumerate(nets):
        name = f"pathway_{i:03d}.npw"
        wf = save_weights(net, directory / name)
        files.append(name)
        counts.append(wf.param_count)
    manifest = Manifest(protos.dim, nets[0].out_dim, protos.points.copy(),
                        files, counts, routing, extra or {}, root=directory)
    save_manifest(manifest, directory)
    return manifest


def load_ensemble(directory) -> tuple[PrototypeSet, list[nn.MlpParams]]:
    manifest = load_manifest(directory)
    nets = [load_weights(manifest.pathway_path(i)) for i in range(manifest.k)]
    return PrototypeSet(manifest.prototypes), nets


@dataclass
class MemoryLedger:
    """Resident-parameter accounting for budgeted inference.

    ``resident`` never exceeds ``budget``; ``peak`` tracks the resident
    high-water mark, ``total_loaded`` the cumulative parameters loaded, and
    ``prototype_queries`` the cumulative distance queries.  Prototype
    storage (k * n scalars) is counted separately in ``prototype_params``
    so both accounting conventions stay available.
    """

    budget: int
    resident: int = 0
    peak: int = 0
    total_loaded: int = 0
    prototype_queries: int = 0
    prototype_params: int = 0

    def load(self, count: int) -> None:
        if self.resident + count > self.budget:
            raise BudgetError(f"loading {count} parameters would exceed the "
                              f"budget of {self.budget} ({self.resident} resident)")
        self.resident += count
        self.total_loaded += count
        self.peak = max(self.peak, self.resident)

    def release(self, count: int) -> None:
        self.resident -= count

    @property
    def peak_with_prototypes(self) -> int:
        return self.peak + self.prototype_params

    def csv_row(self) -> str:
        return f"{self.peak},{self.total_loaded},{self.prototype_queries}"


def ledger_report(ledger: MemoryLedger) -> str:
    """Fixed-column CSV (header + one row) for a finalized ledger."""
    return LEDGER_CSV_HEADER + "\n" + ledger.csv_row() + "\n"


class PathwayRunner:
    """Budgeted forward passes over a stored model.

    Each forward routes the input (counting prototype queries), loads
    exactly one pathway's weight file (counted resident and cumulative),
    evaluates it, and releases it again.  Loads are serialized by a lock,
    so concurrent callers queue against the budget and ledger updates stay
    atomic.
    """

    def __init__(self, manifest: Manifest, budget: int, router: str = "brute",
                 exact_tree: bool = False):
        if router not in ("brute", "tree"):
            raise ValueError(f"router must be 'brute' or 'tree', got {router!r}")
        largest = max(manifest.param_counts)
        if budget < largest:
            raise BudgetError(f"budget {budget} is below the largest pathway "
                              f"({largest} parameters)")
        self.manifest = manifest
        self.protos = PrototypeSet(manifest.prototypes)
        self.router = router
        self.exact_tree = exact_tree
        self.tree: RoutingTree | None = None
        if router == "tree":
            spec = manifest.routing or {"arity": 2, "seed": 0}
            self.tree = build_tree(self.protos, int(spec["arity"]), int(spec["seed"]))
        self.ledger = MemoryLedger(budget,
                                   prototype_params=self.protos.k * self.protos.dim)
        self._lock = threading.Lock()

    def _route(self, x) -> tuple[int, int]:
        if self.router == "brute" or self.exact_tree:
            queries = self.protos.k if self.protos.k > 1 else 0
            return assign(x, self.protos), queries
        return tree_route(self.tree, x)

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        index, queries = self._route(x)
        count = self.manifest.param_counts[index]
        with self._lock:
            self.ledger.prototype_queries += queries
            self.ledger.load(count)
        try:
            params = load_weights(self.manifest.pathway_path(index))
            return nn.mlp_forward(params, x)
        finally:
            with self._lock:
                self.ledger.release(count)


def forward_with_budget(manifest: Manifest, x, budget: int,
                        router: str = "brute") -> tuple[np.ndarray, MemoryLedger]:
    """One budgeted forward pass; returns the prediction and its ledger.

    Refuses (before any load) budgets smaller than the largest pathway.
    """
    runner = PathwayRunner(manifest, budget, router)
    prediction = runner.forward(x)
    return prediction, runner.ledger
