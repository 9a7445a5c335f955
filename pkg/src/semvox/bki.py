"""Sparse semantic voxel map with kernel-weighted Dirichlet updates.

Each voxel stores per-class Dirichlet concentrations. A point cloud is
first binned into a per-voxel class histogram, then every occupied bin
scatters ``weight * count`` into its kernel neighbourhood, class by class
(a depthwise convolution evaluated only where there is evidence).

Kernel weights are snapped to a dyadic grid (multiples of a power of two
about 2**-30 times the largest weight). Every product and sum in the
scatter is then exact, so updates commute bit-for-bit and splitting a
cloud into batches never changes the map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .cloud import SemanticPointCloud
from .errors import ClassOutOfRangeError, ConfigError, InvalidPointError

DEFAULT_RESOLUTION = 0.2
DEFAULT_PRIOR_ALPHA = 0.001
DEFAULT_KERNEL_L = 0.5
DEFAULT_KERNEL_SIGMA0 = 1.0

_WEIGHT_BITS = 30

# voxel keys pack three biased 21-bit indices into one int64
_BITS = 21
_BIAS = 1 << (_BITS - 1)
_MASK = (1 << _BITS) - 1
_MAX_INDEX = _BIAS - 1024


def pack_keys(ijk: np.ndarray) -> np.ndarray:
    ijk = np.asarray(ijk, dtype=np.int64).reshape(-1, 3)
    if len(ijk) and np.abs(ijk).max() > _MAX_INDEX:
        raise InvalidPointError(f"voxel index beyond +/-{_MAX_INDEX}; point too far from the map origin")
    biased = ijk + _BIAS
    return (biased[:, 0] << (2 * _BITS)) | (biased[:, 1] << _BITS) | biased[:, 2]


def unpack_keys(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    out = np.empty((len(keys), 3), dtype=np.int64)
    out[:, 0] = (keys >> (2 * _BITS)) & _MASK
    out[:, 1] = (keys >> _BITS) & _MASK
    out[:, 2] = keys & _MASK
    return out - _BIAS


def _offset_key(offset) -> int:
    i, j, k = (int(x) for x in offset)
    return (i << (2 * _BITS)) + (j << _BITS) + k


def sparse_kernel(d, length_scale: float, sigma0: float):
    """Compactly supported kernel value at distance ``d`` (zero for d >= l)."""
    d = np.asarray(d, dtype=np.float64)
    r = d / length_scale
    two_pi_r = 2.0 * np.pi * r
    k = sigma0 * ((2.0 + np.cos(two_pi_r)) / 3.0 * (1.0 - r) + np.sin(two_pi_r) / (2.0 * np.pi))
    return np.where(d < length_scale, np.maximum(k, 0.0), 0.0)


def snap_weights(weights: np.ndarray) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    top = weights.max(initial=0.0)
    if top <= 0:
        return np.zeros_like(weights)
    quantum = math.ldexp(1.0, math.frexp(top)[1] - _WEIGHT_BITS)
    return np.round(weights / quantum) * quantum


@dataclass(frozen=True, eq=False)
class KernelFilter:
    """Depthwise 3D filter over voxel offsets.

    ``weights`` has shape (classes, 2r+1, 2r+1, 2r+1); a leading size of 1
    means the same spatial weights are shared by every class.
    ``length_scale`` and ``sigma0`` are None for kernels loaded from file.
    """

    weights: np.ndarray
    resolution: float
    length_scale: Optional[float] = None
    sigma0: Optional[float] = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim == 3:
            w = w[None]
        side = w.shape[1]
        if w.ndim != 4 or side % 2 != 1 or w.shape[1:] != (side, side, side):
            raise ConfigError(f"kernel weights must be (C, 2r+1, 2r+1, 2r+1), got {w.shape}")
        if not np.all(np.isfinite(w)) or w.min() < 0:
            raise ConfigError("kernel weights must be finite and non-negative")
        if not self.resolution > 0:
            raise ConfigError(f"kernel resolution must be positive, got {self.resolution}")
        r = side // 2
        if r > 1024:
            raise ConfigError(f"kernel radius {r} exceeds 1024 voxels")
        for c, grid in enumerate(w):
            if not np.array_equal(grid, grid[::-1, ::-1, ::-1]):
                raise ConfigError(f"kernel weights for class {c} are not symmetric under offset negation")
            if grid[r, r, r] < grid.max():
                raise ConfigError(f"kernel weights for class {c} do not peak at the centre offset")
        w = snap_weights(w)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def radius(self) -> int:
        return self.weights.shape[1] // 2

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def tied(self) -> bool:
        return self.weights.shape[0] == 1

    def offsets(self) -> np.ndarray:
        """All (2r+1)**3 offsets in the same order as ``weights[c].ravel()``."""
        r = self.radius
        rng = np.arange(-r, r + 1)
        return np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)


def build_kernel(length_scale: float, sigma0: float, resolution: float) -> KernelFilter:
    if not (length_scale > 0 and sigma0 > 0 and resolution > 0):
        raise ConfigError(
            f"kernel parameters must be positive (l={length_scale}, sigma0={sigma0}, resolution={resolution})"
        )
    # slack so l = n * resolution gives radius n despite division roundoff
    r = int(math.floor(length_scale / resolution * (1 + 1e-12)))
    rng = np.arange(-r, r + 1)
    i, j, k = np.meshgrid(rng, rng, rng, indexing="ij")
    d = resolution * np.sqrt(i * i + j * j + k * k)
    return KernelFilter(sparse_kernel(d, length_scale, sigma0), resolution, length_scale, sigma0)


class VoxelQueryResult(NamedTuple):
    expected_class: int
    probabilities: np.ndarray
    confidence: float
    variance: np.ndarray


class VoxelRecord(NamedTuple):
    i: int
    j: int
    k: int
    expected_class: int
    confidence: float


class UpdateStats(NamedTuple):
    points_used: int
    voxels_touched: int


class VoxelGrid:
    """Sparse map from integer voxel coordinates to stored concentrations.

    The prior is added lazily on read and never stored.
    """

    def __init__(
        self,
        resolution: float = DEFAULT_RESOLUTION,
        num_classes: int = 1,
        origin=(0.0, 0.0, 0.0),
        prior_alpha: float = DEFAULT_PRIOR_ALPHA,
    ):
        if not resolution > 0:
            raise ConfigError(f"voxel resolution must be positive, got {resolution}")
        if num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {num_classes}")
        if not prior_alpha >= 0:
            raise ConfigError(f"prior_alpha must be non-negative, got {prior_alpha}")
        self.resolution = float(resolution)
        self.num_classes = int(num_classes)
        self.origin = np.array(origin, dtype=np.float64).reshape(3)
        self.prior_alpha = float(prior_alpha)
        self._index: dict[int, int] = {}
        self._keys = np.empty(0, dtype=np.int64)
        self._alpha = np.empty((0, self.num_classes))
        self._size = 0

    def __len__(self):
        return self._size

    def __contains__(self, ijk):
        return int(pack_keys(ijk)[0]) in self._index

    def stored_alpha(self, ijk) -> np.ndarray:
        row = self._index.get(int(pack_keys(ijk)[0]))
        if row is None:
            return np.zeros(self.num_classes)
        return self._alpha[row].copy()

    def voxels(self) -> np.ndarray:
        """Stored voxel coordinates, (N, 3), in lexicographic order."""
        return unpack_keys(np.sort(self._keys[: self._size]))

    def snapshot(self) -> dict:
        """Copy of the stored state keyed by (i, j, k), for comparisons."""
        ijk = unpack_keys(self._keys[: self._size])
        return {tuple(int(x) for x in v): self._alpha[row].copy() for row, v in enumerate(ijk)}

    def _rows_for(self, keys: np.ndarray) -> np.ndarray:
        index = self._index
        rows = np.fromiter((index.get(k, -1) for k in keys.tolist()), dtype=np.int64, count=len(keys))
        new = np.flatnonzero(rows < 0)
        if len(new):
            start = self._size
            stop = start + len(new)
            if stop > len(self._keys):
                cap = max(stop, 2 * len(self._keys), 1024)
                keys_buf = np.empty(cap, dtype=np.int64)
                keys_buf[:start] = self._keys[:start]
                alpha_buf = np.zeros((cap, self.num_classes))
                alpha_buf[:start] = self._alpha[:start]
                self._keys, self._alpha = keys_buf, alpha_buf
            rows[new] = np.arange(start, stop)
            self._keys[start:stop] = keys[new]
            index.update(zip(keys[new].tolist(), range(start, stop)))
            self._size = stop
        return rows


def points_to_voxels(points: np.ndarray, grid: VoxelGrid) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(points)):
        raise InvalidPointError("point coordinates must be finite")
    return np.floor((points - grid.origin) / grid.resolution).astype(np.int64)


def point_to_voxel(p, grid: VoxelGrid) -> tuple[int, int, int]:
    i, j, k = points_to_voxels(p, grid)[0]
    return int(i), int(j), int(k)


def update_map(
    grid: VoxelGrid,
    cloud: SemanticPointCloud,
    kernel: KernelFilter,
    ignore_class: Optional[int] = None,
) -> UpdateStats:
    """Fold a labeled cloud into the map. Points of ``ignore_class`` are skipped."""
    C = grid.num_classes
    if not math.isclose(kernel.resolution, grid.resolution, rel_tol=1e-9):
        raise ConfigError(
            f"kernel built for resolution {kernel.resolution} but grid uses {grid.resolution}"
        )
    if kernel.num_classes not in (1, C):
        raise ConfigError(f"kernel has {kernel.num_classes} class grids; map has {C} classes")

    classes = cloud.classes
    if len(classes) and (classes.min() < 0 or classes.max() >= C):
        raise ClassOutOfRangeError(f"cloud class ids must lie in [0, {C})")
    points = cloud.points
    if ignore_class is not None:
        keep = classes != ignore_class
        points, classes = points[keep], classes[keep]
    if len(classes) == 0:
        return UpdateStats(0, 0)

    keys, inverse = np.unique(pack_keys(points_to_voxels(points, grid)), return_inverse=True)
    hist = np.bincount(inverse.ravel() * C + classes, minlength=len(keys) * C).reshape(len(keys), C)

    flat = kernel.weights.reshape(kernel.num_classes, -1)
    live = np.flatnonzero(flat.max(axis=0) > 0)
    offset_keys = np.array([_offset_key(o) for o in kernel.offsets()[live]], dtype=np.int64)
    # packed keys stay linear in the offset because indices are bounded well inside the bias
    targets, tinv = np.unique((keys[:, None] + offset_keys[None, :]).ravel(), return_inverse=True)
    tinv = tinv.ravel()

    delta = np.zeros((len(targets), C))
    for c in np.flatnonzero(hist.any(axis=0)):
        w = flat[0 if kernel.tied else c, live]
        contrib = (hist[:, c, None] * w[None, :]).ravel()
        delta[:, c] = np.bincount(tinv, weights=contrib, minlength=len(targets))

    touched = delta.any(axis=1)
    targets, delta = targets[touched], delta[touched]
    rows = grid._rows_for(targets)
    grid._alpha[rows] += delta
    return UpdateStats(len(classes), len(targets))


def _posterior(stored: np.ndarray, prior: float):
    alpha = stored + prior
    total = alpha.sum(axis=-1, keepdims=True)
    probs = alpha / total
    variance = probs * (1.0 - probs) / (total + 1.0)
    return probs, total[..., 0], variance


def query_voxel(grid: VoxelGrid, v) -> VoxelQueryResult:
    stored = grid.stored_alpha(v)
    if grid.prior_alpha == 0 and not stored.any():
        # zero prior and no evidence: fall back to the symmetric limit
        stored = np.ones_like(stored)
        probs = stored / stored.sum()
        return VoxelQueryResult(0, probs, 0.0, probs * (1.0 - probs))
    probs, total, variance = _posterior(stored, grid.prior_alpha)
    return VoxelQueryResult(int(np.argmax(probs)), probs, float(total), variance)


def export_expected_map(grid: VoxelGrid, min_confidence: float = 0.0) -> list[VoxelRecord]:
    """Records for stored voxels with confidence above ``min_confidence``, sorted by (i, j, k)."""
    if min_confidence < 0:
        raise ValueError(f"min_confidence must be >= 0, got {min_confidence}")
    n = len(grid)
    order = np.argsort(grid._keys[:n], kind="stable")
    probs, total, _ = _posterior(grid._alpha[:n][order], grid.prior_alpha)
    expected = np.argmax(probs, axis=1)
    ijk = unpack_keys(grid._keys[:n][order])
    keep = np.flatnonzero(total > min_confidence)
    return [
        VoxelRecord(int(ijk[r, 0]), int(ijk[r, 1]), int(ijk[r, 2]), int(expected[r]), float(total[r]))
        for r in keep
    ]
