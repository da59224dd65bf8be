"""Canonical point cloud extraction from a density grid.

Stands in for sampling a pre-trained model's canonical density: rasterize an
analytic field onto a voxel grid, threshold it, and seed randomly initialized
per-point features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage as ndi

from .errors import DataError, EmptySceneError

DEFAULT_THRESHOLD = 0.05
DEFAULT_FEATURE_DIM = 32
MIN_RES = 2
MAX_RES = 128


@dataclass
class DensityGrid:
    dims: tuple[int, int, int]
    bbox: np.ndarray  # (2, 3): [min, max] world corners
    values: np.ndarray  # (X, Y, Z), sigma >= 0

    def __post_init__(self):
        self.bbox = np.asarray(self.bbox, dtype=np.float64).reshape(2, 3)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != tuple(self.dims):
            raise DataError(f"grid values shape {self.values.shape} != dims {self.dims}")
        if min(self.dims) < 2:
            raise DataError(f"grid needs >=2 voxels per axis, got {self.dims}")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise DataError("grid densities must be finite and non-negative")

    @property
    def voxel_size(self) -> np.ndarray:
        return (self.bbox[1] - self.bbox[0]) / np.asarray(self.dims)

    def centers(self) -> np.ndarray:
        """Voxel center coordinates, shape (X, Y, Z, 3)."""
        axes = [
            self.bbox[0, i] + (np.arange(self.dims[i]) + 0.5) * self.voxel_size[i]
            for i in range(3)
        ]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    def interpolate(self, x: np.ndarray) -> np.ndarray:
        """Trilinear interpolation at world points (N, 3); 0 outside the bbox."""
        u = (np.asarray(x) - self.bbox[0]) / self.voxel_size - 0.5
        lo = np.floor(u).astype(np.int64)
        frac = u - lo
        out = np.zeros(x.shape[:-1])
        for corner in range(8):
            off = np.array([(corner >> k) & 1 for k in range(3)])
            idx = lo + off
            valid = np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=-1)
            w = np.prod(np.where(off == 1, frac, 1.0 - frac), axis=-1)
            ic = np.clip(idx, 0, np.asarray(self.dims) - 1)
            out += np.where(valid, w * self.values[ic[..., 0], ic[..., 1], ic[..., 2]], 0.0)
        return out


@dataclass
class BinaryVolume:
    """Thresholded, cleaned occupancy mask with its world placement."""

    mask: np.ndarray  # (X, Y, Z) bool
    bbox: np.ndarray

    def __post_init__(self):
        self.bbox = np.asarray(self.bbox, dtype=np.float64).reshape(2, 3)
        self.mask = np.asarray(self.mask, dtype=bool)

    @property
    def voxel_size(self) -> np.ndarray:
        return (self.bbox[1] - self.bbox[0]) / np.asarray(self.mask.shape)

    def world_coords(self, ijk: np.ndarray) -> np.ndarray:
        return self.bbox[0] + (np.asarray(ijk, dtype=np.float64) + 0.5) * self.voxel_size


@dataclass
class FeaturePointCloud:
    points: np.ndarray  # (N, 3)
    features: np.ndarray  # (N, F)
    raw_weights: np.ndarray | None = None  # (N, B), allocated once a skeleton exists
    grid: DensityGrid | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.points) == 0:
            raise EmptySceneError("point cloud is empty")
        if self.features.shape[1] < 8:
            raise DataError(f"feature dim must be >= 8, got {self.features.shape[1]}")

    @property
    def count(self) -> int:
        return len(self.points)


def rasterize_field(field_fn, dims, bbox) -> DensityGrid:
    """Sample an analytic field at voxel centers."""
    grid = DensityGrid(tuple(dims), np.asarray(bbox, dtype=np.float64), np.zeros(tuple(dims)))
    grid.values = field_fn(grid.centers().reshape(-1, 3)).reshape(tuple(dims))
    return DensityGrid(grid.dims, grid.bbox, grid.values)


def _sample_occupancy(sample_fn, bbox, voxel: float, threshold: float):
    bbox = np.asarray(bbox, dtype=np.float64).reshape(2, 3)
    dims = np.clip(np.ceil((bbox[1] - bbox[0]) / voxel).astype(int), MIN_RES, MAX_RES)
    grid = DensityGrid(tuple(dims), bbox, np.zeros(tuple(dims)))
    vals = sample_fn(grid.centers().reshape(-1, 3)).reshape(tuple(dims))
    grid.values = np.maximum(vals, 0.0)
    occupied = grid.values > threshold
    return grid, occupied


def extract_points(
    source,
    threshold: float = DEFAULT_THRESHOLD,
    target_count: int = 10000,
    feature_dim: int = DEFAULT_FEATURE_DIM,
    rng: np.random.Generator | None = None,
    bbox=None,
) -> FeaturePointCloud:
    """Threshold the density at an adaptively chosen resolution.

    The voxel size starts coarse and is rescaled by (count/target)^(1/3) until
    the surviving count lands in [0.5, 2] x target_count (resolution capped at
    128 per axis). Points sit at surviving voxel centers; features are drawn
    from normal(0, 0.1).
    """
    if threshold <= 0:
        raise DataError(f"threshold must be positive, got {threshold}")
    if isinstance(source, DensityGrid):
        sample_fn, bbox = source.interpolate, source.bbox
    else:
        if bbox is None:
            raise DataError("extract_points from a raw field needs an explicit bbox")
        sample_fn = source
    bbox = np.asarray(bbox, dtype=np.float64).reshape(2, 3)
    rng = rng or np.random.default_rng(0)

    voxel = float(np.max(bbox[1] - bbox[0])) / 16.0
    grid = occupied = None
    for _ in range(10):
        grid, occupied = _sample_occupancy(sample_fn, bbox, voxel, threshold)
        n = int(occupied.sum())
        if 0.5 * target_count <= n <= 2.0 * target_count:
            break
        at_cap = all(d >= MAX_RES for d in grid.dims)
        if n == 0:
            if at_cap:
                raise EmptySceneError("no density above threshold at any resolution")
            voxel *= 0.5
            continue
        scale = (n / target_count) ** (1.0 / 3.0)
        new_voxel = voxel * scale
        if at_cap and new_voxel <= voxel:
            break  # cannot refine further
        voxel = new_voxel
    n = int(occupied.sum())
    if n == 0:
        raise EmptySceneError("no density above threshold")

    ijk = np.argwhere(occupied)
    points = grid.bbox[0] + (ijk + 0.5) * grid.voxel_size
    features = rng.normal(0.0, 0.1, size=(n, feature_dim))
    return FeaturePointCloud(points=points, features=features, grid=grid)


def binarize_and_clean(grid: DensityGrid, threshold: float = DEFAULT_THRESHOLD) -> BinaryVolume:
    """Threshold, fill interior holes, keep the largest 26-connected component.

    Hole filling is a flood fill from the volume boundary: empty voxels the
    flood cannot reach become occupied.
    """
    mask = grid.values > threshold
    if not mask.any():
        raise EmptySceneError("thresholded volume is empty")
    filled = ndi.binary_fill_holes(mask)
    structure = np.ones((3, 3, 3), dtype=bool)  # 26-connectivity
    labels, n_comp = ndi.label(filled, structure=structure)
    if n_comp > 1:
        sizes = ndi.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n_comp + 1))
        keep = int(np.argmax(sizes)) + 1
        filled = labels == keep
    return BinaryVolume(mask=filled, bbox=grid.bbox)
