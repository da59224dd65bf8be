"""Training objectives and their weighted combination.

Seven terms: photometric, mask chamfer, skeleton chamfer, transformation
magnitude, weight smoothness, weight sparsity and as-rigid-as-possible.
Chamfer gradients follow the argmin branch only; nearest-neighbor selection
runs on detached values.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError
from .kinematics import Pose
from .render import Camera

log = logging.getLogger(__name__)

TERM_NAMES = ("photo", "mask", "skel", "tranf", "smooth", "sparse", "arap")
DEFAULT_WEIGHTS = (200.0, 0.02, 1.0, 0.1, 10.0, 0.2, 0.005)
SPARSE_EPS = 1e-7


@dataclass
class LossReport:
    raw: dict[str, float]
    weighted: dict[str, float]
    total: float
    total_tensor: Tensor = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {"raw": self.raw, "weighted": self.weighted, "total": self.total}


def photometric(pred: Tensor, target) -> Tensor:
    """Mean squared error over the ray batch."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DataError(f"pixel batch shapes differ: {pred.shape} vs {target.shape}")
    d = pred - Tensor(target)
    return ad.tmean(d * d)


def chamfer(a, b) -> Tensor:
    """Symmetric mean of squared nearest-neighbor distances between point sets.

    Works for any dimension; either side may be a constant array or a tensor
    on the tape. Matches the O(n*m) brute-force scan exactly.
    """
    a_t, b_t = ad.as_tensor(a), ad.as_tensor(b)
    if len(a_t.data) == 0 or len(b_t.data) == 0:
        raise DataError("chamfer distance needs two non-empty point sets")
    d2 = ((a_t.data[:, None, :] - b_t.data[None, :, :]) ** 2).sum(axis=-1)
    nearest_b = np.argmin(d2, axis=1)
    nearest_a = np.argmin(d2, axis=0)
    da = a_t - ad.gather_rows(b_t, nearest_b)
    db = ad.gather_rows(a_t, nearest_a) - b_t
    return ad.tmean(ad.tsum(da * da, axis=-1)) + ad.tmean(ad.tsum(db * db, axis=-1))


def mask_loss(
    warped_points: Tensor,
    camera: Camera,
    mask: np.ndarray,
    subsample: int = 3000,
    rng: np.random.Generator | None = None,
) -> Tensor | None:
    """2D chamfer between the projected cloud and mask-interior pixels.

    Both sides are uniformly subsampled to the cap. Pixel coordinates; an
    empty mask skips the term with a warning.
    """
    inside = np.argwhere(mask)
    if len(inside) == 0:
        log.warning("mask loss skipped: empty mask for camera %s", camera.id)
        return None
    coords = inside[:, [1, 0]].astype(np.float64) + 0.5  # (x, y) pixel centers
    projected = camera.project_tensor(warped_points)
    rng = rng or np.random.default_rng(0)
    if len(coords) > subsample:
        coords = coords[rng.permutation(len(coords))[:subsample]]
    n_pts = len(projected.data)
    if n_pts > subsample:
        projected = ad.gather_rows(projected, rng.permutation(n_pts)[:subsample])
    return chamfer(projected, Tensor(coords))


def skel_loss(medial_points: np.ndarray, joints: Tensor) -> Tensor:
    """3D chamfer keeping joints near the medial axis (gradient to joints only)."""
    return chamfer(Tensor(np.asarray(medial_points, dtype=np.float64)), joints)


def tranf_loss(pose: Pose) -> Tensor:
    """Sum of absolute rotation angles plus the root translation norm."""
    total = ad.tsum(ad.tabs(pose.angles)) if pose.n_bones else Tensor(0.0)
    return total + ad.tabs(pose.root_angle) + ad.vector_norm(pose.root_translation, axis=-1)


def canonical_neighborhoods(points: np.ndarray, k: int = 8, chunk: int = 512) -> np.ndarray:
    """k nearest canonical neighbors per point (self excluded), fixed once."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    k = min(k, n - 1)
    out = np.empty((n, k), dtype=np.int64)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        d2 = ((points[lo:hi, None, :] - points[None, :, :]) ** 2).sum(axis=-1)
        d2[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        row_d2 = np.take_along_axis(d2, part, axis=1)
        order = np.argsort(row_d2, axis=1, kind="stable")
        out[lo:hi] = np.take_along_axis(part, order, axis=1)
    return out


def arap_loss(canonical: np.ndarray, warped: Tensor, neighborhoods: np.ndarray) -> Tensor:
    """Sum of |canonical pair length^2 - warped pair length^2| over neighborhoods."""
    canonical = np.asarray(canonical, dtype=np.float64)
    n, k = neighborhoods.shape
    rows = np.repeat(np.arange(n), k)
    cols = neighborhoods.reshape(-1)
    d2_canon = ((canonical[rows] - canonical[cols]) ** 2).sum(axis=-1)
    wi = ad.gather_rows(warped, rows)
    wj = ad.gather_rows(warped, cols)
    diff = wi - wj
    d2_warp = ad.tsum(diff * diff, axis=-1)
    return ad.tsum(ad.tabs(Tensor(d2_canon) - d2_warp))


def smooth_loss(weights: Tensor, neighborhoods: np.ndarray) -> Tensor:
    """L1 distance between neighboring skinning weight vectors, summed."""
    n, k = neighborhoods.shape
    rows = np.repeat(np.arange(n), k)
    cols = neighborhoods.reshape(-1)
    diff = ad.gather_rows(weights, rows) - ad.gather_rows(weights, cols)
    return ad.tsum(ad.tabs(diff))


def sparse_loss(weights: Tensor) -> Tensor:
    """Binary entropy of the normalized weights; minimal at 0/1 entries."""
    w = ad.clip(weights, SPARSE_EPS, 1.0 - SPARSE_EPS)
    entropy = -(w * ad.log(w) + (1.0 - w) * ad.log(1.0 - w))
    return ad.tsum(entropy)


def total_loss(terms: dict[str, Tensor | None], weights=DEFAULT_WEIGHTS) -> LossReport:
    """Weighted combination; the report carries raw and weighted values."""
    weights = tuple(float(w) for w in weights)
    if len(weights) != len(TERM_NAMES):
        raise DataError(f"need {len(TERM_NAMES)} loss weights, got {len(weights)}")
    raw: dict[str, float] = {}
    weighted: dict[str, float] = {}
    total_t = Tensor(0.0)
    for name, w in zip(TERM_NAMES, weights):
        term = terms.get(name)
        if term is None:
            raw[name] = 0.0
            weighted[name] = 0.0
            continue
        term = ad.as_tensor(term)
        raw[name] = float(term.data)
        weighted[name] = w * raw[name]
        total_t = total_t + term * w
    return LossReport(raw=raw, weighted=weighted, total=float(total_t.data), total_tensor=total_t)
