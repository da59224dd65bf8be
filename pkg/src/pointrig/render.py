"""Point-based radiance rendering: cameras, ray sampling, neighbor lookup,
feature aggregation and transmittance compositing.

The training path runs entirely on autodiff tensors so pixel colors are
differentiable w.r.t. features, skinning weights, pose parameters and joints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RenderConfig
from .errors import DataError
from .nn import MLP, Linear, encoding_dim, positional_encoding

DIST_GUARD = 1e-8


@dataclass
class Camera:
    id: int
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    c2w: np.ndarray  # (4, 4) rigid, right-handed, looks down -z

    def __post_init__(self):
        self.c2w = np.asarray(self.c2w, dtype=np.float64).reshape(4, 4)
        if self.fx <= 0 or self.fy <= 0:
            raise DataError(f"camera {self.id}: focal lengths must be positive")
        r = self.c2w[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-6:
            raise DataError(f"camera {self.id}: rotation block is not orthonormal")

    @property
    def origin(self) -> np.ndarray:
        return self.c2w[:3, 3]

    @property
    def rotation(self) -> np.ndarray:
        return self.c2w[:3, :3]

    def pixel_dirs(self, pixels: np.ndarray) -> np.ndarray:
        """Unit world-space ray directions through pixel centers (K, 2)->(K, 3)."""
        px = np.asarray(pixels, dtype=np.float64)
        u = px[:, 0] + 0.5
        v = px[:, 1] + 0.5
        cam = np.stack(
            [(u - self.cx) / self.fx, -(v - self.cy) / self.fy, -np.ones_like(u)], axis=1
        )
        world = cam @ self.rotation.T
        return world / np.linalg.norm(world, axis=1, keepdims=True)

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World points -> (pixel coords, depth along -z). Plain arrays."""
        cam = (np.asarray(points) - self.origin) @ self.rotation
        depth = -cam[:, 2]
        z = np.maximum(depth, 1e-9)
        u = self.fx * cam[:, 0] / z + self.cx - 0.5
        v = self.cy - self.fy * cam[:, 1] / z - 0.5
        return np.stack([u, v], axis=1), depth

    def project_tensor(self, points: Tensor) -> Tensor:
        """Differentiable projection to pixel coordinates (drops the 0.5-center
        shift, which cancels inside symmetric pixel-space losses)."""
        cam = ad.matmul(points - Tensor(self.origin), Tensor(self.rotation))
        z = ad.maximum_const(-cam[:, 2], 1e-9)
        u = cam[:, 0] / z * self.fx + self.cx
        v = cam[:, 1] / z * (-self.fy) + self.cy
        return ad.stack([u, v], axis=-1)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "width": self.width,
            "height": self.height,
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "c2w": self.c2w.reshape(-1).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        try:
            return cls(
                id=int(d["id"]),
                width=int(d["width"]),
                height=int(d["height"]),
                fx=float(d["fx"]),
                fy=float(d["fy"]),
                cx=float(d["cx"]),
                cy=float(d["cy"]),
                c2w=np.asarray(d["c2w"], dtype=np.float64).reshape(4, 4),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed camera entry: {e}") from None


@dataclass
class RayBatch:
    origins: np.ndarray  # (R, 3)
    dirs: np.ndarray  # (R, 3) unit
    near: float
    far: float

    def __len__(self) -> int:
        return len(self.origins)


def generate_rays(camera: Camera, pixels: np.ndarray, near: float, far: float) -> RayBatch:
    pixels = np.asarray(pixels)
    if np.any(pixels[:, 0] >= camera.width) or np.any(pixels[:, 1] >= camera.height) or np.any(pixels < 0):
        raise DataError("pixels outside image bounds")
    dirs = camera.pixel_dirs(pixels)
    origins = np.broadcast_to(camera.origin, dirs.shape).copy()
    return RayBatch(origins=origins, dirs=dirs, near=near, far=far)


def sample_ray(rays: RayBatch, n_samples: int, rng: np.random.Generator | None = None):
    """Stratified sample distances and spacings along each ray.

    Deterministic mode (rng=None) places samples at bin midpoints. Spacings
    are forward differences; the last one runs to the far plane.
    """
    if n_samples < 2:
        raise DataError("need at least 2 samples per ray")
    n_rays = len(rays)
    span = rays.far - rays.near
    if rng is None:
        offsets = np.full((n_rays, n_samples), 0.5)
    else:
        offsets = rng.uniform(0.0, 1.0, size=(n_rays, n_samples))
    t = rays.near + (np.arange(n_samples) + offsets) * (span / n_samples)
    delta = np.empty_like(t)
    delta[:, :-1] = t[:, 1:] - t[:, :-1]
    delta[:, -1] = rays.far - t[:, -1]
    return t, delta


class HashGrid:
    """Uniform grid over the cloud's bounding box, cell size = query radius.

    Rebuilt per warp; queries return, per sample, up to k nearest points
    within the radius (ties broken by point index), matching a brute-force
    scan exactly.
    """

    _DENSE_LIMIT = 4_000_000

    def __init__(self, points: np.ndarray, cell: float):
        self.points = np.asarray(points, dtype=np.float64)
        self.cell = float(cell)
        self.origin = self.points.min(axis=0) - self.cell
        cells = np.floor((self.points - self.origin) / self.cell).astype(np.int64)
        self.dims = cells.max(axis=0) + 2
        cid = (cells[:, 0] * self.dims[1] + cells[:, 1]) * self.dims[2] + cells[:, 2]
        self.order = np.argsort(cid, kind="stable")
        sorted_cid = cid[self.order]
        self.unique_cid, starts = np.unique(sorted_cid, return_index=True)
        self.starts = starts
        self.counts = np.diff(np.append(starts, len(cid)))
        n_cells = int(np.prod(self.dims))
        if n_cells <= self._DENSE_LIMIT:  # direct cell -> slot lookup
            self.slot_lut = np.full(n_cells, -1, dtype=np.int64)
            self.slot_lut[self.unique_cid] = np.arange(len(self.unique_cid))
        else:
            self.slot_lut = None

    def query(self, x: np.ndarray, radius: float, k: int):
        """Returns (sample_idx, neighbor_idx (Q, k), mask (Q, k), d2 (Q, k))
        for samples with at least one neighbor within radius."""
        x = np.asarray(x, dtype=np.float64)
        # only queries inside the padded cloud bounds can have neighbors
        upper = self.origin + self.dims * self.cell
        active = np.flatnonzero(np.all((x >= self.origin) & (x < upper), axis=1))
        if len(active) == 0:
            empty = np.zeros((0, k))
            return np.zeros(0, np.int64), np.zeros((0, k), np.int64), empty, empty
        xa = x[active]
        qcells = np.floor((xa - self.origin) / self.cell).astype(np.int64)
        q_all, starts_all, counts_all = [], [], []
        for off in _CELL_OFFSETS:
            c = qcells + off
            valid = np.all((c >= 0) & (c < self.dims), axis=1)
            cid = (c[:, 0] * self.dims[1] + c[:, 1]) * self.dims[2] + c[:, 2]
            if self.slot_lut is not None:
                slot = self.slot_lut[np.where(valid, cid, 0)]
                found = valid & (slot >= 0)
                slot_c = slot
            else:
                slot = np.searchsorted(self.unique_cid, cid)
                slot_ok = valid & (slot < len(self.unique_cid))
                slot_c = np.clip(slot, 0, len(self.unique_cid) - 1)
                found = slot_ok & (self.unique_cid[slot_c] == cid)
            if not found.any():
                continue
            q_all.append(np.flatnonzero(found))
            starts_all.append(self.starts[slot_c[found]])
            counts_all.append(self.counts[slot_c[found]])
        if not q_all:
            empty = np.zeros((0, k))
            return np.zeros(0, np.int64), np.zeros((0, k), np.int64), empty, empty
        q_all = np.concatenate(q_all)
        starts_all = np.concatenate(starts_all)
        counts_all = np.concatenate(counts_all)

        total = int(counts_all.sum())
        rep_q = np.repeat(q_all, counts_all)
        ends = np.cumsum(counts_all)
        flat = np.repeat(starts_all - (ends - counts_all), counts_all) + np.arange(total)
        cand = self.order[flat]
        d2 = ((xa[rep_q] - self.points[cand]) ** 2).sum(axis=1)
        keep = d2 <= radius * radius
        rep_q, cand, d2 = rep_q[keep], cand[keep], d2[keep]
        if len(rep_q) == 0:
            empty = np.zeros((0, k))
            return np.zeros(0, np.int64), np.zeros((0, k), np.int64), empty, empty

        order = np.lexsort((cand, d2, rep_q))
        rep_q, cand, d2 = rep_q[order], cand[order], d2[order]
        boundary = np.empty(len(rep_q), dtype=bool)
        boundary[0] = True
        boundary[1:] = rep_q[1:] != rep_q[:-1]
        group_start = np.maximum.accumulate(np.where(boundary, np.arange(len(rep_q)), 0))
        rank = np.arange(len(rep_q)) - group_start
        topk = rank < k
        rep_q, cand, d2, rank = rep_q[topk], cand[topk], d2[topk], rank[topk]

        samples = rep_q[np.concatenate([[True], rep_q[1:] != rep_q[:-1]])]
        row = np.searchsorted(samples, rep_q)
        nbr = np.zeros((len(samples), k), dtype=np.int64)
        mask = np.zeros((len(samples), k))
        dists = np.zeros((len(samples), k))
        nbr[row, rank] = cand
        mask[row, rank] = 1.0
        dists[row, rank] = d2
        return active[samples], nbr, mask, dists


_CELL_OFFSETS = np.array(
    [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]
)


def brute_force_query(points: np.ndarray, x: np.ndarray, radius: float, k: int):
    """O(N*Q) reference scan with the same tie rules; oracle for tests."""
    results = []
    for q in np.asarray(x, dtype=np.float64):
        d2 = ((q - points) ** 2).sum(axis=1)
        inside = np.flatnonzero(d2 <= radius * radius)
        order = np.lexsort((inside, d2[inside]))
        results.append(inside[order][:k])
    return results


class RenderModel:
    """Decoder heads: neighbor embedding, density and view-dependent color."""

    def __init__(self, cfg: RenderConfig, rng: np.random.Generator):
        self.cfg = cfg
        h = cfg.hidden
        embed_in = cfg.feature_dim + encoding_dim(3, cfg.pos_bands)
        self.phi_p = MLP([embed_in, h, h, cfg.feature_dim], rng)
        self.phi_d = Linear(cfg.feature_dim, 1, rng)
        self.phi_c = MLP([cfg.feature_dim + encoding_dim(3, cfg.view_bands), h, 3], rng)

    def parameters(self) -> list[Tensor]:
        return self.phi_p.parameters() + self.phi_d.parameters() + self.phi_c.parameters()

    def embed_neighbors(self, features: Tensor, rel_canonical: Tensor) -> Tensor:
        """Eq-style neighbor embedding: [f_i, gamma(offset in canonical frame)]."""
        enc = positional_encoding(rel_canonical, self.cfg.pos_bands)
        return self.phi_p(ad.concat([features, enc], axis=-1))

    def density(self, f_x: Tensor) -> Tensor:
        return ad.softplus(ad.reshape(self.phi_d(f_x), (-1,)))

    def color(self, f_x: Tensor, view_enc: Tensor) -> Tensor:
        return ad.sigmoid(self.phi_c(ad.concat([f_x, view_enc], axis=-1)))


def volume_render(sigma: Tensor, color: Tensor, delta, background) -> tuple[Tensor, Tensor]:
    """Transmittance-weighted compositing along the sample axis.

    sigma (R, S), color (R, S, 3), delta (R, S). Residual transmittance
    composites the background; opacity = 1 - residual.
    """
    sigma = ad.as_tensor(sigma)
    color = ad.as_tensor(color)
    delta_t = ad.as_tensor(delta)
    a = sigma * delta_t
    trans = ad.exp(-ad.cumsum_exclusive(a, axis=-1))
    weights = trans * (1.0 - ad.exp(-a))
    residual = ad.exp(-ad.tsum(a, axis=-1))
    bg = ad.as_tensor(np.asarray(background, dtype=np.float64))
    pixel = ad.tsum(ad.reshape(weights, weights.shape + (1,)) * color, axis=1)
    pixel = pixel + ad.reshape(residual, (-1, 1)) * bg
    opacity = 1.0 - residual
    return pixel, opacity


def render_rays(
    model: RenderModel,
    features: Tensor,
    warped_points: Tensor,
    blended_rot: Tensor,
    rays: RayBatch,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Differentiable pixel colors and opacities for a ray batch.

    Neighbor selection is discrete (hash grid on detached warped positions);
    everything downstream of the gathered values stays on the tape.
    """
    cfg = model.cfg
    n_rays = len(rays)
    t, delta = sample_ray(rays, cfg.samples_per_ray, rng)
    positions = rays.origins[:, None, :] + t[..., None] * rays.dirs[:, None, :]
    flat_pos = positions.reshape(-1, 3)

    grid = HashGrid(warped_points.data, cfg.radius)
    samples, nbr, mask, _ = grid.query(flat_pos, cfg.radius, cfg.neighbors)

    n_flat = n_rays * cfg.samples_per_ray
    if len(samples) == 0:
        sigma = Tensor(np.zeros((n_rays, cfg.samples_per_ray)))
        colors = Tensor(np.zeros((n_rays, cfg.samples_per_ray, 3)))
        return volume_render(sigma, colors, delta, cfg.background)

    k = cfg.neighbors
    idx_flat = nbr.reshape(-1)
    p_nb = ad.gather_rows(warped_points, idx_flat)  # (Q*k, 3)
    r_nb = ad.gather_rows(blended_rot, idx_flat)  # (Q*k, 3, 3)
    f_nb = ad.gather_rows(features, idx_flat)  # (Q*k, F)
    x_rep = Tensor(np.repeat(flat_pos[samples], k, axis=0))
    rel = x_rep - p_nb
    rel_canonical = ad.reshape(ad.matmul(ad.matinv3(r_nb), ad.reshape(rel, (-1, 3, 1))), (-1, 3))
    f_embed = model.embed_neighbors(f_nb, rel_canonical)  # (Q*k, F)

    dist = ad.vector_norm(rel, axis=-1)  # (Q*k,)
    inv = ad.reshape(1.0 / (dist + DIST_GUARD), (-1, k)) * Tensor(mask)
    norm = ad.tsum(inv, axis=-1, keepdims=True)
    agg_w = inv / norm  # (Q, k), masked rows sum to 1
    f_x = ad.tsum(
        ad.reshape(agg_w, (-1, k, 1)) * ad.reshape(f_embed, (-1, k, model.cfg.feature_dim)),
        axis=1,
    )

    sigma_q = model.density(f_x)
    ray_of_sample = samples // cfg.samples_per_ray
    view_enc = positional_encoding(Tensor(rays.dirs[ray_of_sample]), cfg.view_bands)
    color_q = model.color(f_x, view_enc)

    sigma = ad.reshape(ad.scatter_rows(n_flat, samples, sigma_q), (n_rays, cfg.samples_per_ray))
    colors = ad.reshape(
        ad.scatter_rows(n_flat, samples, color_q), (n_rays, cfg.samples_per_ray, 3)
    )
    return volume_render(sigma, colors, delta, cfg.background)


def render_image(
    model: RenderModel,
    features: Tensor,
    warped_points: Tensor,
    blended_rot: Tensor,
    camera: Camera,
    chunk: int = 4096,
) -> tuple[np.ndarray, np.ndarray]:
    """Full-frame deterministic render -> (H, W, 3) image and (H, W) opacity."""
    cfg = model.cfg
    xs, ys = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    pixels = np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)
    img = np.zeros((len(pixels), 3))
    opac = np.zeros(len(pixels))
    for lo in range(0, len(pixels), chunk):
        batch = generate_rays(camera, pixels[lo : lo + chunk], cfg.near, cfg.far)
        pix, op = render_rays(model, features, warped_points, blended_rot, batch, rng=None)
        img[lo : lo + chunk] = pix.data
        opac[lo : lo + chunk] = op.data
    return img.reshape(camera.height, camera.width, 3), opac.reshape(camera.height, camera.width)
