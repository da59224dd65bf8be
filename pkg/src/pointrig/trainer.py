"""Joint optimization of features, skinning weights, temperature, joints,
pose regressor and decoder heads against multi-view video."""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from .autodiff import NumericError, Tape
from .config import TrainConfig
from .errors import DataError
from .losses import arap_loss, mask_loss, photometric, skel_loss, smooth_loss, sparse_loss, total_loss, tranf_loss
from .render import RayBatch, render_rays
from .scene import SceneModel
from .sceneio import Dataset, save_checkpoint

log = logging.getLogger(__name__)

ALPHA_FLOOR = 1e-4
PSNR_CAP = 99.0


class Adam:
    """Bias-corrected Adam over named parameter groups with per-group rates."""

    def __init__(self, groups, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.groups = groups  # [(name, [Tensor], lr)]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = {
            name: {
                "m": [np.zeros_like(t.data) for t in tensors],
                "v": [np.zeros_like(t.data) for t in tensors],
                "t": 0,
            }
            for name, tensors, _ in groups
        }

    def step(self, lr_scale: float = 1.0) -> None:
        for name, tensors, lr in self.groups:
            grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
            if any(not np.all(np.isfinite(g)) for g in grads):
                log.warning("adam: non-finite gradient, skipping group %r this step", name)
                continue
            st = self.state[name]
            st["t"] += 1
            t = st["t"]
            correction1 = 1.0 - self.beta1**t
            correction2 = 1.0 - self.beta2**t
            for param, g, m, v in zip(tensors, grads, st["m"], st["v"]):
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                m_hat = m / correction1
                v_hat = v / correction2
                param.data = param.data - lr * lr_scale * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for _, tensors, _ in self.groups:
            for t in tensors:
                t.grad = None

    def state_dict(self) -> dict:
        return {name: {"m": st["m"], "v": st["v"], "t": st["t"]} for name, st in self.state.items()}

    def load_flat_state(self, flat_state: dict) -> None:
        """Restore from the checkpoint's flattened per-group arrays."""
        for name, tensors, _ in self.groups:
            if name not in flat_state:
                continue
            st = self.state[name]
            st["t"] = flat_state[name]["t"]
            for key in ("m", "v"):
                flat = flat_state[name][key]
                off = 0
                for i, tensor in enumerate(tensors):
                    n = tensor.data.size
                    st[key][i] = flat[off : off + n].reshape(tensor.data.shape).copy()
                    off += n
                if off != flat.size:
                    raise DataError(f"optimizer state for group {name!r} has wrong length")


def timestamp_schedule(iteration: int, n_timestamps: int, canonical_index: int, config: TrainConfig) -> np.ndarray:
    """Indices of timestamps accessible at this iteration.

    Grows linearly from just the canonical frame to the full set by
    schedule_until x iterations, adding frames by distance from canonical.
    """
    horizon = max(1, int(config.iterations * config.schedule_until))
    frac = min(1.0, iteration / horizon)
    k = 1 + int(np.floor((n_timestamps - 1) * frac))
    order = np.lexsort((np.arange(n_timestamps), np.abs(np.arange(n_timestamps) - canonical_index)))
    return np.sort(order[:k])


def sample_ray_batch(dataset: Dataset, views: list[int], t_index: int, n_rays: int, render_cfg, rng: np.random.Generator):
    """Random pixels across the given views at one timestamp."""
    h, w = dataset.images.shape[2:4]
    per_view = h * w
    flat = rng.integers(0, len(views) * per_view, size=n_rays)
    view_pos = flat // per_view
    rest = flat % per_view
    py, px = rest // w, rest % w
    origins = np.empty((n_rays, 3))
    dirs = np.empty((n_rays, 3))
    gt = np.empty((n_rays, 3))
    for pos, view in enumerate(views):
        sel = view_pos == pos
        if not sel.any():
            continue
        cam = dataset.cameras[view]
        dirs[sel] = cam.pixel_dirs(np.stack([px[sel], py[sel]], axis=1))
        origins[sel] = cam.origin
        gt[sel] = dataset.images[view, t_index, py[sel], px[sel]]
    rays = RayBatch(origins=origins, dirs=dirs, near=render_cfg.near, far=render_cfg.far)
    return rays, gt


def train_step(
    model: SceneModel,
    dataset: Dataset,
    optimizer: Adam,
    rng: np.random.Generator,
    iteration: int,
    train_views: list[int],
):
    """One forward/backward/update cycle on a single sampled timestamp."""
    cfg = model.config
    accessible = timestamp_schedule(iteration, dataset.n_timestamps, dataset.canonical_index, cfg)
    t_index = int(accessible[rng.integers(len(accessible))])
    t = float(dataset.timestamps[t_index])
    rays, gt_pixels = sample_ray_batch(dataset, train_views, t_index, cfg.rays_per_batch, cfg.render, rng)
    mask_views = list(
        rng.choice(train_views, size=min(cfg.mask_views_per_step, len(train_views)), replace=False)
    )

    optimizer.zero_grad()
    with Tape() as tape:
        pose = model.pose_at(t)
        weights = model.normalized_weights()
        warped, blended = model.warp(pose, weights=weights)
        pix, _ = render_rays(model.render_model, model.features, warped, blended, rays, rng=rng)

        terms = {
            "photo": photometric(pix, gt_pixels),
            "skel": skel_loss(model.medial_points, model.joints),
            "tranf": tranf_loss(pose),
            "smooth": smooth_loss(weights, model.arap_neighbors),
            "sparse": sparse_loss(weights),
            "arap": arap_loss(model.points, warped, model.arap_neighbors),
        }
        mask_terms = []
        for view in mask_views:
            term = mask_loss(
                warped, dataset.cameras[view], dataset.masks[view, t_index], cfg.mask_subsample, rng
            )
            if term is not None:
                mask_terms.append(term)
        if mask_terms:
            acc = mask_terms[0]
            for extra in mask_terms[1:]:
                acc = acc + extra
            terms["mask"] = acc / float(len(mask_terms))
        report = total_loss(terms, cfg.loss_weights)
        if not np.isfinite(report.total):
            raise NumericError(f"non-finite training loss at iteration {iteration}: {report.raw}")
        tape.backward(report.total_tensor)

    lr_scale = cfg.decay_factor if iteration >= cfg.decay_iteration else 1.0
    optimizer.step(lr_scale)
    model.alpha.data = np.maximum(model.alpha.data, ALPHA_FLOOR)
    return report


def psnr(rendered: np.ndarray, target: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(rendered) - np.asarray(target)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * np.log10(mse))


def evaluate(model: SceneModel, dataset: Dataset, views: list[int]) -> dict:
    """Mean PSNR per held-out view across all timestamps."""
    per_view: dict[str, float] = {}
    for view in views:
        scores = []
        for t_index, t in enumerate(dataset.timestamps):
            img, _ = model.render_camera(dataset.cameras[view], model.pose_at(float(t)))
            scores.append(psnr(img, dataset.images[view, t_index]))
        per_view[str(view)] = float(np.mean(scores))
    mean = float(np.mean(list(per_view.values()))) if per_view else 0.0
    return {"per_view": per_view, "mean": mean}


def fit(
    model: SceneModel,
    dataset: Dataset,
    out_dir=None,
    optimizer_state: dict | None = None,
    rng_state: dict | None = None,
    log_every: int = 50,
) -> tuple[SceneModel, list[dict]]:
    """Full training loop with learning-rate decay, eval and checkpoints."""
    cfg = model.config
    train_views = cfg.train_views if cfg.train_views is not None else list(range(dataset.n_views))
    bad = [v for v in train_views if v in set(cfg.eval_views)]
    if bad:
        raise DataError(f"views {bad} appear in both train and eval sets")
    if not train_views:
        raise DataError("no training views")

    optimizer = Adam(model.parameter_groups())
    if optimizer_state:
        optimizer.load_flat_state(optimizer_state)
    rng = np.random.default_rng(cfg.seed)
    if rng_state:
        rng.bit_generator.state = rng_state

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path:
        out_path.mkdir(parents=True, exist_ok=True)
    history: list[dict] = []
    history_file = out_path / "history.jsonl" if out_path else None
    start = model.iteration
    t0 = time.time()
    for iteration in range(start, cfg.iterations):
        report = train_step(model, dataset, optimizer, rng, iteration, train_views)
        model.iteration = iteration + 1
        entry = None
        if iteration % log_every == 0 or iteration == cfg.iterations - 1:
            entry = {
                "iteration": iteration,
                "losses": report.to_dict(),
                "wallclock": time.time() - t0,
            }
        if cfg.eval_views and cfg.eval_interval and (iteration + 1) % cfg.eval_interval == 0:
            scores = evaluate(model, dataset, cfg.eval_views)
            entry = entry or {
                "iteration": iteration,
                "losses": report.to_dict(),
                "wallclock": time.time() - t0,
            }
            entry["psnr"] = scores
            log.info("iteration %d: psnr %.2f dB", iteration, scores["mean"])
        if entry:
            history.append(entry)
            if history_file:
                with open(history_file, "a") as fh:
                    fh.write(json.dumps(entry) + "\n")
        if out_path and cfg.checkpoint_interval and (iteration + 1) % cfg.checkpoint_interval == 0 and iteration + 1 < cfg.iterations:
            save_checkpoint(
                out_path / f"ckpt_{iteration + 1:06d}.apck",
                model,
                optimizer.state_dict(),
                rng.bit_generator.state,
            )
    if out_path:
        save_checkpoint(out_path / "final.apck", model, optimizer.state_dict(), rng.bit_generator.state)
    return model, history
