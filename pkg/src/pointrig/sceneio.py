"""Dataset format, synthetic articulated scene generation, image I/O and
checkpoint persistence.

Dataset layout on disk:
    cameras.json                 [{id, width, height, fx, fy, cx, cy, c2w}]
    meta.json                    {timestamps: [...], canonical_index: int}
    frames/v{view}_t{index}.png  8-bit RGB
    masks/v{view}_t{index}.png   8-bit grayscale, 255 = foreground
    gt/ (synthetic only)         skeleton.json, poses.json, density.bin, rig.json

Checkpoint (.apck): magic, version, JSON header (tensor table + meta), raw
little-endian payloads, trailing sha256.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .autodiff import Tensor
from .config import TrainConfig
from .errors import DataError
from .fields import segment_distances
from .kinematics import Pose, PoseRegressor, forward_kinematics
from .render import Camera, RayBatch, RenderModel, sample_ray, volume_render
from .scene import CHECKPOINT_VERSION, SceneModel
from .skeleton import Skeleton
from .voxels import DensityGrid

GT_SAMPLES_PER_RAY = 192
MASK_OPACITY_CUTOFF = 0.5


# -- synthetic rig -----------------------------------------------------------

@dataclass
class RigPart:
    a: np.ndarray  # capsule endpoints, canonical frame
    b: np.ndarray
    radius: float
    albedo: np.ndarray  # (3,) in [0, 1]
    bone: int  # driving bone; -1 rides the root only
    edge: float = 0.10  # density ramps to zero over this fraction of the radius

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.albedo = np.asarray(self.albedo, dtype=np.float64)
        if self.radius <= 0:
            raise DataError("rig part needs a positive radius")

    def density_profile(self, dist: np.ndarray, peak: float) -> np.ndarray:
        """Constant density inside, linear falloff across the edge band."""
        ramp = max(self.edge * self.radius, 1e-9)
        return peak * np.clip((self.radius - dist) / ramp, 0.0, 1.0)


@dataclass
class SyntheticRig:
    skeleton: Skeleton
    parts: list[RigPart]
    motion_axes: np.ndarray  # (B, 3)
    amplitudes_deg: np.ndarray  # (B,)
    density: float = 30.0

    def __post_init__(self):
        self.motion_axes = np.asarray(self.motion_axes, dtype=np.float64).reshape(-1, 3)
        self.amplitudes_deg = np.asarray(self.amplitudes_deg, dtype=np.float64).reshape(-1)
        if len(self.motion_axes) != self.skeleton.n_bones:
            raise DataError("rig motion table must cover every bone")
        if not np.any(self.amplitudes_deg != 0):
            raise DataError("rig needs at least one moving joint")

    def angles_at(self, t: float, canonical_t: float) -> np.ndarray:
        """Bone angles in radians; zero at the canonical timestamp."""
        return np.radians(self.amplitudes_deg) * np.sin(2.0 * np.pi * (t - canonical_t))

    def bone_transforms(self, t: float, canonical_t: float) -> tuple[np.ndarray, np.ndarray]:
        pose = Pose(
            axes=Tensor(self.motion_axes),
            angles=Tensor(self.angles_at(t, canonical_t)),
            root_axis=Tensor(np.zeros(3)),
            root_angle=Tensor(0.0),
            root_translation=Tensor(np.zeros(3)),
        )
        rots, trans = forward_kinematics(self.skeleton, pose)
        return rots.data, trans.data

    def density_and_color(self, x: np.ndarray, t: float, canonical_t: float):
        """Analytic density and albedo at world points for timestamp t."""
        rots, trans = self.bone_transforms(t, canonical_t)
        sigma = np.zeros(len(x))
        color = np.ones((len(x), 3))
        claimed = np.zeros(len(x), dtype=bool)
        for part in self.parts:
            if part.bone < 0:
                local = x
            else:
                r, tr = rots[part.bone], trans[part.bone]
                local = (x - tr) @ r  # rigid inverse
            dens = part.density_profile(segment_distances(local, part.a, part.b), self.density)
            sigma = np.maximum(sigma, dens)
            paint = (dens > 0) & ~claimed
            color[paint] = part.albedo
            claimed |= dens > 0
        return sigma, color

    def canonical_field(self):
        def field_fn(x: np.ndarray) -> np.ndarray:
            sigma, _ = self.density_and_color(x, 0.0, 0.0)
            return sigma

        return field_fn

    def to_dict(self) -> dict:
        return {
            "skeleton": self.skeleton.to_dict(),
            "parts": [
                {
                    "a": p.a.tolist(),
                    "b": p.b.tolist(),
                    "radius": p.radius,
                    "albedo": p.albedo.tolist(),
                    "bone": p.bone,
                }
                for p in self.parts
            ],
            "motion": {
                "axes": self.motion_axes.tolist(),
                "amplitudes_deg": self.amplitudes_deg.tolist(),
            },
            "density": self.density,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticRig":
        try:
            skeleton = Skeleton.from_dict(d["skeleton"])
            parts = [
                RigPart(p["a"], p["b"], float(p["radius"]), p["albedo"], int(p["bone"]))
                for p in d["parts"]
            ]
            motion = d["motion"]
            return cls(
                skeleton=skeleton,
                parts=parts,
                motion_axes=np.asarray(motion["axes"]),
                amplitudes_deg=np.asarray(motion["amplitudes_deg"]),
                density=float(d.get("density", 30.0)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed rig spec: {e}") from None


def two_joint_arm(
    shoulder_amplitude_deg: float = 20.0,
    elbow_amplitude_deg: float = 45.0,
    radius: float = 0.1,
) -> SyntheticRig:
    """Planar two-segment arm: shoulder at the root, elbow halfway out."""
    joints = np.array([[-0.45, 0.0, 0.0], [0.1, 0.0, 0.0], [0.65, 0.0, 0.0]])
    skeleton = Skeleton(joints, np.array([-1, 0, 1]))
    parts = [
        RigPart(a=[-0.45, 0, 0], b=[0.08, 0, 0], radius=radius, albedo=[0.85, 0.25, 0.2], bone=0),
        RigPart(a=[0.12, 0, 0], b=[0.65, 0, 0], radius=radius, albedo=[0.2, 0.45, 0.85], bone=1),
    ]
    return SyntheticRig(
        skeleton=skeleton,
        parts=parts,
        motion_axes=np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]),
        amplitudes_deg=np.array([shoulder_amplitude_deg, elbow_amplitude_deg]),
    )


# -- dataset -----------------------------------------------------------------

@dataclass
class Dataset:
    cameras: list[Camera]
    images: np.ndarray  # (V, T, H, W, 3) float in [0, 1]
    masks: np.ndarray  # (V, T, H, W) bool
    timestamps: np.ndarray  # (T,) strictly increasing in [0, 1]
    canonical_index: int
    gt_skeleton: Skeleton | None = None
    gt_axes: np.ndarray | None = None  # (B, 3)
    gt_angles: np.ndarray | None = None  # (T, B) radians
    density: DensityGrid | None = None
    rig: SyntheticRig | None = field(default=None, repr=False)

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64)
        if np.any(np.diff(ts) <= 0):
            raise DataError("timestamps must be strictly increasing")
        self.timestamps = ts
        if not 0 <= self.canonical_index < len(ts):
            raise DataError("canonical_index out of range")

    @property
    def n_views(self) -> int:
        return len(self.cameras)

    @property
    def n_timestamps(self) -> int:
        return len(self.timestamps)


def ring_cameras(n_views: int, width: int, height: int, distance: float = 2.6, elevation_deg: float = 18.0, fov_deg: float = 42.0) -> list[Camera]:
    """Cameras on a ring around the origin, looking inward."""
    cams = []
    el = np.radians(elevation_deg)
    focal = 0.5 * width / np.tan(np.radians(fov_deg) / 2.0)
    for i in range(n_views):
        az = 2.0 * np.pi * i / n_views
        eye = distance * np.array([np.cos(az) * np.cos(el), np.sin(az) * np.cos(el), np.sin(el)])
        z_cam = eye / np.linalg.norm(eye)  # looks down -z at the origin
        up = np.array([0.0, 0.0, 1.0])
        x_cam = np.cross(up, z_cam)
        x_cam /= np.linalg.norm(x_cam)
        y_cam = np.cross(z_cam, x_cam)
        c2w = np.eye(4)
        c2w[:3, 0], c2w[:3, 1], c2w[:3, 2], c2w[:3, 3] = x_cam, y_cam, z_cam, eye
        cams.append(
            Camera(id=i, width=width, height=height, fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0, c2w=c2w)
        )
    return cams


def render_analytic(
    rig: SyntheticRig,
    camera: Camera,
    t: float,
    canonical_t: float,
    near: float,
    far: float,
    n_samples: int = GT_SAMPLES_PER_RAY,
    background=(1.0, 1.0, 1.0),
    chunk: int = 2048,
) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth frame by ray-marching the analytic density through the
    same compositing as the learned renderer."""
    xs, ys = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    pixels = np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)
    img = np.zeros((len(pixels), 3))
    opac = np.zeros(len(pixels))
    for lo in range(0, len(pixels), chunk):
        px = pixels[lo : lo + chunk]
        dirs = camera.pixel_dirs(px)
        origins = np.broadcast_to(camera.origin, dirs.shape).copy()
        rays = RayBatch(origins=origins, dirs=dirs, near=near, far=far)
        tvals, delta = sample_ray(rays, n_samples, rng=None)
        positions = origins[:, None, :] + tvals[..., None] * dirs[:, None, :]
        sigma, color = rig.density_and_color(positions.reshape(-1, 3), t, canonical_t)
        pix, op = volume_render(
            Tensor(sigma.reshape(len(px), n_samples)),
            Tensor(color.reshape(len(px), n_samples, 3)),
            delta,
            background,
        )
        img[lo : lo + chunk] = pix.data
        opac[lo : lo + chunk] = op.data
    h, w = camera.height, camera.width
    return img.reshape(h, w, 3), opac.reshape(h, w)


def generate_synthetic(
    rig: SyntheticRig,
    n_views: int,
    n_timestamps: int,
    resolution: tuple[int, int],
    near: float = 1.2,
    far: float = 4.0,
    grid_dims: tuple[int, int, int] = (96, 96, 96),
    bbox=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)),
    canonical_index: int = 0,
) -> Dataset:
    """Render ground-truth frames/masks and emit the canonical density grid."""
    if n_views < 1 or n_timestamps < 2:
        raise DataError("need at least 1 view and 2 timestamps")
    if not np.any(rig.amplitudes_deg != 0):
        raise DataError("rig needs at least one moving joint")
    width, height = resolution
    cameras = ring_cameras(n_views, width, height)
    timestamps = np.arange(n_timestamps, dtype=np.float64) / n_timestamps
    canonical_t = float(timestamps[canonical_index])

    images = np.zeros((n_views, n_timestamps, height, width, 3))
    masks = np.zeros((n_views, n_timestamps, height, width), dtype=bool)
    for vi, cam in enumerate(cameras):
        for ti, t in enumerate(timestamps):
            img, opac = render_analytic(rig, cam, float(t), canonical_t, near, far)
            images[vi, ti] = img
            masks[vi, ti] = opac > MASK_OPACITY_CUTOFF

    bbox = np.asarray(bbox, dtype=np.float64)
    grid = DensityGrid(tuple(grid_dims), bbox, np.zeros(tuple(grid_dims)))
    centers = grid.centers().reshape(-1, 3)
    grid.values = rig.canonical_field()(centers).reshape(tuple(grid_dims))

    angles = np.stack([rig.angles_at(float(t), canonical_t) for t in timestamps])
    return Dataset(
        cameras=cameras,
        images=images,
        masks=masks,
        timestamps=timestamps,
        canonical_index=canonical_index,
        gt_skeleton=rig.skeleton,
        gt_axes=rig.motion_axes.copy(),
        gt_angles=angles,
        density=grid,
        rig=rig,
    )


# -- dataset persistence --------------------------------------------------------

def _frame_name(view: int, t_index: int) -> str:
    return f"v{view}_t{t_index}.png"


def save_image(path: Path, img: np.ndarray) -> None:
    data = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def load_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, SyntaxError) as e:
        raise DataError(f"cannot decode image {path}: {e}") from None


def save_dataset(dataset: Dataset, path) -> None:
    root = Path(path)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    with open(root / "cameras.json", "w") as fh:
        json.dump([c.to_dict() for c in dataset.cameras], fh, indent=1)
    with open(root / "meta.json", "w") as fh:
        json.dump(
            {"timestamps": dataset.timestamps.tolist(), "canonical_index": dataset.canonical_index},
            fh,
            indent=1,
        )
    for vi in range(dataset.n_views):
        for ti in range(dataset.n_timestamps):
            save_image(root / "frames" / _frame_name(vi, ti), dataset.images[vi, ti])
            mask = (dataset.masks[vi, ti] * 255).astype(np.uint8)
            Image.fromarray(mask, mode="L").save(root / "masks" / _frame_name(vi, ti))
    if dataset.gt_skeleton is not None:
        gt = root / "gt"
        gt.mkdir(exist_ok=True)
        with open(gt / "skeleton.json", "w") as fh:
            json.dump(dataset.gt_skeleton.to_dict(), fh, indent=1)
        with open(gt / "poses.json", "w") as fh:
            json.dump(
                {"axes": dataset.gt_axes.tolist(), "angles": dataset.gt_angles.tolist()}, fh, indent=1
            )
        if dataset.density is not None:
            save_density(gt / "density.bin", dataset.density)
        if dataset.rig is not None:
            with open(gt / "rig.json", "w") as fh:
                json.dump(dataset.rig.to_dict(), fh, indent=1)


def save_density(path: Path, grid: DensityGrid) -> None:
    with open(path, "wb") as fh:
        fh.write(b"APDG")
        fh.write(struct.pack("<III", *grid.dims))
        fh.write(np.asarray(grid.bbox, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(grid.values, dtype="<f8").tobytes())


def load_density(path: Path) -> DensityGrid:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != b"APDG":
            raise DataError(f"{path}: not a density grid file")
        dims = struct.unpack("<III", fh.read(12))
        bbox = np.frombuffer(fh.read(48), dtype="<f8").reshape(2, 3)
        n = dims[0] * dims[1] * dims[2]
        values = np.frombuffer(fh.read(8 * n), dtype="<f8")
        if values.size != n:
            raise DataError(f"{path}: truncated density payload")
        return DensityGrid(dims, bbox.copy(), values.reshape(dims).copy())


def load_dataset(path) -> Dataset:
    root = Path(path)
    cam_file = root / "cameras.json"
    if not cam_file.exists():
        raise DataError(f"missing camera file {cam_file}")
    with open(cam_file) as fh:
        try:
            cameras = [Camera.from_dict(d) for d in json.load(fh)]
        except json.JSONDecodeError as e:
            raise DataError(f"invalid cameras.json: {e}") from None
    meta_file = root / "meta.json"
    if not meta_file.exists():
        raise DataError(f"missing metadata file {meta_file}")
    with open(meta_file) as fh:
        meta = json.load(fh)
    timestamps = np.asarray(meta["timestamps"], dtype=np.float64)
    n_views, n_ts = len(cameras), len(timestamps)

    h, w = cameras[0].height, cameras[0].width
    images = np.zeros((n_views, n_ts, h, w, 3))
    masks = np.zeros((n_views, n_ts, h, w), dtype=bool)
    for vi, cam in enumerate(cameras):
        for ti in range(n_ts):
            frame = root / "frames" / _frame_name(vi, ti)
            mask = root / "masks" / _frame_name(vi, ti)
            if not frame.exists():
                raise DataError(f"missing frame {frame}")
            if not mask.exists():
                raise DataError(f"missing mask {mask}")
            img = load_image(frame)
            if img.shape[:2] != (cam.height, cam.width):
                raise DataError(f"{frame}: size {img.shape[:2]} != camera {cam.height, cam.width}")
            with Image.open(mask) as im:
                m = np.asarray(im.convert("L"))
            if m.shape != img.shape[:2]:
                raise DataError(f"{mask}: mask size {m.shape} != frame size {img.shape[:2]}")
            images[vi, ti] = img
            masks[vi, ti] = m >= 128

    gt_skeleton = gt_axes = gt_angles = density = rig = None
    gt = root / "gt"
    if (gt / "skeleton.json").exists():
        with open(gt / "skeleton.json") as fh:
            gt_skeleton = Skeleton.from_dict(json.load(fh))
        with open(gt / "poses.json") as fh:
            poses = json.load(fh)
        gt_axes = np.asarray(poses["axes"], dtype=np.float64)
        gt_angles = np.asarray(poses["angles"], dtype=np.float64)
    if (gt / "density.bin").exists():
        density = load_density(gt / "density.bin")
    if (gt / "rig.json").exists():
        with open(gt / "rig.json") as fh:
            rig = SyntheticRig.from_dict(json.load(fh))
    return Dataset(
        cameras=cameras,
        images=images,
        masks=masks,
        timestamps=timestamps,
        canonical_index=int(meta["canonical_index"]),
        gt_skeleton=gt_skeleton,
        gt_axes=gt_axes,
        gt_angles=gt_angles,
        density=density,
        rig=rig,
    )


# -- checkpoints -----------------------------------------------------------------

def _tensor_entries(model: SceneModel, optimizer_state: dict | None):
    entries: list[tuple[str, np.ndarray]] = [
        ("points", model.points),
        ("features", model.features.data),
        ("alpha", model.alpha.data),
        ("joints", model.joints.data),
        ("medial_points", model.medial_points),
        ("arap_neighbors", model.arap_neighbors),
        ("regressor_params", _flat([p.data for p in model.regressor.parameters()])),
        ("head_params", _flat([p.data for p in model.render_model.parameters()])),
    ]
    if model.raw_weights is not None:
        entries.append(("raw_weights", model.raw_weights.data))
    if model.merged_weights is not None:
        entries.append(("merged_weights", model.merged_weights))
    if optimizer_state:
        for group, state in optimizer_state.items():
            entries.append((f"adam.{group}.m", _flat(state["m"])))
            entries.append((f"adam.{group}.v", _flat(state["v"])))
    return entries


def _flat(arrays) -> np.ndarray:
    if isinstance(arrays, np.ndarray):
        return arrays.reshape(-1)
    return np.concatenate([a.reshape(-1) for a in arrays]) if len(arrays) else np.zeros(0)


def save_checkpoint(
    path,
    model: SceneModel,
    optimizer_state: dict | None = None,
    rng_state: dict | None = None,
) -> None:
    entries = _tensor_entries(model, optimizer_state)
    table = []
    offset = 0
    payloads = []
    for name, arr in entries:
        arr = np.ascontiguousarray(arr)
        dtype = "i8" if arr.dtype.kind in "iu" else "f8"
        raw = arr.astype("<" + dtype).tobytes()
        table.append({"name": name, "shape": list(arr.shape), "dtype": dtype, "offset": offset})
        payloads.append(raw)
        offset += len(raw)
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "parents": model.skeleton.parents.tolist(),
        "simplified": model.simplified,
        "has_root_column": model.has_root_column,
        "bone_source": None if model.bone_source is None else model.bone_source.tolist(),
        "timestamps": model.timestamps.tolist(),
        "canonical_index": model.canonical_index,
        "iteration": model.iteration,
        "config": model.config.to_dict(),
        "regressor": {
            "n_bones": model.regressor.n_bones,
            "bands": model.regressor.bands,
            "hidden": model.regressor.hidden,
        },
        "adam_steps": {g: s["t"] for g, s in (optimizer_state or {}).items()},
        "rng_state": rng_state,
        "cameras": [c.to_dict() for c in model.cameras],
    }
    header = json.dumps({"tensors": table, "meta": meta}).encode("utf-8")
    body = b"APCK" + struct.pack("<IQ", CHECKPOINT_VERSION, len(header)) + header + b"".join(payloads)
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(body + digest)


def load_checkpoint(path) -> tuple[SceneModel, dict | None, dict | None]:
    """Returns (model, optimizer_state or None, rng_state or None)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 48 or blob[:4] != b"APCK":
        raise DataError(f"{path}: not a checkpoint file")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise DataError(f"{path}: checksum mismatch (corrupt or truncated)")
    version, header_len = struct.unpack("<IQ", body[4:16])
    if version > CHECKPOINT_VERSION:
        raise DataError(f"{path}: format version {version} is newer than supported {CHECKPOINT_VERSION}")
    header = json.loads(body[16 : 16 + header_len].decode("utf-8"))
    payload = body[16 + header_len :]

    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        dt = "<" + entry["dtype"]
        off = entry["offset"]
        arr = np.frombuffer(payload, dtype=dt, count=n, offset=off)
        arrays[entry["name"]] = arr.reshape(shape).astype(entry["dtype"].replace("i8", "int64").replace("f8", "float64"))

    meta = header["meta"]
    config = TrainConfig.from_dict(meta["config"])
    from .nn import load_parameters  # local import to keep module load light

    reg_meta = meta["regressor"]
    rng = np.random.default_rng(0)
    regressor = PoseRegressor(reg_meta["n_bones"], rng, bands=reg_meta["bands"], hidden=reg_meta["hidden"])
    load_parameters(regressor.parameters(), arrays["regressor_params"])
    render_model = RenderModel(config.render, rng)
    load_parameters(render_model.parameters(), arrays["head_params"])

    skeleton = Skeleton(arrays["joints"].copy(), np.asarray(meta["parents"], dtype=np.int64))
    model = SceneModel(
        points=arrays["points"],
        features=Tensor(arrays["features"], requires_grad=True),
        alpha=Tensor(arrays["alpha"], requires_grad=True),
        joints=Tensor(arrays["joints"], requires_grad=True),
        skeleton=skeleton,
        regressor=regressor,
        render_model=render_model,
        medial_points=arrays["medial_points"],
        arap_neighbors=arrays["arap_neighbors"],
        config=config,
        timestamps=np.asarray(meta["timestamps"], dtype=np.float64),
        canonical_index=int(meta["canonical_index"]),
        raw_weights=Tensor(arrays["raw_weights"], requires_grad=True) if "raw_weights" in arrays else None,
        merged_weights=arrays.get("merged_weights"),
        has_root_column=bool(meta["has_root_column"]),
        bone_source=None if meta["bone_source"] is None else np.asarray(meta["bone_source"], dtype=np.int64),
        iteration=int(meta["iteration"]),
        cameras=[Camera.from_dict(c) for c in meta.get("cameras", [])],
    )
    optimizer_state = None
    if meta["adam_steps"]:
        optimizer_state = {
            group: {
                "m": arrays[f"adam.{group}.m"],
                "v": arrays[f"adam.{group}.v"],
                "t": int(t),
            }
            for group, t in meta["adam_steps"].items()
        }
    return model, optimizer_state, meta.get("rng_state")
