"""HTTP rendering service backing the pose editor.

Holds a loaded checkpoint immutably; every render is a pure function of
(checkpoint, request). With reload enabled, the checkpoint file is re-read
when its mtime changes, swapped in atomically between requests.
"""

from __future__ import annotations

import io
import logging
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from PIL import Image
from pydantic import BaseModel, Field

from .errors import DataError
from .kinematics import Pose
from .render import Camera
from .scene import SceneModel
from .sceneio import load_checkpoint

log = logging.getLogger(__name__)


class RootMotion(BaseModel):
    axis: list[float] = Field(min_length=3, max_length=3)
    angle: float
    translation: list[float] = Field(min_length=3, max_length=3)


class PoseBody(BaseModel):
    axes: list[list[float]]
    angles: list[float]
    root: RootMotion

    def to_pose(self) -> Pose:
        return Pose.from_dict(self.model_dump())


class CameraRef(BaseModel):
    id: int | None = None
    width: int | None = None
    height: int | None = None
    fx: float | None = None
    fy: float | None = None
    cx: float | None = None
    cy: float | None = None
    c2w: list[float] | None = None


class RenderRequest(BaseModel):
    pose: PoseBody
    camera: CameraRef
    width: int | None = None
    height: int | None = None


class InterpolateRequest(BaseModel):
    pose_a: PoseBody
    pose_b: PoseBody
    steps: int = Field(ge=2)


def interpolate_poses(pose_a: Pose, pose_b: Pose, steps: int) -> list[Pose]:
    """Linear per-bone interpolation; endpoints are returned verbatim.

    Axes of the second pose are sign-aligned to the first by dot product
    (with the angle negated accordingly) so interpolation takes the short way.
    """
    if pose_a.n_bones != pose_b.n_bones:
        raise DataError("poses have different bone counts")
    a_axes, a_angles = pose_a.axes.data, pose_a.angles.data
    b_axes, b_angles = pose_b.axes.data.copy(), pose_b.angles.data.copy()
    flip = (a_axes * b_axes).sum(axis=1) < 0
    b_axes[flip] *= -1.0
    b_angles[flip] *= -1.0
    a_root_axis = pose_a.root_axis.data
    b_root_axis, b_root_angle = pose_b.root_axis.data.copy(), float(pose_b.root_angle.data)
    if float(a_root_axis @ b_root_axis) < 0:
        b_root_axis *= -1.0
        b_root_angle *= -1.0

    out = []
    for i in range(steps):
        if i == 0:
            out.append(pose_a)
            continue
        if i == steps - 1:
            out.append(pose_b)
            continue
        t = i / (steps - 1)
        from .autodiff import Tensor

        out.append(
            Pose(
                axes=Tensor((1 - t) * a_axes + t * b_axes),
                angles=Tensor((1 - t) * a_angles + t * b_angles),
                root_axis=Tensor((1 - t) * a_root_axis + t * b_root_axis),
                root_angle=Tensor((1 - t) * float(pose_a.root_angle.data) + t * b_root_angle),
                root_translation=Tensor(
                    (1 - t) * pose_a.root_translation.data + t * pose_b.root_translation.data
                ),
            )
        )
    return out


class ModelHolder:
    """Checkpoint owner; reloads on file change when enabled."""

    def __init__(self, path, reload: bool = False):
        self.path = Path(path)
        self.reload = reload
        self._lock = threading.Lock()
        self._mtime = self.path.stat().st_mtime_ns
        self.model, _, _ = load_checkpoint(self.path)

    def get(self) -> SceneModel:
        if self.reload:
            with self._lock:
                mtime = self.path.stat().st_mtime_ns
                if mtime != self._mtime:
                    log.info("checkpoint changed on disk, reloading")
                    self.model, _, _ = load_checkpoint(self.path)
                    self._mtime = mtime
        return self.model


def render_png(model: SceneModel, camera: Camera, pose: Pose) -> bytes:
    img, _ = model.render_camera(camera, pose)
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data).save(buf, format="PNG")
    return buf.getvalue()


def scaled_camera(camera: Camera, width: int | None, height: int | None) -> Camera:
    if not width and not height:
        return camera
    width = width or camera.width
    height = height or camera.height
    sx, sy = width / camera.width, height / camera.height
    return Camera(
        id=camera.id,
        width=width,
        height=height,
        fx=camera.fx * sx,
        fy=camera.fy * sy,
        cx=camera.cx * sx,
        cy=camera.cy * sy,
        c2w=camera.c2w,
    )


def create_app(checkpoint_path, reload: bool = False) -> FastAPI:
    holder = ModelHolder(checkpoint_path, reload=reload)
    app = FastAPI(title="pointrig render service")

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def resolve_camera(model: SceneModel, ref: CameraRef) -> Camera:
        if ref.id is not None:
            for cam in model.cameras:
                if cam.id == ref.id:
                    return cam
            raise HTTPException(status_code=404, detail=f"unknown camera id {ref.id}")
        required = (ref.width, ref.height, ref.fx, ref.fy, ref.cx, ref.cy, ref.c2w)
        if any(v is None for v in required):
            raise HTTPException(status_code=400, detail="camera needs an id or full intrinsics + c2w")
        try:
            return Camera(
                id=-1, width=ref.width, height=ref.height, fx=ref.fx, fy=ref.fy,
                cx=ref.cx, cy=ref.cy, c2w=np.asarray(ref.c2w, dtype=np.float64).reshape(4, 4),
            )
        except (DataError, ValueError) as e:
            raise HTTPException(status_code=400, detail=str(e)) from None

    def check_arity(model: SceneModel, pose: PoseBody) -> Pose:
        if len(pose.angles) != model.n_bones or len(pose.axes) != model.n_bones:
            raise HTTPException(
                status_code=422,
                detail=f"pose has {len(pose.angles)} bones, checkpoint has {model.n_bones}",
            )
        try:
            return pose.to_pose()
        except DataError as e:
            raise HTTPException(status_code=400, detail=str(e)) from None

    @app.get("/api/skeleton")
    def skeleton():
        model = holder.get()
        sk = model.current_skeleton()
        return {
            "joints": [
                {"id": j, "position": sk.joints[j].tolist(), "parent": int(sk.parents[j])}
                for j in range(sk.n_joints)
            ],
            "bones": [list(b) for b in sk.bones],
        }

    @app.get("/api/pose")
    def pose_at(t: float):
        model = holder.get()
        return model.pose_at(t).to_dict()

    @app.get("/api/meta")
    def meta():
        model = holder.get()
        return {
            "cameras": [c.to_dict() for c in model.cameras],
            "timestamps": model.timestamps.tolist(),
            "canonical_index": model.canonical_index,
            "bone_count": model.n_bones,
            "simplified": model.simplified,
        }

    @app.post("/api/render")
    def render(req: RenderRequest):
        model = holder.get()
        pose = check_arity(model, req.pose)
        camera = scaled_camera(resolve_camera(model, req.camera), req.width, req.height)
        try:
            png = render_png(model, camera, pose)
        except HTTPException:
            raise
        except Exception as e:  # pure render failure surfaces as 500
            log.exception("render failed")
            raise HTTPException(status_code=500, detail=f"render failed: {e}") from None
        return Response(content=png, media_type="image/png")

    @app.post("/api/interpolate")
    def interpolate(req: InterpolateRequest):
        model = holder.get()
        pose_a = check_arity(model, req.pose_a)
        pose_b = check_arity(model, req.pose_b)
        return [p.to_dict() for p in interpolate_poses(pose_a, pose_b, req.steps)]

    return app
