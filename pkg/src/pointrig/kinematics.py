"""Skinning weights, rotations, forward kinematics and LBS point warping.

All differentiable paths run through the autodiff tensors so gradients reach
raw weights, the softmax temperature, joint positions and pose parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError
from .fields import segment_distances
from .nn import MLP, encoding_dim, positional_encoding
from .skeleton import Skeleton

ALPHA_INIT = 0.1
MIN_ALPHA = 1e-6
_EYE3 = np.eye(3)


@dataclass
class Pose:
    """Per-bone axis-angle plus a root rigid motion. Fields are Tensors."""

    axes: Tensor  # (B, 3)
    angles: Tensor  # (B,)
    root_axis: Tensor  # (3,)
    root_angle: Tensor  # scalar
    root_translation: Tensor  # (3,)

    @property
    def n_bones(self) -> int:
        return self.axes.shape[0]

    @classmethod
    def rest(cls, n_bones: int) -> "Pose":
        return cls(
            axes=Tensor(np.zeros((n_bones, 3))),
            angles=Tensor(np.zeros(n_bones)),
            root_axis=Tensor(np.zeros(3)),
            root_angle=Tensor(0.0),
            root_translation=Tensor(np.zeros(3)),
        )

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        try:
            axes = np.asarray(d["axes"], dtype=np.float64).reshape(-1, 3)
            angles = np.asarray(d["angles"], dtype=np.float64).reshape(-1)
            root = d["root"]
            root_axis = np.asarray(root["axis"], dtype=np.float64).reshape(3)
            root_angle = float(root["angle"])
            root_t = np.asarray(root["translation"], dtype=np.float64).reshape(3)
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed pose: {e}") from None
        if len(axes) != len(angles):
            raise DataError(f"pose has {len(axes)} axes but {len(angles)} angles")
        return cls(Tensor(axes), Tensor(angles), Tensor(root_axis), Tensor(root_angle), Tensor(root_t))

    def to_dict(self) -> dict:
        return {
            "axes": self.axes.data.tolist(),
            "angles": self.angles.data.tolist(),
            "root": {
                "axis": self.root_axis.data.tolist(),
                "angle": float(self.root_angle.data),
                "translation": self.root_translation.data.tolist(),
            },
        }


def init_weights(points: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """Raw skinning logits: exponential decay of point-to-bone distance.

    w_hat[i, b] = 1 / e^dist(p_i, segment_b). A skeleton without bones gets a
    single implicit root column of uniform logits.
    """
    points = np.asarray(points, dtype=np.float64)
    if skeleton.n_bones == 0:
        return np.ones((len(points), 1))
    cols = []
    for p, j in skeleton.bones:
        d = segment_distances(points, skeleton.joints[p], skeleton.joints[j])
        cols.append(np.exp(-d))
    return np.stack(cols, axis=1)


def normalize_weights(raw, alpha) -> Tensor:
    """Row-wise softmax of raw / alpha; alpha must stay positive."""
    if isinstance(alpha, Tensor):
        alpha_t = ad.maximum_const(alpha, MIN_ALPHA)
    else:
        if alpha <= 0:
            raise DataError(f"softmax temperature must be positive, got {alpha}")
        alpha_t = Tensor(float(alpha))
    raw = ad.as_tensor(raw)
    return ad.softmax(raw / alpha_t, axis=-1)


def _normalize_rows(v: Tensor) -> Tensor:
    return v / ad.vector_norm(v, axis=-1, keepdims=True)


def rodrigues(axis, angle) -> Tensor:
    """Rotation matrices from axis-angle: R = I + sin(t) K + (1 - cos(t)) K^2.

    Accepts (B, 3) axes with (B,) angles or a single (3,) axis with a scalar.
    Axes are normalized here; a zero axis yields the identity.
    """
    axis = ad.as_tensor(axis)
    angle = ad.as_tensor(angle)
    single = axis.ndim == 1
    if single:
        axis = ad.reshape(axis, (1, 3))
        angle = ad.reshape(angle, (1,))
    n = _normalize_rows(axis)
    nx, ny, nz = n[:, 0], n[:, 1], n[:, 2]
    zero = Tensor(np.zeros(axis.shape[0]))
    k = ad.stack(
        [
            ad.stack([zero, -nz, ny], axis=-1),
            ad.stack([nz, zero, -nx], axis=-1),
            ad.stack([-ny, nx, zero], axis=-1),
        ],
        axis=-2,
    )  # (B, 3, 3)
    s = ad.reshape(ad.sin(angle), (-1, 1, 1))
    c = ad.reshape(ad.cos(angle), (-1, 1, 1))
    r = Tensor(_EYE3) + s * k + (1.0 - c) * ad.matmul(k, k)
    return r[0] if single else r


def _rigid_about_pivot(rot: Tensor, pivot: Tensor, extra_t: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Rigid transform rotating by rot around pivot: translation = pivot - R pivot."""
    t = pivot - ad.reshape(ad.matmul(rot, ad.reshape(pivot, (3, 1))), (3,))
    if extra_t is not None:
        t = t + extra_t
    return rot, t


def forward_kinematics(skeleton: Skeleton, pose: Pose, joints: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Global rigid transforms per bone, root motion applied outermost.

    Bone b's local transform rotates by its axis-angle about its parent
    joint's position; globals compose parent-to-child; the root's own rigid
    motion multiplies everything from the left. Returns rotations (B, 3, 3)
    and translations (B, 3); for a bone-less skeleton the root motion itself
    is returned as a single implicit bone.
    """
    if pose.n_bones != skeleton.n_bones:
        raise DataError(f"pose has {pose.n_bones} bones, skeleton has {skeleton.n_bones}")
    joints = joints if joints is not None else Tensor(skeleton.joints)
    root_rot = rodrigues(pose.root_axis, pose.root_angle)
    root_r, root_t = _rigid_about_pivot(root_rot, joints[0], pose.root_translation)

    n_bones = skeleton.n_bones
    if n_bones == 0:
        return ad.reshape(root_r, (1, 3, 3)), ad.reshape(root_t, (1, 3))

    local_rots = rodrigues(pose.axes, pose.angles)  # (B, 3, 3)
    rots: list[Tensor] = [None] * n_bones
    trans: list[Tensor] = [None] * n_bones
    for b in range(n_bones):
        joint = b + 1
        parent_joint = int(skeleton.parents[joint])
        r_local, t_local = _rigid_about_pivot(local_rots[b], joints[parent_joint])
        if parent_joint == 0:
            r_parent, t_parent = root_r, root_t
        else:
            pb = parent_joint - 1
            if pb >= b:
                raise DataError("skeleton joints must be topologically ordered (parent index < child)")
            r_parent, t_parent = rots[pb], trans[pb]
        rots[b] = ad.matmul(r_parent, r_local)
        trans[b] = ad.reshape(ad.matmul(r_parent, ad.reshape(t_local, (3, 1))), (3,)) + t_parent
    return ad.stack(rots, axis=0), ad.stack(trans, axis=0)


def lbs_warp(points, weights: Tensor, rotations: Tensor, translations: Tensor) -> tuple[Tensor, Tensor]:
    """Warp points by the convex combination of bone transforms (LBS).

    Computed in delta form, p + sum_b w_b (T_b p - p), so identity transforms
    reproduce the canonical points bit-exactly for any normalized weights.
    Returns warped points (N, 3) and the blended, generally non-orthonormal
    rotation blocks (N, 3, 3) needed to carry queries into canonical frames.
    """
    pts = ad.as_tensor(points)
    n_transforms = rotations.shape[0]
    if weights.shape[1] != n_transforms:
        raise DataError(f"weights have {weights.shape[1]} columns, got {n_transforms} transforms")
    warped = pts
    for b in range(n_transforms):
        moved = ad.matmul(pts, ad.swapaxes(rotations[b], 0, 1)) + translations[b]
        warped = warped + weights[:, b : b + 1] * (moved - pts)
    rot_delta = ad.reshape(rotations - Tensor(_EYE3), (n_transforms, 9))
    blended_rot = Tensor(_EYE3) + ad.reshape(ad.matmul(weights, rot_delta), (-1, 3, 3))
    return warped, blended_rot


class PoseRegressor:
    """MLP mapping normalized time to all bone rotations plus root motion.

    Four layers; the first widens to hidden + encoded-time width. The output
    layer is down-scaled at init so initial angles stay near the rest pose.
    """

    def __init__(self, n_bones: int, rng: np.random.Generator, bands: int = 10, hidden: int = 128):
        self.n_bones = n_bones
        self.bands = bands
        self.hidden = hidden
        in_dim = encoding_dim(1, bands)
        self.mlp = MLP([in_dim, hidden + in_dim, hidden, hidden, 4 * n_bones + 7], rng, out_scale=0.01)

    @property
    def out_dim(self) -> int:
        return 4 * self.n_bones + 7

    def parameters(self) -> list[Tensor]:
        return self.mlp.parameters()

    def __call__(self, t: float) -> Pose:
        enc = positional_encoding(Tensor(np.full((1, 1), float(t))), self.bands)
        out = ad.reshape(self.mlp(enc), (self.out_dim,))
        b = self.n_bones
        bones = ad.reshape(out[: 4 * b], (b, 4)) if b else Tensor(np.zeros((0, 4)))
        return Pose(
            axes=bones[:, :3] if b else Tensor(np.zeros((0, 3))),
            angles=bones[:, 3] if b else Tensor(np.zeros(0)),
            root_axis=out[4 * b : 4 * b + 3],
            root_angle=out[4 * b + 3],
            root_translation=out[4 * b + 4 :],
        )

    def bone_angle_table(self, timestamps) -> tuple[np.ndarray, np.ndarray]:
        """Regressed bone and root angles (radians) for a list of timestamps."""
        bone_angles = np.zeros((len(timestamps), self.n_bones))
        root_angles = np.zeros(len(timestamps))
        for i, t in enumerate(timestamps):
            pose = self(float(t))
            bone_angles[i] = pose.angles.data
            root_angles[i] = float(pose.root_angle.data)
        return bone_angles, root_angles
