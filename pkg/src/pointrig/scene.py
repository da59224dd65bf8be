"""The full trainable scene state: canonical cloud, skeleton, skinning
weights, pose regressor and decoder heads, plus warping and rendering glue.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig
from .errors import DataError
from .kinematics import ALPHA_INIT, Pose, PoseRegressor, forward_kinematics, init_weights, lbs_warp, normalize_weights
from .losses import canonical_neighborhoods
from .render import Camera, RenderModel, render_image, render_rays
from .skeleton import Skeleton, StaticityReport, detect_static_joints, simplify
from .voxels import FeaturePointCloud

CHECKPOINT_VERSION = 1


@dataclass
class SceneModel:
    points: np.ndarray  # (N, 3) canonical, fixed
    features: Tensor  # (N, F) learnable
    alpha: Tensor  # softmax temperature, learnable
    joints: Tensor  # (J, 3) learnable
    skeleton: Skeleton
    regressor: PoseRegressor
    render_model: RenderModel
    medial_points: np.ndarray  # (M, 3) fixed, anchors the skeleton loss
    arap_neighbors: np.ndarray  # (N, k) fixed canonical neighborhoods
    config: TrainConfig
    timestamps: np.ndarray
    canonical_index: int
    raw_weights: Tensor | None = None  # (N, B) logits while trainable
    merged_weights: np.ndarray | None = None  # (N, C) normalized, post-simplify
    has_root_column: bool = False
    bone_source: np.ndarray | None = None  # old bone per current bone (simplified)
    iteration: int = 0
    cameras: list[Camera] = field(default_factory=list)

    @property
    def simplified(self) -> bool:
        return self.merged_weights is not None

    @property
    def n_bones(self) -> int:
        return self.skeleton.n_bones

    @property
    def n_points(self) -> int:
        return len(self.points)

    # -- parameters ----------------------------------------------------------
    def parameter_groups(self) -> list[tuple[str, list[Tensor], float]]:
        cfg = self.config
        groups = [
            ("features", [self.features], cfg.lr_features),
            ("heads", self.render_model.parameters(), cfg.lr_mlp),
            ("regressor", self.regressor.parameters(), cfg.lr_regressor),
            ("alpha_joints", [self.alpha, self.joints], cfg.lr_alpha_joints),
        ]
        if self.raw_weights is not None:
            groups.insert(1, ("weights", [self.raw_weights], cfg.lr_mlp))
        return groups

    # -- kinematics ----------------------------------------------------------
    def pose_at(self, t: float) -> Pose:
        """Regressed pose; on a simplified model the surviving bones pick
        their parameters from the bones they collapsed from."""
        pose = self.regressor(float(t))
        if self.bone_source is None:
            return pose
        src = self.bone_source
        return Pose(
            axes=ad.gather_rows(pose.axes, src) if len(src) else Tensor(np.zeros((0, 3))),
            angles=ad.gather_rows(pose.angles, src) if len(src) else Tensor(np.zeros(0)),
            root_axis=pose.root_axis,
            root_angle=pose.root_angle,
            root_translation=pose.root_translation,
        )

    def normalized_weights(self) -> Tensor:
        if self.simplified:
            return Tensor(self.merged_weights)
        return normalize_weights(self.raw_weights, self.alpha)

    def transforms(self, pose: Pose) -> tuple[Tensor, Tensor]:
        """Global transforms aligned with the weight columns (root column,
        when present, rides the root motion alone)."""
        rots, trans = forward_kinematics(self.skeleton, pose, joints=self.joints)
        if self.simplified and self.has_root_column:
            root_pose = Pose(
                axes=Tensor(np.zeros((0, 3))),
                angles=Tensor(np.zeros(0)),
                root_axis=pose.root_axis,
                root_angle=pose.root_angle,
                root_translation=pose.root_translation,
            )
            root_skel = Skeleton(self.skeleton.joints[:1], np.array([-1]))
            rroot, troot = forward_kinematics(root_skel, root_pose, joints=self.joints[:1])
            if self.n_bones:
                rots = ad.concat([rroot, rots], axis=0)
                trans = ad.concat([troot, trans], axis=0)
            else:
                rots, trans = rroot, troot
        elif self.n_bones == 0:
            pass  # forward_kinematics already returned the implicit root bone
        return rots, trans

    def warp(self, pose: Pose, weights: Tensor | None = None) -> tuple[Tensor, Tensor]:
        weights = weights if weights is not None else self.normalized_weights()
        rots, trans = self.transforms(pose)
        return lbs_warp(self.points, weights, rots, trans)

    # -- rendering -----------------------------------------------------------
    def render_batch(self, rays, pose: Pose, rng=None, weights: Tensor | None = None):
        warped, blended = self.warp(pose, weights=weights)
        pix, opac = render_rays(self.render_model, self.features, warped, blended, rays, rng=rng)
        return pix, opac, warped

    def render_camera(self, camera: Camera, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
        warped, blended = self.warp(pose)
        return render_image(self.render_model, self.features, warped, blended, camera)

    # -- simplification --------------------------------------------------------
    def staticity(self, threshold_deg: float) -> StaticityReport:
        angles, root_angles = self.regressor.bone_angle_table(self.timestamps)
        if self.bone_source is not None:
            angles = angles[:, self.bone_source] if len(self.bone_source) else angles[:, :0]
        return detect_static_joints(self.current_skeleton(), angles, root_angles, threshold_deg)

    def current_skeleton(self) -> Skeleton:
        return Skeleton(self.joints.data.copy(), self.skeleton.parents.copy())

    def apply_simplification(self, threshold_deg: float) -> "SceneModel":
        """Merge static bones' weights and prune joints; freezes the weights."""
        if self.simplified:
            weights = self.merged_weights
            offset = 1 if self.has_root_column else 0
            weights_bones = weights[:, offset:]
            root_col = weights[:, :offset]
        elif self.n_bones == 0:  # implicit root bone carries all mass
            root_col = self.normalized_weights().data
            weights_bones = np.zeros((self.n_points, 0))
        else:
            weights_bones = self.normalized_weights().data
            root_col = np.zeros((self.n_points, 0))
        report = self.staticity(threshold_deg)
        out = simplify(self.current_skeleton(), weights_bones, report)
        merged = out.weights
        has_root = out.has_root_column
        if root_col.shape[1]:  # prior root mass stays on the root column
            if not has_root:
                merged = np.concatenate([np.zeros((len(merged), 1)), merged], axis=1)
                has_root = True
            merged[:, 0] += root_col[:, 0]
        old_source = self.bone_source if self.bone_source is not None else np.arange(self.n_bones)
        return SceneModel(
            points=self.points,
            features=self.features,
            alpha=self.alpha,
            joints=Tensor(out.skeleton.joints.copy(), requires_grad=True),
            skeleton=out.skeleton,
            regressor=self.regressor,
            render_model=self.render_model,
            medial_points=self.medial_points,
            arap_neighbors=self.arap_neighbors,
            config=self.config,
            timestamps=self.timestamps,
            canonical_index=self.canonical_index,
            raw_weights=None,
            merged_weights=merged,
            has_root_column=has_root,
            bone_source=old_source[out.bone_source] if len(out.bone_source) else np.zeros(0, np.int64),
            iteration=self.iteration,
            cameras=self.cameras,
        )


def extract_scene(dataset, config: TrainConfig, rng: np.random.Generator | None = None) -> SceneModel:
    """Full initialization: point cloud from the density grid, medial-axis
    skeleton, distance-based skinning weights, fresh regressor and heads."""
    from .skeleton import extract_joints, medial_axis_3d, prune_disconnected, select_root
    from .voxels import binarize_and_clean, extract_points

    if dataset.density is None:
        raise DataError("dataset has no canonical density grid (gt/density.bin)")
    rng = rng or np.random.default_rng(config.seed)
    cloud = extract_points(
        dataset.density,
        threshold=config.extract_threshold,
        target_count=config.target_points,
        feature_dim=config.render.feature_dim,
        rng=rng,
    )
    volume = binarize_and_clean(cloud.grid, config.extract_threshold)
    graph = medial_axis_3d(volume)
    root = select_root(graph)
    graph, root = prune_disconnected(graph, root)
    skeleton = extract_joints(graph, root, config.bone_length)
    return build_scene(
        cloud,
        skeleton,
        graph.points,
        config,
        dataset.timestamps,
        dataset.canonical_index,
        rng,
        cameras=dataset.cameras,
    )


def build_scene(
    cloud: FeaturePointCloud,
    skeleton: Skeleton,
    medial_points: np.ndarray,
    config: TrainConfig,
    timestamps: np.ndarray,
    canonical_index: int,
    rng: np.random.Generator,
    cameras: list[Camera] | None = None,
) -> SceneModel:
    """Fresh trainable state from an extracted cloud and initial skeleton."""
    if config.render.feature_dim != cloud.features.shape[1]:
        raise DataError(
            f"config feature_dim {config.render.feature_dim} != cloud features {cloud.features.shape[1]}"
        )
    raw = init_weights(cloud.points, skeleton)
    return SceneModel(
        points=cloud.points.copy(),
        features=Tensor(cloud.features.copy(), requires_grad=True),
        raw_weights=Tensor(raw, requires_grad=True),
        alpha=Tensor(ALPHA_INIT, requires_grad=True),
        joints=Tensor(skeleton.joints.copy(), requires_grad=True),
        skeleton=skeleton,
        regressor=PoseRegressor(skeleton.n_bones, rng),
        render_model=RenderModel(config.render, rng),
        medial_points=np.asarray(medial_points, dtype=np.float64),
        arap_neighbors=canonical_neighborhoods(cloud.points, k=config.render.neighbors),
        config=config,
        timestamps=np.asarray(timestamps, dtype=np.float64),
        canonical_index=int(canonical_index),
        cameras=list(cameras) if cameras else [],
    )
