/** Editor state: skeleton, slider values, camera, keyframes. */

import { buildPose, clonePose } from "./pose.js";
import type { OrbitState } from "./camera.js";
import type { JointAngles, Keyframe, MetaInfo, Pose, SkeletonInfo, Vec3 } from "./types.js";

export interface EditorState {
  skeleton: SkeletonInfo;
  meta: MetaInfo;
  /** One slider triple per bone (the bone arriving at joint b+1). */
  jointSliders: JointAngles[];
  rootSliders: JointAngles;
  rootTranslation: Vec3;
  camera: { kind: "dataset"; id: number } | { kind: "orbit"; orbit: OrbitState };
  keyframes: Keyframe[];
  resolution: number;
  busy: boolean;
}

export function createState(skeleton: SkeletonInfo, meta: MetaInfo): EditorState {
  return {
    skeleton,
    meta,
    jointSliders: Array.from({ length: meta.bone_count }, () => ({ x: 0, y: 0, z: 0 })),
    rootSliders: { x: 0, y: 0, z: 0 },
    rootTranslation: [0, 0, 0],
    camera:
      meta.cameras.length > 0
        ? { kind: "dataset", id: meta.cameras[0].id }
        : { kind: "orbit", orbit: { azimuthDeg: 0, elevationDeg: 18, radius: 2.6 } },
    keyframes: [],
    resolution: 256,
    busy: false,
  };
}

export function currentPose(state: EditorState): Pose {
  return buildPose(state.jointSliders, state.rootSliders, state.rootTranslation);
}

export function resetSliders(state: EditorState): void {
  state.jointSliders = state.jointSliders.map(() => ({ x: 0, y: 0, z: 0 }));
  state.rootSliders = { x: 0, y: 0, z: 0 };
  state.rootTranslation = [0, 0, 0];
}

/** Keyframes are immutable once added: the stored pose is a deep copy. */
export function addKeyframe(state: EditorState, name: string): Keyframe {
  const frame: Keyframe = { name, pose: clonePose(currentPose(state)) };
  state.keyframes = [...state.keyframes, frame];
  return frame;
}

export function removeKeyframe(state: EditorState, index: number): void {
  state.keyframes = state.keyframes.filter((_, i) => i !== index);
}
