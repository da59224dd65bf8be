export type Vec3 = [number, number, number];

export interface RootMotion {
  axis: Vec3;
  angle: number;
  translation: Vec3;
}

export interface Pose {
  axes: Vec3[];
  angles: number[];
  root: RootMotion;
}

export interface JointInfo {
  id: number;
  position: Vec3;
  parent: number;
}

export interface SkeletonInfo {
  joints: JointInfo[];
  bones: [number, number][];
}

export interface CameraInfo {
  id: number;
  width: number;
  height: number;
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  c2w: number[]; // 16 floats, row-major
}

export interface MetaInfo {
  cameras: CameraInfo[];
  timestamps: number[];
  canonical_index: number;
  bone_count: number;
  simplified: boolean;
}

/** Per-joint slider state: Euler-style angles in degrees plus root motion. */
export interface JointAngles {
  x: number;
  y: number;
  z: number;
}

export interface Keyframe {
  name: string;
  pose: Pose;
}
