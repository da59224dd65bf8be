/** Pose construction: slider angles to the axis-angle wire format.
 *
 * Sliders expose per-joint x/y/z rotations in degrees; submission composes
 * them (Rz * Ry * Rx) and converts to a single axis-angle via quaternions.
 * No rendering math lives here - pixels always come from the service.
 */

import type { JointAngles, Pose, Vec3 } from "./types.js";

type Quat = { w: number; x: number; y: number; z: number };

function axisQuat(axis: Vec3, angleRad: number): Quat {
  const h = angleRad / 2;
  const s = Math.sin(h);
  return { w: Math.cos(h), x: axis[0] * s, y: axis[1] * s, z: axis[2] * s };
}

function mulQuat(a: Quat, b: Quat): Quat {
  return {
    w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
    x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
    y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
    z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
  };
}

/** Composite rotation Rz(z) Ry(y) Rx(x) from degrees to (axis, angle). */
export function eulerToAxisAngle(angles: JointAngles): { axis: Vec3; angle: number } {
  const rad = (d: number) => (d * Math.PI) / 180;
  const q = mulQuat(
    axisQuat([0, 0, 1], rad(angles.z)),
    mulQuat(axisQuat([0, 1, 0], rad(angles.y)), axisQuat([1, 0, 0], rad(angles.x)))
  );
  const norm = Math.sqrt(q.x * q.x + q.y * q.y + q.z * q.z);
  if (norm < 1e-12) {
    return { axis: [0, 0, 1], angle: 0 };
  }
  const angle = 2 * Math.atan2(norm, q.w);
  return { axis: [q.x / norm, q.y / norm, q.z / norm], angle };
}

export function restPose(boneCount: number): Pose {
  return {
    axes: Array.from({ length: boneCount }, () => [0, 0, 1] as Vec3),
    angles: Array.from({ length: boneCount }, () => 0),
    root: { axis: [0, 0, 1], angle: 0, translation: [0, 0, 0] },
  };
}

/** Build the wire pose from slider state; arity always matches the sliders. */
export function buildPose(
  jointSliders: JointAngles[],
  rootSliders: JointAngles,
  rootTranslation: Vec3
): Pose {
  const axes: Vec3[] = [];
  const angles: number[] = [];
  for (const sliders of jointSliders) {
    const { axis, angle } = eulerToAxisAngle(sliders);
    axes.push(axis);
    angles.push(angle);
  }
  const root = eulerToAxisAngle(rootSliders);
  return {
    axes,
    angles,
    root: { axis: root.axis, angle: root.angle, translation: [...rootTranslation] as Vec3 },
  };
}

export function poseArity(pose: Pose): number {
  return pose.angles.length;
}

/** Client-side guard mirroring the server's 422 check. */
export function arityMatches(pose: Pose, boneCount: number): boolean {
  return pose.angles.length === boneCount && pose.axes.length === boneCount;
}

export function clonePose(pose: Pose): Pose {
  return {
    axes: pose.axes.map((a) => [...a] as Vec3),
    angles: [...pose.angles],
    root: {
      axis: [...pose.root.axis] as Vec3,
      angle: pose.root.angle,
      translation: [...pose.root.translation] as Vec3,
    },
  };
}
