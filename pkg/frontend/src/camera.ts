/** Orbit camera construction and joint projection for the skeleton overlay.
 *
 * The overlay draws joint markers at projected positions; the image itself is
 * always fetched from the service.
 */

import type { CameraInfo, Vec3 } from "./types.js";

function normalize(v: Vec3): Vec3 {
  const n = Math.hypot(v[0], v[1], v[2]);
  return [v[0] / n, v[1] / n, v[2] / n];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
}

export interface OrbitState {
  azimuthDeg: number;
  elevationDeg: number;
  radius: number;
}

/** Right-handed camera at the orbit position looking at the origin (down -z). */
export function orbitCamera(
  orbit: OrbitState,
  width: number,
  height: number,
  fovDeg = 42
): CameraInfo {
  const az = (orbit.azimuthDeg * Math.PI) / 180;
  const el = (orbit.elevationDeg * Math.PI) / 180;
  const eye: Vec3 = [
    orbit.radius * Math.cos(az) * Math.cos(el),
    orbit.radius * Math.sin(az) * Math.cos(el),
    orbit.radius * Math.sin(el),
  ];
  const zAxis = normalize(eye);
  const up: Vec3 = Math.abs(zAxis[2]) > 0.999 ? [1, 0, 0] : [0, 0, 1];
  const xAxis = normalize(cross(up, zAxis));
  const yAxis = cross(zAxis, xAxis);
  const c2w = [
    xAxis[0], yAxis[0], zAxis[0], eye[0],
    xAxis[1], yAxis[1], zAxis[1], eye[1],
    xAxis[2], yAxis[2], zAxis[2], eye[2],
    0, 0, 0, 1,
  ];
  const focal = (0.5 * width) / Math.tan(((fovDeg / 2) * Math.PI) / 180);
  return {
    id: -1,
    width,
    height,
    fx: focal,
    fy: focal,
    cx: width / 2,
    cy: height / 2,
    c2w,
  };
}

/** World point to pixel coordinates; null when behind the camera. */
export function projectPoint(camera: CameraInfo, p: Vec3): [number, number] | null {
  const m = camera.c2w;
  const d: Vec3 = [p[0] - m[3], p[1] - m[7], p[2] - m[11]];
  // camera frame: columns of the rotation block
  const xc = m[0] * d[0] + m[4] * d[1] + m[8] * d[2];
  const yc = m[1] * d[0] + m[5] * d[1] + m[9] * d[2];
  const zc = m[2] * d[0] + m[6] * d[1] + m[10] * d[2];
  const depth = -zc;
  if (depth <= 1e-9) return null;
  return [
    (camera.fx * xc) / depth + camera.cx - 0.5,
    camera.cy - (camera.fy * yc) / depth - 0.5,
  ];
}

export function scaleCamera(camera: CameraInfo, width: number, height: number): CameraInfo {
  const sx = width / camera.width;
  const sy = height / camera.height;
  return {
    ...camera,
    width,
    height,
    fx: camera.fx * sx,
    fy: camera.fy * sy,
    cx: camera.cx * sx,
    cy: camera.cy * sy,
  };
}
