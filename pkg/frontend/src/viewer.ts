/** Render preview: shows service-rendered frames, optional skeleton overlay. */

import { orbitCamera, projectPoint, scaleCamera } from "./camera.js";
import type { EditorState } from "./state.js";
import type { CameraInfo, SkeletonInfo } from "./types.js";

export function activeCamera(state: EditorState): CameraInfo | { id: number } {
  if (state.camera.kind === "dataset") {
    return { id: state.camera.id };
  }
  return orbitCamera(state.camera.orbit, state.resolution, state.resolution);
}

/** Full camera description used for the overlay projection. */
export function overlayCamera(state: EditorState): CameraInfo | null {
  if (state.camera.kind === "orbit") {
    return orbitCamera(state.camera.orbit, state.resolution, state.resolution);
  }
  const cam = state.meta.cameras.find((c) => c.id === (state.camera as { kind: "dataset"; id: number }).id);
  if (!cam) return null;
  return scaleCamera(cam, state.resolution, state.resolution);
}

export class Viewer {
  readonly canvas: HTMLCanvasElement;
  private overlayOn = false;
  private lastFrame: ImageBitmap | null = null;

  constructor(size: number) {
    this.canvas = document.createElement("canvas");
    this.canvas.width = size;
    this.canvas.height = size;
    this.canvas.className = "viewer-canvas";
  }

  toggleOverlay(on: boolean): void {
    this.overlayOn = on;
  }

  async showBlob(blob: Blob, state: EditorState, skeleton: SkeletonInfo): Promise<void> {
    this.lastFrame = await createImageBitmap(blob);
    this.redraw(state, skeleton);
  }

  redraw(state: EditorState, skeleton: SkeletonInfo): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    if (this.lastFrame) {
      ctx.drawImage(this.lastFrame, 0, 0, this.canvas.width, this.canvas.height);
    }
    if (!this.overlayOn) return;
    const camera = overlayCamera(state);
    if (!camera) return;
    const sx = this.canvas.width / camera.width;
    const sy = this.canvas.height / camera.height;
    ctx.strokeStyle = "#2ecc71";
    ctx.fillStyle = "#27ae60";
    for (const [parent, child] of skeleton.bones) {
      const a = projectPoint(camera, skeleton.joints[parent].position);
      const b = projectPoint(camera, skeleton.joints[child].position);
      if (!a || !b) continue;
      ctx.beginPath();
      ctx.moveTo(a[0] * sx, a[1] * sy);
      ctx.lineTo(b[0] * sx, b[1] * sy);
      ctx.stroke();
    }
    for (const joint of skeleton.joints) {
      const p = projectPoint(camera, joint.position);
      if (!p) continue;
      ctx.beginPath();
      ctx.arc(p[0] * sx, p[1] * sy, 3, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
}
