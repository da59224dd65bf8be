/** Pose editor wiring: joint sliders, orbit controls, keyframe timeline.
 *
 * Single source of truth for pixels is the render service; slider edits
 * debounce-trigger renders at reduced resolution, release renders full size.
 */

import { ApiError, Client, RenderGate, debounce } from "./api.js";
import { arityMatches } from "./pose.js";
import { activeCamera } from "./viewer.js";
import { Viewer } from "./viewer.js";
import { addKeyframe, createState, currentPose, resetSliders } from "./state.js";
import type { EditorState } from "./state.js";
import type { JointAngles } from "./types.js";

const PREVIEW_SCALE = 0.5; // while dragging

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

async function boot(): Promise<void> {
  const root = document.querySelector<HTMLDivElement>("#app");
  if (!root) throw new Error("#app container missing");
  const client = new Client();
  const gate = new RenderGate(client);

  const banner = el("div", "banner");
  banner.hidden = true;
  root.appendChild(banner);

  const showError = (message: string) => {
    banner.hidden = false;
    banner.textContent = message; // last good frame stays on the canvas
  };
  const clearError = () => {
    banner.hidden = true;
  };

  let state: EditorState;
  try {
    const [skeleton, meta] = await Promise.all([client.skeleton(), client.meta()]);
    state = createState(skeleton, meta);
  } catch (err) {
    showError(`cannot reach the render service: ${err}`);
    return;
  }

  const layout = el("div", "layout");
  const viewport = el("div", "viewport");
  const panel = el("div", "panel");
  layout.append(viewport, panel);
  root.appendChild(layout);

  const viewer = new Viewer(state.resolution);
  viewport.appendChild(viewer.canvas);

  const requestRender = async (preview: boolean) => {
    const pose = currentPose(state);
    if (!arityMatches(pose, state.meta.bone_count)) {
      showError(
        `pose has ${pose.angles.length} bones but the checkpoint expects ${state.meta.bone_count}`
      );
      return;
    }
    const size = preview
      ? Math.round(state.resolution * PREVIEW_SCALE)
      : state.resolution;
    state.busy = true;
    try {
      const blob = await gate.render({
        pose,
        camera: activeCamera(state),
        width: size,
        height: size,
      });
      if (blob) {
        await viewer.showBlob(blob, state, state.skeleton);
        clearError();
      }
    } catch (err) {
      showError(err instanceof ApiError ? `render failed (${err.status}): ${err.message}` : `${err}`);
    } finally {
      state.busy = false;
    }
  };
  const previewRender = debounce(() => void requestRender(true), 120);

  // -- joint tree with sliders ------------------------------------------------
  const tree = el("div", "joint-tree");
  panel.appendChild(el("h3", undefined, "Joints"));
  panel.appendChild(tree);

  const sliderRow = (label: string, angles: JointAngles, axis: keyof JointAngles) => {
    const row = el("div", "slider-row");
    row.appendChild(el("span", "slider-label", `${label}.${axis}`));
    const slider = el("input") as HTMLInputElement;
    slider.type = "range";
    slider.min = "-180";
    slider.max = "180";
    slider.step = "1";
    slider.value = String(angles[axis]);
    const value = el("span", "slider-value", "0°");
    slider.addEventListener("input", () => {
      angles[axis] = Number(slider.value);
      value.textContent = `${slider.value}°`;
      previewRender();
    });
    slider.addEventListener("change", () => void requestRender(false));
    row.append(slider, value);
    return row;
  };

  const jointName = (jointId: number) =>
    state.skeleton.joints[jointId].parent < 0 ? `root j${jointId}` : `j${jointId}`;

  const buildTree = () => {
    tree.innerHTML = "";
    const byParent = new Map<number, number[]>();
    for (const joint of state.skeleton.joints) {
      const list = byParent.get(joint.parent) ?? [];
      list.push(joint.id);
      byParent.set(joint.parent, list);
    }
    const emit = (jointId: number, depth: number) => {
      const entry = el("div", "joint-entry");
      entry.style.marginLeft = `${depth * 14}px`;
      entry.appendChild(el("strong", undefined, jointName(jointId)));
      if (jointId > 0) {
        const bone = jointId - 1; // bone arriving at this joint
        for (const axis of ["x", "y", "z"] as const) {
          entry.appendChild(sliderRow(`b${bone}`, state.jointSliders[bone], axis));
        }
      } else {
        for (const axis of ["x", "y", "z"] as const) {
          entry.appendChild(sliderRow("root", state.rootSliders, axis));
        }
        const trans = el("div", "slider-row");
        trans.appendChild(el("span", "slider-label", "root.t"));
        (["0", "1", "2"] as const).forEach((i) => {
          const box = el("input") as HTMLInputElement;
          box.type = "number";
          box.step = "0.05";
          box.value = "0";
          box.addEventListener("change", () => {
            state.rootTranslation[Number(i)] = Number(box.value);
            void requestRender(false);
          });
          trans.appendChild(box);
        });
        entry.appendChild(trans);
      }
      tree.appendChild(entry);
      for (const child of byParent.get(jointId) ?? []) {
        emit(child, depth + 1);
      }
    };
    emit(0, 0);
  };
  buildTree();

  // -- camera -------------------------------------------------------------------
  panel.appendChild(el("h3", undefined, "Camera"));
  const camRow = el("div", "camera-row");
  const camSelect = el("select") as HTMLSelectElement;
  for (const cam of state.meta.cameras) {
    const opt = el("option", undefined, `dataset camera ${cam.id}`) as HTMLOptionElement;
    opt.value = String(cam.id);
    camSelect.appendChild(opt);
  }
  const orbitOpt = el("option", undefined, "orbit") as HTMLOptionElement;
  orbitOpt.value = "orbit";
  camSelect.appendChild(orbitOpt);
  camSelect.addEventListener("change", () => {
    if (camSelect.value === "orbit") {
      state.camera = { kind: "orbit", orbit: { azimuthDeg: 0, elevationDeg: 18, radius: 2.6 } };
    } else {
      state.camera = { kind: "dataset", id: Number(camSelect.value) };
    }
    orbitControls.hidden = camSelect.value !== "orbit";
    void requestRender(false);
  });
  camRow.appendChild(camSelect);
  panel.appendChild(camRow);

  const orbitControls = el("div", "orbit-controls");
  orbitControls.hidden = true;
  for (const [label, key, min, max] of [
    ["azimuth", "azimuthDeg", -180, 180],
    ["elevation", "elevationDeg", -80, 80],
    ["radius", "radius", 1.5, 5],
  ] as const) {
    const row = el("div", "slider-row");
    row.appendChild(el("span", "slider-label", label));
    const slider = el("input") as HTMLInputElement;
    slider.type = "range";
    slider.min = String(min);
    slider.max = String(max);
    slider.step = label === "radius" ? "0.1" : "2";
    slider.addEventListener("input", () => {
      if (state.camera.kind === "orbit") {
        state.camera.orbit[key] = Number(slider.value);
        previewRender();
      }
    });
    slider.addEventListener("change", () => void requestRender(false));
    row.appendChild(slider);
    orbitControls.appendChild(row);
  }
  panel.appendChild(orbitControls);

  const overlayRow = el("div", "slider-row");
  const overlayBox = el("input") as HTMLInputElement;
  overlayBox.type = "checkbox";
  overlayBox.addEventListener("change", () => {
    viewer.toggleOverlay(overlayBox.checked);
    viewer.redraw(state, state.skeleton);
  });
  overlayRow.append(overlayBox, el("span", undefined, "skeleton overlay"));
  panel.appendChild(overlayRow);

  // -- keyframe timeline -----------------------------------------------------------
  panel.appendChild(el("h3", undefined, "Keyframes"));
  const frameList = el("div", "keyframes");
  panel.appendChild(frameList);
  const addBtn = el("button", undefined, "add keyframe");
  const playBtn = el("button", undefined, "play (8 steps)");
  playBtn.disabled = true;
  const refreshFrames = () => {
    frameList.innerHTML = "";
    state.keyframes.forEach((frame) => {
      frameList.appendChild(el("div", "keyframe", frame.name));
    });
    playBtn.disabled = state.keyframes.length < 2;
    if (state.keyframes.length >= 2) {
      playBtn.title = "";
    } else {
      playBtn.title = "needs at least 2 keyframes";
    }
  };
  addBtn.addEventListener("click", () => {
    addKeyframe(state, `pose ${state.keyframes.length + 1}`);
    refreshFrames();
  });
  playBtn.addEventListener("click", async () => {
    const [a, b] = [state.keyframes[0], state.keyframes[state.keyframes.length - 1]];
    try {
      const steps = await client.interpolate(a.pose, b.pose, 8);
      for (const pose of steps) {
        const blob = await client.render({
          pose,
          camera: activeCamera(state),
          width: state.resolution,
          height: state.resolution,
        });
        await viewer.showBlob(blob, state, state.skeleton);
        await new Promise((resolve) => setTimeout(resolve, 120));
      }
      clearError();
    } catch (err) {
      showError(err instanceof ApiError ? `playback failed (${err.status}): ${err.message}` : `${err}`);
    }
  });
  const resetBtn = el("button", undefined, "rest pose");
  resetBtn.addEventListener("click", () => {
    resetSliders(state);
    buildTree();
    void requestRender(false);
  });
  panel.append(addBtn, playBtn, resetBtn);

  await requestRender(false);
}

void boot();
