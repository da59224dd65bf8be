import { describe, expect, it } from "vitest";

import { addKeyframe, createState, currentPose } from "../src/state.js";
import type { MetaInfo, SkeletonInfo } from "../src/types.js";

function twoBoneSetup(): { skeleton: SkeletonInfo; meta: MetaInfo } {
  return {
    skeleton: {
      joints: [
        { id: 0, position: [0, 0, 0], parent: -1 },
        { id: 1, position: [0.5, 0, 0], parent: 0 },
        { id: 2, position: [1, 0, 0], parent: 1 },
      ],
      bones: [
        [0, 1],
        [1, 2],
      ],
    },
    meta: {
      cameras: [
        { id: 0, width: 64, height: 64, fx: 80, fy: 80, cx: 32, cy: 32, c2w: Array(16).fill(0) },
      ],
      timestamps: [0, 0.5],
      canonical_index: 0,
      bone_count: 2,
      simplified: false,
    },
  };
}

describe("editor state", () => {
  it("slider arity always matches the checkpoint bone count", () => {
    const { skeleton, meta } = twoBoneSetup();
    const state = createState(skeleton, meta);
    expect(state.jointSliders).toHaveLength(2);
    const pose = currentPose(state);
    expect(pose.angles).toHaveLength(meta.bone_count);
  });

  it("fewer sliders for a simplified checkpoint", () => {
    const { skeleton, meta } = twoBoneSetup();
    const simplified = { ...meta, bone_count: 1, simplified: true };
    const state = createState(skeleton, simplified);
    expect(state.jointSliders).toHaveLength(1);
  });

  it("keyframes are immutable snapshots", () => {
    const { skeleton, meta } = twoBoneSetup();
    const state = createState(skeleton, meta);
    state.jointSliders[0].z = 45;
    const frame = addKeyframe(state, "bent");
    const captured = frame.pose.angles[0];
    state.jointSliders[0].z = -90; // later edits must not touch the keyframe
    expect(frame.pose.angles[0]).toBe(captured);
    expect(currentPose(state).angles[0]).not.toBe(captured);
  });

  it("defaults to the first dataset camera", () => {
    const { skeleton, meta } = twoBoneSetup();
    const state = createState(skeleton, meta);
    expect(state.camera).toEqual({ kind: "dataset", id: 0 });
  });
});
