import { describe, expect, it } from "vitest";

import { arityMatches, buildPose, clonePose, eulerToAxisAngle, restPose } from "../src/pose.js";

describe("euler to axis-angle", () => {
  it("zero sliders give identity", () => {
    const { angle } = eulerToAxisAngle({ x: 0, y: 0, z: 0 });
    expect(angle).toBe(0);
  });

  it("single-axis rotation maps to that axis", () => {
    const { axis, angle } = eulerToAxisAngle({ x: 0, y: 0, z: 90 });
    expect(angle).toBeCloseTo(Math.PI / 2, 12);
    expect(axis[0]).toBeCloseTo(0, 12);
    expect(axis[1]).toBeCloseTo(0, 12);
    expect(axis[2]).toBeCloseTo(1, 12);
  });

  it("negative x rotation flips the axis", () => {
    const { axis, angle } = eulerToAxisAngle({ x: -45, y: 0, z: 0 });
    expect(angle).toBeCloseTo(Math.PI / 4, 12);
    expect(axis[0]).toBeCloseTo(-1, 12);
  });

  it("composite rotation has positive angle and unit axis", () => {
    const { axis, angle } = eulerToAxisAngle({ x: 30, y: -60, z: 110 });
    const norm = Math.hypot(...axis);
    expect(norm).toBeCloseTo(1, 12);
    expect(angle).toBeGreaterThan(0);
    expect(angle).toBeLessThanOrEqual(Math.PI + 1e-12);
  });
});

describe("pose construction", () => {
  it("rest pose has matching arity and zero angles", () => {
    const pose = restPose(3);
    expect(pose.angles).toEqual([0, 0, 0]);
    expect(pose.axes).toHaveLength(3);
    expect(arityMatches(pose, 3)).toBe(true);
    expect(arityMatches(pose, 4)).toBe(false);
  });

  it("serializes to the wire schema the server accepts", () => {
    const pose = buildPose(
      [
        { x: 0, y: 0, z: 30 },
        { x: 10, y: 0, z: 0 },
      ],
      { x: 0, y: 0, z: 0 },
      [0.1, 0, 0]
    );
    const wire = JSON.parse(JSON.stringify(pose));
    expect(Object.keys(wire).sort()).toEqual(["angles", "axes", "root"]);
    expect(Object.keys(wire.root).sort()).toEqual(["angle", "axis", "translation"]);
    expect(wire.axes).toHaveLength(2);
    expect(wire.angles).toHaveLength(2);
    expect(wire.root.translation).toEqual([0.1, 0, 0]);
  });

  it("clone is deep: mutating the copy leaves the original intact", () => {
    const pose = restPose(2);
    const copy = clonePose(pose);
    copy.angles[0] = 1.5;
    copy.axes[0][2] = -1;
    copy.root.translation[1] = 9;
    expect(pose.angles[0]).toBe(0);
    expect(pose.axes[0][2]).toBe(1);
    expect(pose.root.translation[1]).toBe(0);
  });
});
