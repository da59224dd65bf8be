import { describe, expect, it, vi } from "vitest";

import { ApiError, Client, RenderGate } from "../src/api.js";
import { restPose } from "../src/pose.js";

function pngResponse(tag: number): Response {
  return new Response(new Blob([new Uint8Array([tag])]), {
    status: 200,
    headers: { "content-type": "image/png" },
  });
}

describe("client", () => {
  it("raises ApiError with the server status on failure", async () => {
    const fetchFn = vi.fn(async () =>
      new Response(JSON.stringify({ detail: "pose has 3 bones, checkpoint has 2" }), { status: 422 })
    );
    const client = new Client("", fetchFn as unknown as typeof fetch);
    await expect(client.render({ pose: restPose(3), camera: { id: 0 } })).rejects.toMatchObject({
      status: 422,
    });
    try {
      await client.render({ pose: restPose(3), camera: { id: 0 } });
    } catch (err) {
      expect(err).toBeInstanceOf(ApiError);
      expect((err as ApiError).message).toContain("bones");
    }
  });

  it("posts the interpolate body with both poses and steps", async () => {
    const fetchFn = vi.fn(async (_url: RequestInfo | URL, init?: RequestInit) => {
      const body = JSON.parse(String(init?.body));
      expect(body.steps).toBe(8);
      expect(body.pose_a.angles).toHaveLength(2);
      return new Response(JSON.stringify(Array(8).fill(body.pose_a)), { status: 200 });
    });
    const client = new Client("", fetchFn as unknown as typeof fetch);
    const frames = await client.interpolate(restPose(2), restPose(2), 8);
    expect(frames).toHaveLength(8);
  });
});

describe("render gate", () => {
  it("drops stale responses: the latest request wins", async () => {
    const resolvers: Array<(r: Response) => void> = [];
    const fetchFn = vi.fn(
      () => new Promise<Response>((resolve) => resolvers.push(resolve))
    );
    const gate = new RenderGate(new Client("", fetchFn as unknown as typeof fetch));

    const first = gate.render({ pose: restPose(1), camera: { id: 0 } });
    const second = gate.render({ pose: restPose(1), camera: { id: 0 } });

    // the newer request completes first; the older one must be dropped
    resolvers[1](pngResponse(2));
    const blob2 = await second;
    expect(blob2).not.toBeNull();

    resolvers[0](pngResponse(1));
    const blob1 = await first;
    expect(blob1).toBeNull();
  });

  it("delivers in-order responses normally", async () => {
    const fetchFn = vi.fn(async () => pngResponse(7));
    const gate = new RenderGate(new Client("", fetchFn as unknown as typeof fetch));
    const blob = await gate.render({ pose: restPose(1), camera: { id: 0 } });
    expect(blob).not.toBeNull();
    expect((await blob!.arrayBuffer()).byteLength).toBe(1);
  });
});
