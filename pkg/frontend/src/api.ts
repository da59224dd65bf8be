/** Typed client for the render service; one render in flight, stale drops. */

import type { CameraInfo, MetaInfo, Pose, SkeletonInfo } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export interface RenderRequest {
  pose: Pose;
  camera: { id: number } | CameraInfo;
  width?: number;
  height?: number;
}

async function expectOk(res: Response): Promise<Response> {
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = await res.json();
      detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
    } catch {
      /* body not JSON */
    }
    throw new ApiError(res.status, detail);
  }
  return res;
}

export class Client {
  constructor(private base: string = "", private fetchFn: typeof fetch = fetch) {}

  async skeleton(): Promise<SkeletonInfo> {
    const res = await expectOk(await this.fetchFn(`${this.base}/api/skeleton`));
    return res.json();
  }

  async meta(): Promise<MetaInfo> {
    const res = await expectOk(await this.fetchFn(`${this.base}/api/meta`));
    return res.json();
  }

  async poseAt(t: number): Promise<Pose> {
    const res = await expectOk(await this.fetchFn(`${this.base}/api/pose?t=${t}`));
    return res.json();
  }

  async render(req: RenderRequest): Promise<Blob> {
    const res = await expectOk(
      await this.fetchFn(`${this.base}/api/render`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(req),
      })
    );
    return res.blob();
  }

  async interpolate(poseA: Pose, poseB: Pose, steps: number): Promise<Pose[]> {
    const res = await expectOk(
      await this.fetchFn(`${this.base}/api/interpolate`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ pose_a: poseA, pose_b: poseB, steps }),
      })
    );
    return res.json();
  }
}

/** Serializes render requests: the latest request wins, stale results drop. */
export class RenderGate {
  private nextId = 0;
  private latestDelivered = -1;

  constructor(private client: Client) {}

  /** Returns the blob, or null when a newer request superseded this one. */
  async render(req: RenderRequest): Promise<Blob | null> {
    const id = this.nextId++;
    const blob = await this.client.render(req);
    if (id < this.latestDelivered) {
      return null; // a newer response already landed
    }
    this.latestDelivered = id;
    return blob;
  }
}

export function debounce<A extends unknown[]>(fn: (...args: A) => void, ms: number) {
  let handle: ReturnType<typeof setTimeout> | undefined;
  return (...args: A) => {
    if (handle !== undefined) clearTimeout(handle);
    handle = setTimeout(() => fn(...args), ms);
  };
}
