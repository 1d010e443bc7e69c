// Thin typed client for the map service HTTP API. All traffic goes
// through the injected fetch so tests can record and script it.

import type { Layer, Pose, Rect } from "./types.js";

export interface ResampleResponse {
  invalidated: Rect[];
  footprint: Rect;
  cells: number;
  generation: number;
}

export interface WorldStatus {
  status: "pending" | "running" | "done" | "error";
  stage: string | null;
  completed_blocks: number;
  total_blocks: number;
  rect: Rect;
  completion: string;
  stats: Record<string, unknown> | null;
}

export interface RenderResult {
  shaded_png: string;
  semantic_png: string;
  depth_png: string;
  depth_scale: number;
  class_ids: number[];
}

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchFn = (url: string, init?: RequestInit) => Promise<Response>;

async function errorMessage(resp: Response): Promise<string> {
  try {
    const body = (await resp.json()) as Record<string, unknown>;
    for (const key of ["error", "detail", "message"]) {
      const v = body[key];
      if (typeof v === "string") return v;
      if (v !== undefined) return JSON.stringify(v);
    }
    return JSON.stringify(body);
  } catch {
    return resp.statusText || `http ${resp.status}`;
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchFn,
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request(url: string, init?: RequestInit): Promise<Response> {
    const resp = await this.fetchFn(this.baseUrl + url, init);
    if (!resp.ok) throw new ApiError(resp.status, await errorMessage(resp));
    return resp;
  }

  private async postJson<T>(url: string, body: unknown): Promise<T> {
    const resp = await this.request(url, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    return (await resp.json()) as T;
  }

  async createSession(seed: number): Promise<string> {
    const body = await this.postJson<{ session_id: string }>("/sessions", { seed });
    return body.session_id;
  }

  async deleteSession(sid: string): Promise<void> {
    await this.request(`/sessions/${sid}`, { method: "DELETE" });
  }

  tileUrl(sid: string, rect: Rect, layer: Layer): string {
    const q = `x=${rect.x}&y=${rect.y}&w=${rect.w}&h=${rect.h}&layer=${layer}`;
    return `/sessions/${sid}/tile?${q}`;
  }

  async fetchTile(
    sid: string, rect: Rect, layer: Layer, signal?: AbortSignal,
  ): Promise<ArrayBuffer> {
    const resp = await this.request(this.tileUrl(sid, rect, layer), { signal });
    return resp.arrayBuffer();
  }

  async resample(sid: string, rect: Rect, seed: number): Promise<ResampleResponse> {
    return this.postJson(`/sessions/${sid}/resample`, { ...rect, seed });
  }

  async buildWorld(sid: string, rect: Rect, completion: string): Promise<string> {
    const body = await this.postJson<{ world_id: string }>(
      `/sessions/${sid}/worlds`, { ...rect, completion });
    return body.world_id;
  }

  async worldStatus(sid: string, wid: string): Promise<WorldStatus> {
    const resp = await this.request(`/sessions/${sid}/worlds/${wid}`);
    return (await resp.json()) as WorldStatus;
  }

  async sampleCameras(sid: string, wid: string, n: number, seed: number): Promise<Pose[]> {
    const body = await this.postJson<{ poses: Pose[] }>(
      `/sessions/${sid}/worlds/${wid}/cameras`, { n, seed });
    return body.poses;
  }

  async render(
    sid: string, wid: string, pose: Pose,
    width: number, height: number, vfovDeg: number,
  ): Promise<RenderResult> {
    return this.postJson(`/sessions/${sid}/worlds/${wid}/render`,
      { pose, width, height, vfov_deg: vfovDeg });
  }
}
