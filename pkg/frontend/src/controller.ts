// View-model for the map client. Owns the ViewState, the tile cache, and
// every service interaction; the DOM layer only draws what this exposes.
//
// Invalidation discipline: after a resample the controller refetches
// exactly the rects the service listed as invalidated (active layer),
// and nothing else. Tiles keep their old bytes until the replacement
// arrives, and the replaced bytes are kept for a before/after toggle.

import { ApiClient, ApiError } from "./api.js";
import type { RenderResult, ResampleResponse, WorldStatus } from "./api.js";
import { TileCache } from "./tilecache.js";
import type { Layer, Pose, Rect, RenderRequestState, ViewState, WorldState } from "./types.js";
import {
  MAX_TILE_EDGE, MAX_WORLD_EDGE, alignRect, clampAngleDeg, clampSelection,
  rectKey, tilesFor, wrapYawDeg,
} from "./types.js";

/** Eye height the server's own pose sampler assigns on ground-level
 *  walkable pixels; markers are restricted to those pixels. */
export const EYE_Z = 2.7;

const WORLD_POLL_MS = 200;

/** Reads one grayscale pixel out of encoded tile bytes. The browser
 *  implementation decodes via canvas; tests inject a stub. */
export type PixelReader = (
  bytes: ArrayBuffer, dx: number, dy: number, w: number, h: number,
) => Promise<number>;

export interface ControllerOptions {
  pixelAt?: PixelReader;
  sleep?: (ms: number) => Promise<void>;
  onChange?: () => void;
}

export type ResampleOutcome =
  | { ok: true; response: ResampleResponse }
  | { ok: false; blocked: string };

export type PlaceOutcome =
  | { ok: true; pose: Pose }
  | { ok: false; warning: string };

interface ResampleSnapshot {
  layer: Layer;
  rects: Rect[];
  before: Map<string, ArrayBuffer>;
  after: Map<string, ArrayBuffer>;
}

function isAbort(err: unknown): boolean {
  return err instanceof Error && err.name === "AbortError";
}

export class MapController {
  readonly cache = new TileCache();

  center = { x: 128, y: 128 };
  zoom = 2;
  layer: Layer = "category";
  selection: Rect | null = null;
  poses: Pose[] = [];
  world: WorldState | null = null;
  lastRender: RenderRequestState | null = null;
  lastRenderResult: RenderResult | null = null;

  busy: string | null = null;
  warning: string | null = null;
  showBefore = false;

  private viewportPx = { w: 512, h: 512 };
  private generation = 0;
  private lastResample: ResampleSnapshot | null = null;
  private inflight = new Map<string, AbortController>();
  private readonly pixelAt: PixelReader;
  private readonly sleep: (ms: number) => Promise<void>;
  private readonly onChange: () => void;

  constructor(
    private readonly api: ApiClient,
    readonly sessionId: string,
    opts: ControllerOptions = {},
  ) {
    this.pixelAt = opts.pixelAt ?? (() => Promise.resolve(0));
    this.sleep = opts.sleep ?? ((ms) => new Promise((r) => setTimeout(r, ms)));
    this.onChange = opts.onChange ?? (() => {});
  }

  // --- viewport -----------------------------------------------------------

  setViewport(w: number, h: number): void {
    this.viewportPx = { w, h };
  }

  viewRect(): Rect {
    const w = Math.ceil(this.viewportPx.w / this.zoom);
    const h = Math.ceil(this.viewportPx.h / this.zoom);
    return {
      x: Math.floor(this.center.x - w / 2),
      y: Math.floor(this.center.y - h / 2),
      w,
      h,
    };
  }

  panBy(dxPx: number, dyPx: number): void {
    this.center.x += dxPx / this.zoom;
    this.center.y += dyPx / this.zoom;
  }

  setZoom(zoom: number): void {
    this.zoom = Math.min(8, Math.max(0.25, zoom));
  }

  async setLayer(layer: Layer): Promise<void> {
    this.layer = layer;
    await this.ensureVisibleTiles();
    this.onChange();
  }

  /** Fetch every visible tile not yet cached; in-flight requests that
   *  fell out of view (or belong to a switched-away layer) are aborted. */
  async ensureVisibleTiles(): Promise<void> {
    const needed = tilesFor(this.viewRect());
    const neededKeys = new Set(needed.map((r) => `${this.layer}|${rectKey(r)}`));
    for (const [key, ctl] of [...this.inflight]) {
      if (!neededKeys.has(key)) {
        ctl.abort();
        this.inflight.delete(key);
      }
    }
    const starts: Promise<void>[] = [];
    for (const rect of needed) {
      const key = `${this.layer}|${rectKey(rect)}`;
      if (this.cache.get(rect, this.layer) !== undefined) continue;
      if (this.inflight.has(key)) continue;
      const ctl = new AbortController();
      this.inflight.set(key, ctl);
      const layer = this.layer;
      starts.push(
        this.api.fetchTile(this.sessionId, rect, layer, ctl.signal).then(
          (bytes) => {
            this.inflight.delete(key);
            this.cache.put(rect, layer, bytes, this.generation);
            this.onChange();
          },
          (err) => {
            this.inflight.delete(key);
            if (!isAbort(err)) this.setWarning(String((err as Error).message ?? err));
          },
        ),
      );
    }
    await Promise.all(starts);
  }

  // --- selection + resample -------------------------------------------------

  /** Snap a drag gesture to an integer rect; degenerate drags clear the
   *  selection so they can never be submitted. */
  selectFromDrag(ax: number, ay: number, bx: number, by: number): Rect | null {
    this.selection = clampSelection(ax, ay, bx, by);
    this.onChange();
    return this.selection;
  }

  clearSelection(): void {
    this.selection = null;
    this.onChange();
  }

  /** Submit the pending selection for resampling. Degenerate or oversize
   *  selections are blocked here, before any network traffic. */
  async submitResample(seed: number): Promise<ResampleOutcome> {
    const sel = this.selection;
    if (!sel) return this.blocked("no selection: drag a non-empty rect first");
    if (sel.w > MAX_TILE_EDGE || sel.h > MAX_TILE_EDGE) {
      return this.blocked(`selection exceeds the ${MAX_TILE_EDGE}px server budget`);
    }
    if (this.busy) return this.blocked(`busy: ${this.busy}`);

    this.busy = "resample";
    this.onChange();
    let resp: ResampleResponse;
    try {
      resp = await this.api.resample(this.sessionId, sel, seed);
    } catch (err) {
      this.busy = null;
      this.setWarning(`resample failed: ${(err as Error).message}`);
      return { ok: false, blocked: (err as Error).message };
    }

    this.generation = resp.generation;
    const kept = this.cache.invalidate(resp.footprint, this.layer);
    const before = new Map<string, ArrayBuffer>();
    for (const rec of kept) before.set(rectKey(rec.rect), rec.bytes);

    // exactly one refetch per invalidated rect, active layer, nothing else
    const after = new Map<string, ArrayBuffer>();
    await Promise.all(resp.invalidated.map(async (rect) => {
      const bytes = await this.api.fetchTile(this.sessionId, rect, this.layer);
      this.cache.put(rect, this.layer, bytes, resp.generation);
      after.set(rectKey(rect), bytes);
      this.onChange();
    }));

    this.lastResample = { layer: this.layer, rects: resp.invalidated, before, after };
    this.showBefore = false;
    this.busy = null;
    this.onChange();
    return { ok: true, response: resp };
  }

  /** Flip the affected tiles between their pre- and post-resample pixels.
   *  Pure cache swap; never touches the network. */
  toggleBeforeAfter(): boolean {
    if (!this.lastResample) return false;
    this.showBefore = !this.showBefore;
    this.onChange();
    return this.showBefore;
  }

  /** Bytes the viewer should draw for a tile, honoring the toggle. */
  displayedTileBytes(rect: Rect, layer?: Layer): ArrayBuffer | undefined {
    const lay = layer ?? this.layer;
    const snap = this.lastResample;
    if (this.showBefore && snap && snap.layer === lay) {
      const b = snap.before.get(rectKey(rect));
      if (b !== undefined) return b;
    }
    return this.cache.get(rect, lay)?.bytes;
  }

  // --- cameras + world + render ----------------------------------------------

  /** Place a camera marker. Markers are only valid on walkable-mask
   *  pixels, checked against the walkable tile layer. */
  async placeCamera(px: number, py: number, yawDeg: number, pitchDeg: number): Promise<PlaceOutcome> {
    const ix = Math.floor(px);
    const iy = Math.floor(py);
    const tile = alignRect({ x: ix, y: iy, w: 1, h: 1 });
    let rec = this.cache.get(tile, "walkable");
    if (rec === undefined) {
      try {
        const bytes = await this.api.fetchTile(this.sessionId, tile, "walkable");
        this.cache.put(tile, "walkable", bytes, this.generation);
        rec = this.cache.get(tile, "walkable");
      } catch (err) {
        const warning = `walkable check failed: ${(err as Error).message}`;
        this.setWarning(warning);
        return { ok: false, warning };
      }
    }
    const value = await this.pixelAt(rec!.bytes, ix - tile.x, iy - tile.y, tile.w, tile.h);
    if (value < 128) {
      const warning = `(${ix}, ${iy}) is not walkable: marker rejected`;
      this.setWarning(warning);
      return { ok: false, warning };
    }
    const pose: Pose = {
      x: ix + 0.5,
      y: iy + 0.5,
      z: EYE_Z,
      yaw_deg: wrapYawDeg(yawDeg),
      pitch_deg: clampAngleDeg(pitchDeg, 0, 45),
      roll_deg: 0,
    };
    this.poses.push(pose);
    this.onChange();
    return { ok: true, pose };
  }

  removeCamera(index: number): void {
    this.poses.splice(index, 1);
    this.onChange();
  }

  /** Build a voxel world for the selection (or the visible area), then
   *  poll until the background build settles. */
  async buildWorld(completion: string = "watertight"): Promise<WorldStatus> {
    const rect = alignRect(this.selection ?? this.viewRect());
    if (rect.w > MAX_WORLD_EDGE || rect.h > MAX_WORLD_EDGE) {
      const msg = `world extent ${rect.w}x${rect.h} exceeds the ${MAX_WORLD_EDGE}px budget`;
      this.setWarning(msg);
      throw new ApiError(0, msg);
    }
    this.busy = "world";
    this.onChange();
    try {
      const wid = await this.api.buildWorld(this.sessionId, rect, completion);
      this.world = { id: wid, rect, completion };
      for (;;) {
        const st = await this.api.worldStatus(this.sessionId, wid);
        if (st.status === "done" || st.status === "error") {
          if (st.status === "error") this.setWarning(`world build failed at ${st.stage}`);
          return st;
        }
        await this.sleep(WORLD_POLL_MS);
      }
    } finally {
      this.busy = null;
      this.onChange();
    }
  }

  async requestRender(
    poseIndex: number, width: number, height: number, vfovDeg: number = 60,
  ): Promise<RenderResult> {
    const world = this.world;
    if (!world) throw new ApiError(0, "build a world first");
    const pose = this.poses[poseIndex];
    if (pose === undefined) throw new ApiError(0, `no pose #${poseIndex}`);
    this.busy = "render";
    this.onChange();
    try {
      const result = await this.api.render(
        this.sessionId, world.id, pose, width, height, vfovDeg);
      this.lastRender = { poseIndex, width, height, vfovDeg };
      this.lastRenderResult = result;
      return result;
    } finally {
      this.busy = null;
      this.onChange();
    }
  }

  // --- persistence ------------------------------------------------------------

  /** Everything needed to rebuild this screen in a fresh page load. */
  serialize(): ViewState {
    return {
      sessionId: this.sessionId,
      center: { ...this.center },
      zoom: this.zoom,
      layer: this.layer,
      selection: this.selection ? { ...this.selection } : null,
      poses: this.poses.map((p) => ({ ...p })),
      world: this.world ? { ...this.world, rect: { ...this.world.rect } } : null,
      lastRender: this.lastRender ? { ...this.lastRender } : null,
    };
  }

  /** Rehydrate from a serialized ViewState: content (tiles, frames) is
   *  refetched from the session, state is applied verbatim. */
  async applyState(state: ViewState): Promise<void> {
    this.center = { ...state.center };
    this.zoom = state.zoom;
    this.layer = state.layer;
    this.selection = state.selection ? { ...state.selection } : null;
    this.poses = state.poses.map((p) => ({ ...p }));
    this.world = state.world ? { ...state.world, rect: { ...state.world.rect } } : null;
    this.lastRender = state.lastRender ? { ...state.lastRender } : null;
    this.cache.clear();
    this.lastResample = null;
    this.showBefore = false;
    await this.ensureVisibleTiles();
    if (this.lastRender && this.world) {
      const { poseIndex, width, height, vfovDeg } = this.lastRender;
      try {
        await this.requestRender(poseIndex, width, height, vfovDeg);
      } catch (err) {
        this.setWarning(`render restore failed: ${(err as Error).message}`);
      }
    }
    this.onChange();
  }

  // --- helpers ----------------------------------------------------------------

  private blocked(reason: string): ResampleOutcome {
    this.setWarning(reason);
    return { ok: false, blocked: reason };
  }

  private setWarning(msg: string | null): void {
    this.warning = msg;
    this.onChange();
  }

  clearWarning(): void {
    this.setWarning(null);
  }
}
