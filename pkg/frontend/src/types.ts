// Shared domain types and integer-rect math for the map client.

export type Layer = "category" | "height" | "walkable";

export const LAYERS: Layer[] = ["category", "height", "walkable"];

/** Map tiles are fetched on a fixed grid of this edge, matching the
 *  server's block/patch alignment. */
export const TILE_PX = 64;

/** Largest rect the server accepts for tile/resample requests. */
export const MAX_TILE_EDGE = 1024;
/** Largest extent the server accepts for a world build. */
export const MAX_WORLD_EDGE = 512;

export interface Rect {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface Pose {
  x: number;
  y: number;
  z: number;
  yaw_deg: number;
  pitch_deg: number;
  roll_deg: number;
}

export interface RenderRequestState {
  poseIndex: number;
  width: number;
  height: number;
  vfovDeg: number;
}

export interface WorldState {
  id: string;
  rect: Rect;
  completion: string;
}

/** Everything needed to rebuild the screen after a refresh, minus content
 *  (tiles and frames are refetched from the session). */
export interface ViewState {
  sessionId: string;
  center: { x: number; y: number };
  zoom: number;
  layer: Layer;
  selection: Rect | null;
  poses: Pose[];
  world: WorldState | null;
  lastRender: RenderRequestState | null;
}

export function rectKey(r: Rect): string {
  return `${r.x},${r.y},${r.w},${r.h}`;
}

export function rectsEqual(a: Rect, b: Rect): boolean {
  return a.x === b.x && a.y === b.y && a.w === b.w && a.h === b.h;
}

export function rectsIntersect(a: Rect, b: Rect): boolean {
  return a.x < b.x + b.w && b.x < a.x + a.w && a.y < b.y + b.h && b.y < a.y + a.h;
}

export function containsPoint(r: Rect, px: number, py: number): boolean {
  return px >= r.x && px < r.x + r.w && py >= r.y && py < r.y + r.h;
}

/** Tile-grid origins (TILE_PX aligned, TILE_PX sized) covering a rect. */
export function tilesFor(view: Rect): Rect[] {
  const out: Rect[] = [];
  if (view.w <= 0 || view.h <= 0) return out;
  const x0 = Math.floor(view.x / TILE_PX) * TILE_PX;
  const y0 = Math.floor(view.y / TILE_PX) * TILE_PX;
  const x1 = Math.ceil((view.x + view.w) / TILE_PX) * TILE_PX;
  const y1 = Math.ceil((view.y + view.h) / TILE_PX) * TILE_PX;
  for (let y = y0; y < y1; y += TILE_PX) {
    for (let x = x0; x < x1; x += TILE_PX) {
      out.push({ x, y, w: TILE_PX, h: TILE_PX });
    }
  }
  return out;
}

/** Snap a drag gesture (two float map-space corners) to an integer pixel
 *  rect. Returns null when the snapped rect is degenerate; callers must
 *  not submit a null selection. */
export function clampSelection(
  ax: number, ay: number, bx: number, by: number,
): Rect | null {
  const x = Math.floor(Math.min(ax, bx));
  const y = Math.floor(Math.min(ay, by));
  const w = Math.ceil(Math.max(ax, bx)) - x;
  const h = Math.ceil(Math.max(ay, by)) - y;
  if (w <= 0 || h <= 0) return null;
  return { x, y, w, h };
}

/** Expand a rect outward to TILE_PX-aligned boundaries. */
export function alignRect(r: Rect, edge: number = TILE_PX): Rect {
  const x = Math.floor(r.x / edge) * edge;
  const y = Math.floor(r.y / edge) * edge;
  return {
    x,
    y,
    w: Math.ceil((r.x + r.w) / edge) * edge - x,
    h: Math.ceil((r.y + r.h) / edge) * edge - y,
  };
}

export function clampAngleDeg(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}

/** Normalize yaw into [0, 360). */
export function wrapYawDeg(v: number): number {
  const m = v % 360;
  return m < 0 ? m + 360 : m;
}
