// Client-side tile store keyed by (rect, layer) with a generation stamp
// per entry. A resample bumps the generation for entries under its
// footprint; the active layer keeps serving stale bytes until the
// replacement arrives (no blank flicker), other layers are dropped and
// refetched lazily when switched to.

import type { Layer, Rect } from "./types.js";
import { LAYERS, rectKey, rectsIntersect } from "./types.js";

export interface TileRecord {
  rect: Rect;
  layer: Layer;
  bytes: ArrayBuffer;
  generation: number;
}

function entryKey(rect: Rect, layer: Layer): string {
  return `${layer}|${rectKey(rect)}`;
}

export class TileCache {
  private entries = new Map<string, TileRecord>();

  get(rect: Rect, layer: Layer): TileRecord | undefined {
    return this.entries.get(entryKey(rect, layer));
  }

  put(rect: Rect, layer: Layer, bytes: ArrayBuffer, generation: number): void {
    this.entries.set(entryKey(rect, layer), { rect, layer, bytes, generation });
  }

  delete(rect: Rect, layer: Layer): void {
    this.entries.delete(entryKey(rect, layer));
  }

  /** Drop every cached tile (any layer) intersecting the footprint,
   *  except the layer listed in `keep`; returns the kept records so the
   *  caller can snapshot them for before/after comparison. */
  invalidate(footprint: Rect, keep: Layer): TileRecord[] {
    const kept: TileRecord[] = [];
    for (const [key, rec] of [...this.entries]) {
      if (!rectsIntersect(rec.rect, footprint)) continue;
      if (rec.layer === keep) kept.push(rec);
      else this.entries.delete(key);
    }
    return kept;
  }

  layers(): Layer[] {
    return LAYERS;
  }

  size(): number {
    return this.entries.size;
  }

  clear(): void {
    this.entries.clear();
  }
}
