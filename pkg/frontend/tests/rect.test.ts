import { describe, expect, it } from "vitest";

import {
  alignRect, clampAngleDeg, clampSelection, containsPoint, rectsIntersect,
  TILE_PX, tilesFor, wrapYawDeg,
} from "../src/types.js";

describe("clampSelection", () => {
  it("snaps float corners outward to integer pixel boundaries", () => {
    expect(clampSelection(10.3, 5.9, 20.2, 9.1)).toEqual({ x: 10, y: 5, w: 11, h: 5 });
  });

  it("accepts corners in any order", () => {
    expect(clampSelection(20.2, 9.1, 10.3, 5.9)).toEqual({ x: 10, y: 5, w: 11, h: 5 });
  });

  it("keeps sub-pixel drags that still cross a boundary", () => {
    expect(clampSelection(2.3, 0, 2.4, 1)).toEqual({ x: 2, y: 0, w: 1, h: 1 });
  });

  it("rejects a zero-area drag", () => {
    expect(clampSelection(7, 7, 7, 7)).toBeNull();
  });

  it("rejects a zero-width line", () => {
    expect(clampSelection(4, 2, 4, 30)).toBeNull();
  });

  it("rejects a zero-height line", () => {
    expect(clampSelection(-3, 12, 40, 12)).toBeNull();
  });

  it("handles negative coordinates", () => {
    expect(clampSelection(-10.5, -0.1, -2, 3)).toEqual({ x: -11, y: -1, w: 9, h: 4 });
  });
});

describe("tilesFor", () => {
  it("covers the view with aligned tiles", () => {
    const tiles = tilesFor({ x: 10, y: 10, w: 100, h: 60 });
    expect(tiles).toHaveLength(4); // x spans 10..110, y spans 10..70: 2x2 tiles
    for (const t of tiles) {
      expect(t.x % TILE_PX).toBe(0);
      expect(t.y % TILE_PX).toBe(0);
      expect(t.w).toBe(TILE_PX);
      expect(t.h).toBe(TILE_PX);
    }
    expect(tiles[0]).toEqual({ x: 0, y: 0, w: 64, h: 64 });
  });

  it("aligns toward minus infinity for negative views", () => {
    const tiles = tilesFor({ x: -1, y: -1, w: 2, h: 2 });
    expect(tiles.map((t) => [t.x, t.y])).toEqual([
      [-64, -64], [0, -64], [-64, 0], [0, 0],
    ]);
  });

  it("is empty for a degenerate view", () => {
    expect(tilesFor({ x: 0, y: 0, w: 0, h: 10 })).toEqual([]);
  });
});

describe("rect relations", () => {
  it("edge-touching rects do not intersect", () => {
    expect(rectsIntersect({ x: 0, y: 0, w: 64, h: 64 }, { x: 64, y: 0, w: 64, h: 64 })).toBe(false);
  });

  it("overlap by one pixel intersects", () => {
    expect(rectsIntersect({ x: 0, y: 0, w: 64, h: 64 }, { x: 63, y: 63, w: 64, h: 64 })).toBe(true);
  });

  it("containsPoint uses half-open bounds", () => {
    const r = { x: 5, y: 5, w: 10, h: 10 };
    expect(containsPoint(r, 5, 5)).toBe(true);
    expect(containsPoint(r, 15, 5)).toBe(false);
  });
});

describe("alignRect", () => {
  it("expands outward to tile boundaries", () => {
    expect(alignRect({ x: 10, y: 70, w: 50, h: 10 })).toEqual({ x: 0, y: 64, w: 64, h: 64 });
  });

  it("keeps aligned rects unchanged", () => {
    expect(alignRect({ x: -64, y: 0, w: 128, h: 64 })).toEqual({ x: -64, y: 0, w: 128, h: 64 });
  });
});

describe("angles", () => {
  it("wraps yaw into [0, 360)", () => {
    expect(wrapYawDeg(-90)).toBe(270);
    expect(wrapYawDeg(720)).toBe(0);
    expect(wrapYawDeg(359.5)).toBe(359.5);
  });

  it("clamps pitch to its band", () => {
    expect(clampAngleDeg(60, 0, 45)).toBe(45);
    expect(clampAngleDeg(-5, 0, 45)).toBe(0);
    expect(clampAngleDeg(20, 0, 45)).toBe(20);
  });
});
