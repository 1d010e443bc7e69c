// DOM + canvas layer. Pure presentation: all behavior lives in
// MapController; this file only wires events and draws state.

import type { MapController } from "./controller.js";
import type { Layer, Rect } from "./types.js";
import { LAYERS, TILE_PX, tilesFor } from "./types.js";

// --- style constants ---
const FONT = "13px system-ui, sans-serif";
const BG = "#10131a";
const PANEL = "#1a1f2b";
const TEXT = "#c8cede";
const ACCENT = "#5b8dd9";
const WARN = "#e0a04a";
const BTN = `font: ${FONT}; padding: 5px 12px; border-radius: 4px; cursor: pointer; ` +
  `background: #262d3d; color: ${TEXT}; border: 1px solid #3a4358;`;
const BTN_ON = BTN + `background: ${ACCENT}; color: #fff;`;
const INPUT = `font: ${FONT}; width: 70px; background: #202634; color: ${TEXT}; ` +
  `border: 1px solid #3a4358; border-radius: 3px; padding: 3px 6px;`;

type Mode = "pan" | "select" | "camera";

const bitmapCache = new WeakMap<ArrayBuffer, Promise<ImageBitmap>>();

function bitmapFor(bytes: ArrayBuffer): Promise<ImageBitmap> {
  let p = bitmapCache.get(bytes);
  if (!p) {
    p = createImageBitmap(new Blob([bytes], { type: "image/png" }));
    bitmapCache.set(bytes, p);
  }
  return p;
}

/** Grayscale pixel readback used for walkable checks. */
export async function canvasPixelReader(
  bytes: ArrayBuffer, dx: number, dy: number, w: number, h: number,
): Promise<number> {
  const bmp = await bitmapFor(bytes);
  const cnv = new OffscreenCanvas(w, h);
  const ctx = cnv.getContext("2d")!;
  ctx.drawImage(bmp, 0, 0);
  return ctx.getImageData(dx, dy, 1, 1).data[0]!;
}

export class MapViewer {
  private canvas: HTMLCanvasElement;
  private ctx: CanvasRenderingContext2D;
  private mode: Mode = "pan";
  private drag: { ax: number; ay: number } | null = null;
  private layerBtns = new Map<Layer, HTMLButtonElement>();
  private modeBtns = new Map<Mode, HTMLButtonElement>();
  private seedInput!: HTMLInputElement;
  private yawInput!: HTMLInputElement;
  private pitchInput!: HTMLInputElement;
  private statusEl!: HTMLDivElement;
  private warnEl!: HTMLDivElement;
  private framesEl!: HTMLDivElement;
  private toggleBtn!: HTMLButtonElement;

  constructor(
    private readonly root: HTMLElement,
    private readonly ctl: MapController,
  ) {
    root.style.cssText = `background: ${BG}; color: ${TEXT}; font: ${FONT}; ` +
      `display: flex; flex-direction: column; gap: 8px; padding: 10px; height: 100%;`;
    root.appendChild(this.buildToolbar());
    this.canvas = document.createElement("canvas");
    this.canvas.width = 768;
    this.canvas.height = 512;
    this.canvas.style.cssText = "border: 1px solid #3a4358; cursor: grab; touch-action: none;";
    root.appendChild(this.canvas);
    this.ctx = this.canvas.getContext("2d")!;
    this.warnEl = document.createElement("div");
    this.warnEl.style.cssText = `color: ${WARN}; min-height: 1.2em;`;
    root.appendChild(this.warnEl);
    this.framesEl = document.createElement("div");
    this.framesEl.style.cssText = "display: flex; gap: 8px; flex-wrap: wrap;";
    root.appendChild(this.framesEl);

    this.ctl.setViewport(this.canvas.width, this.canvas.height);
    this.bindPointer();
    void this.ctl.ensureVisibleTiles().then(() => this.draw());
  }

  private buildToolbar(): HTMLElement {
    const bar = document.createElement("div");
    bar.style.cssText = `background: ${PANEL}; padding: 8px; border-radius: 6px; ` +
      "display: flex; gap: 6px; align-items: center; flex-wrap: wrap;";

    for (const layer of LAYERS) {
      const b = document.createElement("button");
      b.textContent = layer;
      b.style.cssText = layer === this.ctl.layer ? BTN_ON : BTN;
      b.onclick = () => void this.ctl.setLayer(layer).then(() => this.syncButtons());
      this.layerBtns.set(layer, b);
      bar.appendChild(b);
    }
    bar.appendChild(this.spacer());

    for (const mode of ["pan", "select", "camera"] as Mode[]) {
      const b = document.createElement("button");
      b.textContent = mode;
      b.style.cssText = mode === this.mode ? BTN_ON : BTN;
      b.onclick = () => { this.mode = mode; this.syncButtons(); };
      this.modeBtns.set(mode, b);
      bar.appendChild(b);
    }
    bar.appendChild(this.spacer());

    this.seedInput = this.numInput("3", "resample seed");
    bar.appendChild(this.seedInput);
    bar.appendChild(this.button("resample", () =>
      void this.ctl.submitResample(Number(this.seedInput.value) | 0)));
    this.toggleBtn = this.button("before/after", () => this.ctl.toggleBeforeAfter());
    bar.appendChild(this.toggleBtn);
    bar.appendChild(this.spacer());

    this.yawInput = this.numInput("0", "yaw 0-360");
    this.pitchInput = this.numInput("20", "pitch 0-45");
    bar.appendChild(this.yawInput);
    bar.appendChild(this.pitchInput);
    bar.appendChild(this.button("build world", () => void this.ctl.buildWorld()));
    bar.appendChild(this.button("render last pose", () =>
      void this.ctl.requestRender(this.ctl.poses.length - 1, 256, 192)
        .then((r) => this.showFrames(r.shaded_png, r.semantic_png, r.depth_png))));

    this.statusEl = document.createElement("div");
    this.statusEl.style.cssText = "margin-left: auto;";
    bar.appendChild(this.statusEl);
    return bar;
  }

  private button(label: string, onclick: () => void): HTMLButtonElement {
    const b = document.createElement("button");
    b.textContent = label;
    b.style.cssText = BTN;
    b.onclick = onclick;
    return b;
  }

  private numInput(value: string, title: string): HTMLInputElement {
    const i = document.createElement("input");
    i.value = value;
    i.title = title;
    i.style.cssText = INPUT;
    return i;
  }

  private spacer(): HTMLElement {
    const s = document.createElement("span");
    s.style.cssText = "width: 12px;";
    return s;
  }

  private bindPointer(): void {
    const mapPoint = (ev: PointerEvent) => {
      const view = this.ctl.viewRect();
      const box = this.canvas.getBoundingClientRect();
      return {
        x: view.x + (ev.clientX - box.left) / this.ctl.zoom,
        y: view.y + (ev.clientY - box.top) / this.ctl.zoom,
      };
    };
    this.canvas.onpointerdown = (ev) => {
      const p = mapPoint(ev);
      if (this.mode === "camera") {
        void this.ctl.placeCamera(p.x, p.y,
          Number(this.yawInput.value), Number(this.pitchInput.value));
        return;
      }
      this.drag = { ax: p.x, ay: p.y };
      this.canvas.setPointerCapture(ev.pointerId);
    };
    this.canvas.onpointermove = (ev) => {
      if (!this.drag) return;
      const p = mapPoint(ev);
      if (this.mode === "select") {
        this.ctl.selectFromDrag(this.drag.ax, this.drag.ay, p.x, p.y);
      } else {
        this.ctl.panBy((this.drag.ax - p.x) * this.ctl.zoom, (this.drag.ay - p.y) * this.ctl.zoom);
        void this.ctl.ensureVisibleTiles();
      }
      this.draw();
    };
    this.canvas.onpointerup = () => { this.drag = null; };
    this.canvas.onwheel = (ev) => {
      ev.preventDefault();
      this.ctl.setZoom(this.ctl.zoom * (ev.deltaY < 0 ? 1.25 : 0.8));
      void this.ctl.ensureVisibleTiles();
      this.draw();
    };
  }

  private showFrames(...pngs: string[]): void {
    this.framesEl.replaceChildren();
    for (const b64 of pngs) {
      const img = document.createElement("img");
      img.src = `data:image/png;base64,${b64}`;
      img.style.cssText = "border: 1px solid #3a4358; image-rendering: pixelated; height: 192px;";
      this.framesEl.appendChild(img);
    }
  }

  private syncButtons(): void {
    for (const [layer, b] of this.layerBtns) {
      b.style.cssText = layer === this.ctl.layer ? BTN_ON : BTN;
    }
    for (const [mode, b] of this.modeBtns) {
      b.style.cssText = mode === this.mode ? BTN_ON : BTN;
    }
    this.canvas.style.cursor =
      this.mode === "pan" ? "grab" : this.mode === "select" ? "crosshair" : "pointer";
  }

  /** Redraw the whole frame from controller state. */
  draw(): void {
    const view = this.ctl.viewRect();
    const z = this.ctl.zoom;
    this.ctx.fillStyle = BG;
    this.ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    this.ctx.imageSmoothingEnabled = z < 1;

    for (const rect of tilesFor(view)) {
      const bytes = this.ctl.displayedTileBytes(rect);
      if (bytes === undefined) continue;
      const sx = (rect.x - view.x) * z;
      const sy = (rect.y - view.y) * z;
      void bitmapFor(bytes).then((bmp) => {
        this.ctx.drawImage(bmp, sx, sy, TILE_PX * z, TILE_PX * z);
      });
    }

    const sel = this.ctl.selection;
    if (sel) this.strokeRect(sel, view, z, ACCENT);
    if (this.ctl.world) this.strokeRect(this.ctl.world.rect, view, z, "#7a67c9");

    for (const pose of this.ctl.poses) {
      const cx = (pose.x - view.x) * z;
      const cy = (pose.y - view.y) * z;
      this.ctx.strokeStyle = "#e5e09a";
      this.ctx.beginPath();
      this.ctx.arc(cx, cy, 5, 0, Math.PI * 2);
      const yaw = (pose.yaw_deg * Math.PI) / 180;
      this.ctx.moveTo(cx, cy);
      this.ctx.lineTo(cx + 10 * Math.cos(yaw), cy + 10 * Math.sin(yaw));
      this.ctx.stroke();
    }

    this.statusEl.textContent = this.ctl.busy
      ? `working: ${this.ctl.busy}...`
      : `gen view ${view.x},${view.y} ${view.w}x${view.h} @${z.toFixed(2)}x`;
    this.warnEl.textContent = this.ctl.warning ?? "";
    this.toggleBtn.style.cssText = this.ctl.showBefore ? BTN_ON : BTN;
  }

  private strokeRect(r: Rect, view: Rect, z: number, color: string): void {
    this.ctx.strokeStyle = color;
    this.ctx.lineWidth = 1.5;
    this.ctx.strokeRect((r.x - view.x) * z, (r.y - view.y) * z, r.w * z, r.h * z);
  }
}
