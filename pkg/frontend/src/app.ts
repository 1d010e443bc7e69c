// Bootstrap: session setup, URL-hash persistence of the ViewState, and
// viewer wiring. The full screen is reconstructible from the hash alone
// (plus session content held by the service).

import { ApiClient } from "./api.js";
import { MapController } from "./controller.js";
import { canvasPixelReader, MapViewer } from "./viewer.js";
import type { ViewState } from "./types.js";

function apiBase(): string {
  const q = new URLSearchParams(location.search);
  return q.get("api") ?? "http://127.0.0.1:8000";
}

function readHashState(): ViewState | null {
  if (location.hash.length < 2) return null;
  try {
    return JSON.parse(decodeURIComponent(location.hash.slice(1))) as ViewState;
  } catch {
    return null;
  }
}

let hashTimer: number | undefined;

function writeHashState(ctl: MapController): void {
  clearTimeout(hashTimer);
  hashTimer = setTimeout(() => {
    history.replaceState(null, "", `#${encodeURIComponent(JSON.stringify(ctl.serialize()))}`);
  }, 250) as unknown as number;
}

async function main(): Promise<void> {
  const api = new ApiClient(apiBase(), (url, init) => fetch(url, init));
  const saved = readHashState();
  const sessionId = saved?.sessionId
    ?? await api.createSession(Number(new URLSearchParams(location.search).get("seed") ?? 7));

  let viewer: MapViewer | null = null;
  const ctl = new MapController(api, sessionId, {
    pixelAt: canvasPixelReader,
    onChange: () => {
      viewer?.draw();
      writeHashState(ctl);
    },
  });
  viewer = new MapViewer(document.getElementById("app")!, ctl);
  if (saved) await ctl.applyState(saved);
}

void main();
