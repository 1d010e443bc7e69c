"""HTTP service exposing map tiles, resampling, world builds, and rendering.

Sessions own a latent field each.  Within a session, mutations (resample,
world submission) serialize on the session lock; tile reads run concurrently
against an immutable field snapshot, so a tile is always rendered from one
consistent field generation (never torn across a resample).
"""

from __future__ import annotations

import base64
import io
import threading
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field as dfield

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import JSONResponse, Response
from PIL import Image
from pydantic import BaseModel

from . import camsample, latentgrid, metrics, render, satmap, voxelworld
from .latentgrid import Rect

TILE_LAYERS = ("category", "height", "walkable")


@dataclass
class ServiceConfig:
    max_sessions: int = 32
    tile_budget_px: int = 1024 * 1024
    world_budget_px: int = 512 * 512
    frame_budget_px: int = 1024 * 1024


@dataclass
class WorldJob:
    rect: Rect
    completion: str
    min_component_px: int
    status: str = "pending"   # pending -> running -> done | error
    stage: str = "queued"
    completed_blocks: int = 0
    total_blocks: int = 0
    error: str = ""
    world: voxelworld.VoxelWorld | None = None
    mask: camsample.WalkableMask | None = None
    stats: metrics.OccupancyStats | None = None


@dataclass
class Session:
    sid: str
    field: latentgrid.LatentField
    generation: int = 0
    lock: threading.RLock = dfield(default_factory=threading.RLock)
    tile_cache: dict = dfield(default_factory=dict)   # (rect, layer) -> (gen, bytes)
    worlds: dict = dfield(default_factory=dict)       # wid -> WorldJob
    build_thread: threading.Thread | None = None


class SessionStore:
    def __init__(self, max_sessions: int):
        self.max_sessions = max_sessions
        self._sessions: OrderedDict[str, Session] = OrderedDict()
        self._lock = threading.Lock()

    def create(self, field: latentgrid.LatentField) -> Session:
        s = Session(uuid.uuid4().hex[:12], field)
        with self._lock:
            self._sessions[s.sid] = s
            while len(self._sessions) > self.max_sessions:
                self._sessions.popitem(last=False)
        return s

    def get(self, sid: str) -> Session:
        with self._lock:
            s = self._sessions.get(sid)
            if s is None:
                raise HTTPException(404, f"unknown session {sid}")
            self._sessions.move_to_end(sid)
            return s

    def drop(self, sid: str) -> bool:
        with self._lock:
            return self._sessions.pop(sid, None) is not None


class SessionCreate(BaseModel):
    seed: int
    cell_stride: int = latentgrid.DEFAULT_CELL_STRIDE
    global_dim: int = latentgrid.DEFAULT_GLOBAL_DIM
    local_dim: int = latentgrid.DEFAULT_LOCAL_DIM


class RectBody(BaseModel):
    x: int
    y: int
    w: int
    h: int


class ResampleBody(RectBody):
    seed: int


class WorldBody(RectBody):
    completion: str = "watertight"
    min_component_px: int = camsample.MIN_COMPONENT_PX


class CamerasBody(BaseModel):
    n: int = 1
    seed: int = 0


class PoseBody(BaseModel):
    x: float
    y: float
    z: float
    yaw_deg: float
    pitch_deg: float
    roll_deg: float


class RenderBody(BaseModel):
    pose: PoseBody
    width: int = 256
    height: int = 256
    vfov_deg: float = 60.0


def _png_bytes(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _rect_dict(r: Rect) -> dict:
    return {"x": r.x, "y": r.y, "w": r.w, "h": r.h}


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    cfg = config or ServiceConfig()
    app = FastAPI(title="infinicity service")
    store = SessionStore(cfg.max_sessions)
    palette = satmap.default_palette()
    app.state.store = store
    app.state.config = cfg

    def parse_rect(x: int, y: int, w: int, h: int, budget: int) -> Rect:
        if w <= 0 or h <= 0:
            raise HTTPException(400, "rect must be nonempty")
        if w * h > budget:
            raise HTTPException(413, f"rect exceeds budget of {budget} px")
        return Rect(x, y, w, h)

    @app.get("/healthz")
    def healthz():
        return {"ok": True}

    @app.post("/sessions", status_code=201)
    def create_session(body: SessionCreate):
        try:
            lf = latentgrid.LatentField(body.seed, body.global_dim,
                                        body.local_dim, body.cell_stride)
        except ValueError as e:
            raise HTTPException(400, str(e))
        s = store.create(lf)
        return {"session_id": s.sid, "seed": lf.seed}

    @app.delete("/sessions/{sid}")
    def delete_session(sid: str):
        if not store.drop(sid):
            raise HTTPException(404, f"unknown session {sid}")
        return {"deleted": sid}

    @app.get("/sessions/{sid}/tile")
    def get_tile(sid: str, x: int = Query(...), y: int = Query(...),
                 w: int = Query(...), h: int = Query(...),
                 layer: str = Query("category")):
        if layer not in TILE_LAYERS:
            raise HTTPException(400, f"unknown layer {layer!r}")
        s = store.get(sid)
        rect = parse_rect(x, y, w, h, cfg.tile_budget_px)
        key = (rect.as_tuple(), layer)
        with s.lock:
            gen = s.generation
            lf = s.field
            cached = s.tile_cache.get(key)
            if cached is not None and cached[0] == gen:
                return Response(cached[1], media_type="image/png")
        # synthesized outside the lock from one immutable field snapshot
        tile = latentgrid.synthesize_region(lf, rect)
        png = _tile_png(tile, layer, palette)
        with s.lock:
            if s.generation == gen:
                s.tile_cache[key] = (gen, png)
        return Response(png, media_type="image/png")

    def _tile_png(tile: satmap.CdnTile, layer: str, palette: satmap.Palette) -> bytes:
        if layer == "category":
            lut = render.encode_palette_colors(palette)
            rgb = np.clip(np.floor(lut[tile.category] * 255.0 + 0.5), 0, 255).astype(np.uint8)
            return _png_bytes(Image.fromarray(rgb, "RGB"))
        if layer == "height":
            g = np.clip(tile.height_m.astype(np.int64) * 4, 0, 255).astype(np.uint8)
            return _png_bytes(Image.fromarray(g, "L"))
        mask = camsample.label_walkable(tile, palette)
        return _png_bytes(Image.fromarray(mask.mask.astype(np.uint8) * 255, "L"))

    @app.post("/sessions/{sid}/resample")
    def resample(sid: str, body: ResampleBody):
        s = store.get(sid)
        rect = parse_rect(body.x, body.y, body.w, body.h, cfg.tile_budget_px)
        with s.lock:
            new_field, cells = latentgrid.resample_region(s.field, rect, body.seed)
            footprint = latentgrid.influence_rect(cells, latentgrid.DEFAULT_RADIUS_PX,
                                                  s.field.cell_stride)
            s.field = new_field
            s.generation += 1
            invalidated = []
            for (key, layer) in list(s.tile_cache.keys()):
                kr = Rect(*key)
                if kr.intersects(footprint):
                    s.tile_cache.pop((key, layer), None)
                    if key not in [r.as_tuple() for r in invalidated]:
                        invalidated.append(kr)
        return {
            "invalidated": [_rect_dict(r) for r in invalidated],
            "footprint": _rect_dict(footprint),
            "cells": len(cells),
            "generation": s.generation,
        }

    @app.post("/sessions/{sid}/worlds", status_code=202)
    def submit_world(sid: str, body: WorldBody):
        if body.completion not in voxelworld.COMPLETION_CODES:
            raise HTTPException(400, f"unknown completion {body.completion!r}")
        s = store.get(sid)
        rect = parse_rect(body.x, body.y, body.w, body.h, cfg.world_budget_px)
        if rect.w % voxelworld.BLOCK_EDGE or rect.h % voxelworld.BLOCK_EDGE \
                or rect.x % voxelworld.BLOCK_EDGE or rect.y % voxelworld.BLOCK_EDGE:
            raise HTTPException(400, "world rect must be aligned to 64 px")
        with s.lock:
            if s.build_thread is not None and s.build_thread.is_alive():
                raise HTTPException(409, "a world build is already running")
            wid = uuid.uuid4().hex[:12]
            job = WorldJob(rect, body.completion, body.min_component_px)
            job.total_blocks = (rect.w // 64) * (rect.h // 64)
            s.worlds[wid] = job
            lf = s.field  # snapshot: later resamples don't affect this build
            t = threading.Thread(target=_build_world, args=(lf, job), daemon=True)
            s.build_thread = t
            t.start()
        return {"world_id": wid}

    def _build_world(lf: latentgrid.LatentField, job: WorldJob):
        try:
            job.status = "running"
            job.stage = "synth"
            tile = latentgrid.synthesize_region(lf, job.rect)
            job.stage = "clean"
            tile = satmap.clean_tile(tile)
            job.stage = "complete"
            complete = (voxelworld.complete_pillar if job.completion == "pillar"
                        else voxelworld.complete_watertight)
            blocks = []
            for sub in latentgrid.patch_cover(job.rect, voxelworld.BLOCK_EDGE):
                part = tile.crop(sub.x, sub.y, sub.w, sub.h)
                blk = voxelworld.lift_tile(part, sub.x // 64, sub.y // 64)
                blocks.append(complete(blk))
                job.completed_blocks += 1
            job.stage = "assemble"
            job.world = voxelworld.assemble_world(blocks)
            job.mask = camsample.refine_mask(camsample.label_walkable(tile),
                                             job.min_component_px)
            job.stats = metrics.world_stats(job.world)
            job.stage = "done"
            job.status = "done"
        except Exception as e:  # surfaced through the progress endpoint
            job.status = "error"
            job.error = f"{type(e).__name__}: {e}"

    def get_job(s: Session, wid: str) -> WorldJob:
        job = s.worlds.get(wid)
        if job is None:
            raise HTTPException(404, f"unknown world {wid}")
        return job

    @app.get("/sessions/{sid}/worlds/{wid}")
    def world_status(sid: str, wid: str):
        job = get_job(store.get(sid), wid)
        out = {"status": job.status, "stage": job.stage,
               "completed_blocks": job.completed_blocks,
               "total_blocks": job.total_blocks,
               "rect": _rect_dict(job.rect), "completion": job.completion}
        if job.error:
            out["error"] = job.error
        if job.stats is not None:
            out["stats"] = job.stats.to_dict()
        return out

    def ready_job(s: Session, wid: str) -> WorldJob:
        job = get_job(s, wid)
        if job.status == "error":
            raise HTTPException(409, f"world build failed: {job.error}")
        if job.status != "done":
            raise HTTPException(409, f"world not ready (status {job.status})")
        return job

    @app.post("/sessions/{sid}/worlds/{wid}/cameras")
    def cameras(sid: str, wid: str, body: CamerasBody):
        s = store.get(sid)
        job = ready_job(s, wid)
        if body.n < 1 or body.n > 1000:
            raise HTTPException(400, "n must be in [1, 1000]")
        try:
            poses = camsample.sample_cameras(job.mask, job.world, body.n, body.seed)
        except camsample.NoValidPoseError as e:
            return JSONResponse(status_code=422,
                                content={"error": "no_valid_pose", "detail": str(e)})
        return {"poses": [p.to_dict() for p in poses]}

    @app.post("/sessions/{sid}/worlds/{wid}/render")
    def render_frame(sid: str, wid: str, body: RenderBody):
        s = store.get(sid)
        job = ready_job(s, wid)
        if body.width < 1 or body.height < 1 \
                or body.width * body.height > cfg.frame_budget_px:
            raise HTTPException(400, "bad frame size")
        if not (0.0 < body.vfov_deg < 180.0):
            raise HTTPException(400, "vfov_deg must be in (0, 180)")
        pose = camsample.CameraPose(
            np.array([body.pose.x, body.pose.y, body.pose.z]),
            body.pose.yaw_deg, body.pose.pitch_deg, body.pose.roll_deg)
        out = render.render_view(job.world, pose, body.width, body.height,
                                 body.vfov_deg, palette)

        shaded8 = np.clip(np.floor(out.shaded.astype(np.float64) * 255.0 + 0.5),
                          0, 255).astype(np.uint8)
        lut = render.encode_palette_colors(palette)
        sem8 = np.clip(np.floor(lut[out.semantic] * 255.0 + 0.5), 0, 255).astype(np.uint8)

        finite = np.isfinite(out.depth)
        dmax = float(out.depth[finite].max()) if finite.any() else 1.0
        scale = dmax / 65534.0 if dmax > 0 else 1.0
        d16 = np.where(finite, np.minimum(out.depth / scale, 65534.0), 65535.0)
        d16 = d16.astype(np.uint16)

        return {
            "shaded_png": base64.b64encode(_png_bytes(Image.fromarray(shaded8, "RGB"))).decode(),
            "semantic_png": base64.b64encode(_png_bytes(Image.fromarray(sem8, "RGB"))).decode(),
            "depth_png": base64.b64encode(_png_bytes(Image.fromarray(d16))).decode(),
            "depth_scale": scale,
            "class_ids": sorted(int(i) for i in np.unique(out.semantic)),
        }

    return app


def main():  # pragma: no cover - thin launcher
    import argparse

    import uvicorn

    ap = argparse.ArgumentParser(description="run the map/world/render service")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=8151)
    args = ap.parse_args()
    uvicorn.run(create_app(), host=args.host, port=args.port)
