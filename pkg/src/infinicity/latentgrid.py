"""Lazy latent grid and the deterministic patch synthesizer built on it.

The map is a pure function of a seed: a global style vector plus one local
latent vector per grid cell, both materialized on demand from a counter-based
hash.  Every output pixel depends only on cells whose kernel support reaches
it, so any rectangle can be synthesized independently and any tiling of a
region stitches bit-exactly.

Determinism rules baked into the evaluator:
  * candidate cells are enumerated in lexicographic (i, j) order;
  * kernel weights are exactly 0.0 outside the support, so enumerating a
    superset of contributing cells adds exact zeros and cannot perturb sums;
  * only +, -, *, /, sqrt and comparisons are used (no transcendentals whose
    vectorized code paths could differ between array shapes).
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from . import hashing
from .satmap import (BRIDGE, BUILDING, TREE, CdnTile, Palette, decode_category,
                     default_palette, SYNTH_CLASSES)

DEFAULT_GLOBAL_DIM = 64
DEFAULT_LOCAL_DIM = 16
DEFAULT_CELL_STRIDE = 32
DEFAULT_PATCH_SIZE = 64
DEFAULT_RADIUS_PX = 64

_COEFF_PER_CHANNEL = 4  # local latents feed 4 output channels x 4 coefficients


@dataclass(frozen=True)
class Rect:
    """Half-open pixel rectangle [x, x+w) x [y, y+h) in map coordinates."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"empty rect {self}")

    @property
    def x1(self) -> int:
        return self.x + self.w

    @property
    def y1(self) -> int:
        return self.y + self.h

    def intersects(self, other: "Rect") -> bool:
        return (self.x < other.x1 and other.x < self.x1
                and self.y < other.y1 and other.y < self.y1)

    def intersection(self, other: "Rect") -> "Rect | None":
        x0, y0 = max(self.x, other.x), max(self.y, other.y)
        x1, y1 = min(self.x1, other.x1), min(self.y1, other.y1)
        if x0 >= x1 or y0 >= y1:
            return None
        return Rect(x0, y0, x1 - x0, y1 - y0)

    def dilate(self, r: int) -> "Rect":
        return Rect(self.x - r, self.y - r, self.w + 2 * r, self.h + 2 * r)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class ReceptiveField:
    """Synthesis locality contract: a pixel depends on cells whose center is
    within radius_px (chebyshev-bounded by the kernel support)."""

    radius_px: int = DEFAULT_RADIUS_PX

    def __post_init__(self):
        if self.radius_px < 0:
            raise ValueError("radius_px must be >= 0")


def _ceil_div(a: int, b: int) -> int:
    return -((-a) // b)


def calibrate_region(rect: Rect, rf: ReceptiveField | int,
                     cell_stride: int = DEFAULT_CELL_STRIDE) -> list[tuple[int, int]]:
    """Cells whose latent can influence any pixel of rect, in (i, j) order.

    A cell (i, j) has center ((i+.5)s, (j+.5)s); it is included iff some
    pixel center of rect lies within radius_px of the center on both axes
    (closed bound; the kernel weight at exactly radius_px is zero, so this
    is the minimal closed superset).  All arithmetic is exact: the bounds
    are solved in doubled integer coordinates.
    """
    r = rf.radius_px if isinstance(rf, ReceptiveField) else int(rf)
    s = cell_stride
    if s <= 0:
        raise ValueError("cell_stride must be positive")

    def axis_range(lo: int, n: int) -> range:
        a = 2 * lo + 1 - 2 * r           # doubled coord of lowest reachable center
        b = 2 * (lo + n - 1) + 1 + 2 * r  # doubled coord of highest reachable center
        return range(_ceil_div(a - s, 2 * s), (b - s) // (2 * s) + 1)

    return [(i, j) for i in axis_range(rect.x, rect.w) for j in axis_range(rect.y, rect.h)]


def influence_rect(cells, rf: ReceptiveField | int,
                   cell_stride: int = DEFAULT_CELL_STRIDE) -> Rect:
    """Tight pixel bounding rect of the given cells' influence.

    A pixel is influenced iff its center is strictly within radius_px of a
    cell center on both axes (the kernel weight vanishes at exactly the
    radius).  Exact integer arithmetic, same doubling trick as calibration.
    """
    cells = list(cells)
    if not cells:
        raise ValueError("no cells")
    r = rf.radius_px if isinstance(rf, ReceptiveField) else int(rf)
    s = cell_stride
    ci = [c[0] for c in cells]
    cj = [c[1] for c in cells]

    def bounds(lo_cell: int, hi_cell: int) -> tuple[int, int]:
        lo2 = (2 * lo_cell + 1) * s - 2 * r   # doubled open lower bound
        hi2 = (2 * hi_cell + 1) * s + 2 * r   # doubled open upper bound
        p0 = (lo2 - 1) // 2 + 1               # min px with 2px+1 > lo2
        p1 = (hi2 - 1 - 1) // 2               # max px with 2px+1 < hi2
        return p0, p1

    x0, x1 = bounds(min(ci), max(ci))
    y0, y1 = bounds(min(cj), max(cj))
    return Rect(x0, y0, x1 - x0 + 1, y1 - y0 + 1)


class LatentField:
    """Global latent + lazily materialized per-cell latents for one seed.

    Cells are derived on first touch from (seed, i, j) and memoized; resampled
    cells are pinned explicitly and survive snapshots.  Thread-safe: the
    service synthesizes tiles concurrently against a shared field.
    """

    def __init__(self, seed: int, global_dim: int = DEFAULT_GLOBAL_DIM,
                 local_dim: int = DEFAULT_LOCAL_DIM,
                 cell_stride: int = DEFAULT_CELL_STRIDE,
                 overrides: dict | None = None):
        if global_dim <= 0 or local_dim <= 0:
            raise ValueError("latent dims must be positive")
        if local_dim < 4 * _COEFF_PER_CHANNEL:
            raise ValueError(f"local_dim must be >= {4 * _COEFF_PER_CHANNEL}")
        if cell_stride <= 0:
            raise ValueError("cell_stride must be positive")
        # wrap to int64 so seeds survive the snapshot format unchanged
        self.seed = (int(seed) + 2**63) % 2**64 - 2**63
        self.global_dim = global_dim
        self.local_dim = local_dim
        self.cell_stride = cell_stride
        self.global_latent = self._derive_global()
        self._overrides: dict[tuple[int, int], np.ndarray] = dict(overrides or {})
        self._cache: dict[tuple[int, int], np.ndarray] = dict(self._overrides)
        self._lock = threading.Lock()

    def _derive_global(self) -> np.ndarray:
        u = hashing.hash_grid(self.seed, hashing.TAG_GLOBAL, np.arange(self.global_dim))
        g = hashing.sym_float_grid(u).astype(np.float32)
        g.flags.writeable = False
        return g

    def _derive_cell(self, i: int, j: int) -> np.ndarray:
        u = hashing.hash_grid(self.seed, hashing.TAG_CELL, i, j, np.arange(self.local_dim))
        v = hashing.sym_float_grid(u).astype(np.float32)
        v.flags.writeable = False
        return v

    def cell(self, i: int, j: int) -> np.ndarray:
        key = (i, j)
        got = self._cache.get(key)
        if got is not None:
            return got
        v = self._derive_cell(i, j)
        with self._lock:
            return self._cache.setdefault(key, v)

    @property
    def overrides(self) -> dict[tuple[int, int], np.ndarray]:
        return dict(self._overrides)

    def with_overrides(self, new: dict) -> "LatentField":
        merged = dict(self._overrides)
        merged.update(new)
        return LatentField(self.seed, self.global_dim, self.local_dim,
                           self.cell_stride, overrides=merged)


def sample_field(seed: int, global_dim: int = DEFAULT_GLOBAL_DIM,
                 local_dim: int = DEFAULT_LOCAL_DIM,
                 cell_stride: int = DEFAULT_CELL_STRIDE) -> LatentField:
    return LatentField(seed, global_dim, local_dim, cell_stride)


def resample_cell_latent(base_seed: int, resample_seed: int, i: int, j: int,
                         local_dim: int) -> np.ndarray:
    """Fresh latent for one cell; a distinct hash domain from initial
    materialization so resampling with the field's own seed still changes
    content."""
    u = hashing.hash_grid(base_seed, hashing.TAG_RESAMPLE, resample_seed, i, j,
                          np.arange(local_dim))
    v = hashing.sym_float_grid(u).astype(np.float32)
    v.flags.writeable = False
    return v


def resample_region(field: LatentField, rect: Rect, resample_seed: int,
                    rf: ReceptiveField | int = DEFAULT_RADIUS_PX,
                    ) -> tuple[LatentField, list[tuple[int, int]]]:
    """Replace every cell that can influence rect; returns the new field and
    the resampled cells."""
    cells = calibrate_region(rect, rf, field.cell_stride)
    new = {c: resample_cell_latent(field.seed, resample_seed, c[0], c[1], field.local_dim)
           for c in cells}
    return field.with_overrides(new), cells


def squash(x):
    """Odd sigmoid x/(1+|x|) built from exact float ops."""
    return x / (1.0 + np.abs(x))


def _dsquash(x):
    t = 1.0 + np.abs(x)
    return 1.0 / (t * t)


@dataclass(frozen=True)
class GeneratorConfig:
    patch_size_px: int = DEFAULT_PATCH_SIZE
    receptive_field: ReceptiveField = ReceptiveField(DEFAULT_RADIUS_PX)
    palette: Palette = field(default_factory=lambda: default_palette().subset(SYNTH_CLASSES))

    def __post_init__(self):
        if self.patch_size_px <= 0:
            raise ValueError("patch_size_px must be positive")


# tuning constants for the procedural field; changing any of these changes
# every map, so they are deliberately module-level and not configurable
_GLOBAL_BIAS = 0.6
_LIN_COEFF = 0.9
_CROSS_COEFF = 0.8
_COLOR_GAIN = 1.35
_COLOR_NOISE = 0.1
_RELIEF_GAIN = 0.8
_SLOPE_SCALE_M = 9.0
_SPIKE_PROB = 0.002

_HEIGHT_BASE = np.zeros(16, dtype=np.float64)
_HEIGHT_AMP = np.zeros(16, dtype=np.float64)
_HEIGHT_BASE[BUILDING], _HEIGHT_AMP[BUILDING] = 6.0, 40.0
_HEIGHT_BASE[BRIDGE], _HEIGHT_AMP[BRIDGE] = 4.0, 3.0
_HEIGHT_BASE[TREE], _HEIGHT_AMP[TREE] = 3.0, 5.0


class PatchGenerator:
    """Evaluates map planes for arbitrary rects as a pure function of the
    latent field; output is bit-identical for any decomposition of a region
    into patches."""

    def __init__(self, config: GeneratorConfig | None = None):
        self.config = config or GeneratorConfig()

    @property
    def radius_px(self) -> int:
        return self.config.receptive_field.radius_px

    def evaluate(self, lfield: LatentField, rect: Rect) -> CdnTile:
        cfg = self.config
        r = float(self.radius_px)
        s = lfield.cell_stride
        w, h = rect.w, rect.h

        px = rect.x + np.arange(w, dtype=np.int64)
        py = rect.y + np.arange(h, dtype=np.int64)
        X = (px.astype(np.float64) + 0.5)[None, :]
        Y = (py.astype(np.float64) + 0.5)[:, None]

        g = lfield.global_latent.astype(np.float64)
        acc = np.empty((4, h, w), dtype=np.float64)
        for c in range(4):
            acc[c] = _GLOBAL_BIAS * g[c % lfield.global_dim]
        gx = np.zeros((h, w), dtype=np.float64)
        gy = np.zeros((h, w), dtype=np.float64)

        inv_r = 1.0 / r
        for (i, j) in calibrate_region(rect, self.radius_px, s):
            L = lfield.cell(i, j).astype(np.float64)
            cx = (i + 0.5) * s
            cy = (j + 0.5) * s
            u = (X - cx) * inv_r          # (1, w)
            v = (Y - cy) * inv_r          # (h, 1)
            rho = u * u + v * v           # (h, w)
            om = 1.0 - rho
            inside = rho < 1.0
            wk = np.where(inside, om * om, 0.0)

            Lm = L[:4 * _COEFF_PER_CHANNEL].reshape(4, _COEFF_PER_CHANNEL)
            q = (Lm[:, 0, None, None]
                 + _LIN_COEFF * Lm[:, 1, None, None] * u
                 + _LIN_COEFF * Lm[:, 2, None, None] * v
                 + _CROSS_COEFF * Lm[:, 3, None, None] * (u * v))
            acc += wk * q

            # analytic d/dpx, d/dpy of the relief channel's contribution
            dw_du = np.where(inside, -4.0 * om, 0.0)
            q3 = q[3]
            dq3_du = _LIN_COEFF * Lm[3, 1] + _CROSS_COEFF * Lm[3, 3] * v
            dq3_dv = _LIN_COEFF * Lm[3, 2] + _CROSS_COEFF * Lm[3, 3] * u
            gx += (dw_du * u * q3 + wk * dq3_du) * inv_r
            gy += (dw_du * v * q3 + wk * dq3_dv) * inv_r

        # color channels -> categorical plane
        color = np.empty((h, w, 3), dtype=np.float64)
        PX, PY = np.broadcast_arrays(px[None, :], py[:, None])
        for c in range(3):
            noise = hashing.sym_float_grid(
                hashing.hash_grid(lfield.seed, hashing.TAG_PIXEL_NOISE, PX, PY, c))
            color[:, :, c] = 0.5 + 0.5 * squash(_COLOR_GAIN * acc[c] + _COLOR_NOISE * noise)
        category = decode_category(color, cfg.palette)

        # relief channel -> heights and normals
        relief = acc[3]
        E = squash(_RELIEF_GAIN * relief)
        hf = 0.5 + 0.5 * E
        base = _HEIGHT_BASE[category]
        amp = _HEIGHT_AMP[category]
        shaped = np.where(category == BUILDING, hf * hf, hf)
        hraw = base + amp * shaped

        spike_u = hashing.unit_float_grid(
            hashing.hash_grid(lfield.seed, hashing.TAG_SPIKE, PX, PY, 0))
        spike_amp = hashing.unit_float_grid(
            hashing.hash_grid(lfield.seed, hashing.TAG_SPIKE, PX, PY, 1))
        spike = (spike_u < _SPIKE_PROB) & (category == BUILDING)
        hraw = hraw + np.where(spike, 8.0 + np.floor(20.0 * spike_amp), 0.0)

        height = np.clip(np.floor(hraw + 0.5), 0.0, 63.0).astype(np.uint16)

        dE = _RELIEF_GAIN * _dsquash(_RELIEF_GAIN * relief)
        sx = _SLOPE_SCALE_M * dE * gx
        sy = _SLOPE_SCALE_M * dE * gy
        inv_n = 1.0 / np.sqrt(sx * sx + sy * sy + 1.0)
        normal = np.empty((h, w, 3), dtype=np.float64)
        normal[:, :, 0] = -sx * inv_n
        normal[:, :, 1] = -sy * inv_n
        normal[:, :, 2] = inv_n

        return CdnTile(rect.x, rect.y, category, height, normal.astype(np.float32))

    def evaluate_batch(self, lfield: LatentField, rects) -> list[CdnTile]:
        return [self.evaluate(lfield, r) for r in rects]


@dataclass
class SynthesisJob:
    rect: Rect
    state: str = "queued"  # queued -> running -> done
    output: CdnTile | None = None
    completion_index: int | None = None


class SynthesisQueue:
    """FIFO queue of patch jobs, flushed in batches."""

    def __init__(self):
        self._jobs: list[SynthesisJob] = []
        self._lock = threading.Lock()
        self._done = 0

    def enqueue(self, rect: Rect) -> SynthesisJob:
        job = SynthesisJob(rect)
        with self._lock:
            self._jobs.append(job)
        return job

    @property
    def jobs(self) -> list[SynthesisJob]:
        with self._lock:
            return list(self._jobs)

    def flush(self, evaluate_batch, batch_size: int = 8) -> list[SynthesisJob]:
        """Run every queued job FIFO in batches of batch_size; skips jobs in
        any other state.  Returns the jobs executed, in completion order."""
        if batch_size <= 0:
            raise ValueError("batch_size must be positive")
        with self._lock:
            todo = [j for j in self._jobs if j.state == "queued"]
            for j in todo:
                j.state = "running"
        executed = []
        for k in range(0, len(todo), batch_size):
            batch = todo[k:k + batch_size]
            outs = evaluate_batch([j.rect for j in batch])
            if len(outs) != len(batch):
                raise RuntimeError("evaluator returned wrong batch size")
            with self._lock:
                for j, out in zip(batch, outs):
                    j.output = out
                    j.state = "done"
                    j.completion_index = self._done
                    self._done += 1
                    executed.append(j)
        return executed


def flush_queue(queue: SynthesisQueue, evaluate_batch, batch_size: int = 8):
    return queue.flush(evaluate_batch, batch_size)


def patch_cover(rect: Rect, patch_size: int) -> list[Rect]:
    """Aligned patch lattice rects covering rect, row-major by (row, col)."""
    p = patch_size
    i0, i1 = rect.x // p, (rect.x1 - 1) // p
    j0, j1 = rect.y // p, (rect.y1 - 1) // p
    return [Rect(i * p, j * p, p, p) for j in range(j0, j1 + 1) for i in range(i0, i1 + 1)]


def synthesize_region(lfield: LatentField, rect: Rect,
                      generator: PatchGenerator | None = None,
                      batch_size: int = 8,
                      queue: SynthesisQueue | None = None) -> CdnTile:
    """Synthesize rect by patch decomposition through the job queue and
    stitch the outputs.  Bit-identical to evaluating rect in one piece."""
    gen = generator or PatchGenerator()
    queue = queue or SynthesisQueue()
    jobs = [queue.enqueue(p) for p in patch_cover(rect, gen.config.patch_size_px)]
    queue.flush(lambda rects: gen.evaluate_batch(lfield, rects), batch_size)

    cat = np.zeros((rect.h, rect.w), dtype=np.uint8)
    hgt = np.zeros((rect.h, rect.w), dtype=np.uint16)
    nrm = np.zeros((rect.h, rect.w, 3), dtype=np.float32)
    for job in jobs:
        ov = rect.intersection(job.rect)
        if ov is None:
            continue
        t = job.output
        sy, sx = ov.y - t.y, ov.x - t.x
        dy, dx = ov.y - rect.y, ov.x - rect.x
        cat[dy:dy + ov.h, dx:dx + ov.w] = t.category[sy:sy + ov.h, sx:sx + ov.w]
        hgt[dy:dy + ov.h, dx:dx + ov.w] = t.height_m[sy:sy + ov.h, sx:sx + ov.w]
        nrm[dy:dy + ov.h, dx:dx + ov.w] = t.normal[sy:sy + ov.h, sx:sx + ov.w]
    return CdnTile(rect.x, rect.y, cat, hgt, nrm)


# --- .iclf serialization ----------------------------------------------------

_ICLF_MAGIC = b"ICLF"
_ICLF_VERSION = 1
_ICLF_HEADER = struct.Struct("<4sHHHHqI")


class FieldFormatError(ValueError):
    pass


def dumps_field(lfield: LatentField) -> bytes:
    """Snapshot: seed + dims + explicitly pinned (resampled) cells.

    Lazily derived cells need no storage; they re-derive from the seed.
    """
    cells = sorted(lfield.overrides.items())
    head = _ICLF_HEADER.pack(_ICLF_MAGIC, _ICLF_VERSION, lfield.global_dim,
                             lfield.local_dim, lfield.cell_stride,
                             lfield.seed, len(cells))
    parts = [head]
    for (i, j), vec in cells:
        parts.append(struct.pack("<ii", i, j))
        parts.append(np.asarray(vec, dtype="<f4").tobytes())
    return b"".join(parts)


def loads_field(data: bytes) -> LatentField:
    if len(data) < _ICLF_HEADER.size:
        raise FieldFormatError("truncated header")
    magic, version, gdim, ldim, stride, seed, count = _ICLF_HEADER.unpack_from(data)
    if magic != _ICLF_MAGIC:
        raise FieldFormatError(f"bad magic {magic!r}")
    if version != _ICLF_VERSION:
        raise FieldFormatError(f"unsupported version {version}")
    entry = 8 + 4 * ldim
    need = _ICLF_HEADER.size + count * entry
    if len(data) != need:
        raise FieldFormatError(f"expected {need} bytes, got {len(data)}")
    overrides = {}
    off = _ICLF_HEADER.size
    for _ in range(count):
        i, j = struct.unpack_from("<ii", data, off)
        vec = np.frombuffer(data, "<f4", ldim, off + 8).copy()
        vec.flags.writeable = False
        overrides[(i, j)] = vec
        off += entry
    return LatentField(seed, gdim, ldim, stride, overrides=overrides)


def save_field(lfield: LatentField, path) -> None:
    with open(path, "wb") as f:
        f.write(dumps_field(lfield))


def load_field(path) -> LatentField:
    with open(path, "rb") as f:
        return loads_field(f.read())
