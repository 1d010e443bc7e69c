"""First-hit voxel ray casting and view rendering.

Traversal is an exact grid walk (step one voxel face at a time, crossing
times computed fresh from the ray origin each step, so no error accumulates),
with an 8^3 occupancy mip for skipping empty space.  Feature retrieval blends
the eight corner features of the hit voxel trilinearly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import hashing
from .satmap import SKY, Palette, default_palette
from .voxelworld import FEATURE_DIM, VoxelWorld, corner_feature_vector, _FEATURE_SEED

SUP_EDGE = 8

# fixed sun direction for the shaded plane
LIGHT_DIR = np.array([0.45, 0.3, -0.84], dtype=np.float64)
LIGHT_DIR /= np.linalg.norm(LIGHT_DIR)

_AMBIENT = 0.35
_DIFFUSE = 0.65

# face codes: 2*axis + (0 if the ray stepped in +axis, else 1); 6 = ray
# started inside the voxel
FACE_NORMALS = np.array([
    [-1, 0, 0], [1, 0, 0],
    [0, -1, 0], [0, 1, 0],
    [0, 0, -1], [0, 0, 1],
    [0, 0, 1],
], dtype=np.float64)


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.direction = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = float(np.linalg.norm(self.direction))
        if not math.isfinite(n) or abs(n - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")


@dataclass
class HitRecord:
    hit: bool
    voxel: tuple[int, int, int] | None
    t: float
    point: np.ndarray | None
    face_normal: np.ndarray | None
    class_id: int | None


_U11 = np.uint64(11)
_U27 = np.uint64(27)
_U30 = np.uint64(30)
_U31 = np.uint64(31)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_MIXA = np.uint64(0xBF58476D1CE4E5B9)
_MIXB = np.uint64(0x94D049BB133111EB)
_CHAIN0 = np.uint64(0x8BADF00D5EEDBA5E)
_TAG_FEATURE = hashing.TAG_FEATURE
_FEAT_SEED = _FEATURE_SEED


@njit(cache=True)
def _hash_step(h, v):
    """One chain step of the shared counter hash; h uint64, v int64."""
    z = h ^ (np.uint64(v) * _GOLD)
    z = (z ^ (z >> _U30)) * _MIXA
    z = (z ^ (z >> _U27)) * _MIXB
    return z ^ (z >> _U31)


@njit(cache=True)
def _sym_float(h):
    return np.float64(h >> _U11) * 2.0**-53 * 2.0 - 1.0


@njit(cache=True)
def _traverse_batch(occ, sup, origins, dirs, t_cap,
                    out_hit, out_vox, out_t, out_face):
    size = np.empty(3, np.int64)
    size[0], size[1], size[2] = occ.shape[0], occ.shape[1], occ.shape[2]
    ssize = np.empty(3, np.int64)
    ssize[0], ssize[1], ssize[2] = sup.shape[0], sup.shape[1], sup.shape[2]

    o = np.empty(3, np.float64)
    d = np.empty(3, np.float64)
    stp = np.empty(3, np.int64)
    sc = np.empty(3, np.int64)
    scnb = np.empty(3, np.int64)
    sctm = np.empty(3, np.float64)
    c = np.empty(3, np.int64)
    nvb = np.empty(3, np.int64)
    tm = np.empty(3, np.float64)

    for ri in range(origins.shape[0]):
        out_hit[ri] = 0
        out_t[ri] = np.inf
        out_face[ri] = 6
        out_vox[ri, 0] = -1
        out_vox[ri, 1] = -1
        out_vox[ri, 2] = -1

        for ax in range(3):
            o[ax] = origins[ri, ax]
            d[ax] = dirs[ri, ax]
            if d[ax] > 0.0:
                stp[ax] = 1
            elif d[ax] < 0.0:
                stp[ax] = -1
            else:
                stp[ax] = 0

        # clip to the world box [0,nx]x[0,ny]x[0,nz]
        t0 = 0.0
        t1 = t_cap
        eaxis = -1
        esign = 0
        ok = True
        for ax in range(3):
            if d[ax] == 0.0:
                if o[ax] < 0.0 or o[ax] >= size[ax]:
                    ok = False
            else:
                ta = (0.0 - o[ax]) / d[ax]
                tb = (size[ax] - o[ax]) / d[ax]
                if ta > tb:
                    ta, tb = tb, ta
                if ta > t0:
                    t0 = ta
                    eaxis = ax
                    esign = stp[ax]
                if tb < t1:
                    t1 = tb
        if not ok or t0 > t1:
            continue

        # coarse walk init (8^3 supercells; world faces are supercell faces,
        # so an entry axis pins that coordinate exactly)
        for ax in range(3):
            if ax == eaxis:
                sc[ax] = 0 if esign > 0 else ssize[ax] - 1
            else:
                q = np.int64(np.floor((o[ax] + t0 * d[ax]) / SUP_EDGE))
                if q < 0:
                    q = 0
                if q > ssize[ax] - 1:
                    q = ssize[ax] - 1
                sc[ax] = q
            if stp[ax] > 0:
                scnb[ax] = (sc[ax] + 1) * SUP_EDGE
                sctm[ax] = (scnb[ax] - o[ax]) / d[ax]
            elif stp[ax] < 0:
                scnb[ax] = sc[ax] * SUP_EDGE
                sctm[ax] = (scnb[ax] - o[ax]) / d[ax]
            else:
                scnb[ax] = 0
                sctm[ax] = np.inf

        t_enter = t0
        fe_axis = eaxis
        fe_sign = esign
        stop = False

        while not stop:
            if sup[sc[0], sc[1], sc[2]]:
                # fine walk inside this supercell
                for ax in range(3):
                    lo = sc[ax] * SUP_EDGE
                    if ax == fe_axis:
                        c[ax] = lo if fe_sign > 0 else lo + SUP_EDGE - 1
                    else:
                        q = np.int64(np.floor(o[ax] + t_enter * d[ax]))
                        if q < lo:
                            q = lo
                        if q > lo + SUP_EDGE - 1:
                            q = lo + SUP_EDGE - 1
                        c[ax] = q
                    if stp[ax] > 0:
                        nvb[ax] = c[ax] + 1
                        tm[ax] = (nvb[ax] - o[ax]) / d[ax]
                    elif stp[ax] < 0:
                        nvb[ax] = c[ax]
                        tm[ax] = (nvb[ax] - o[ax]) / d[ax]
                    else:
                        nvb[ax] = 0
                        tm[ax] = np.inf

                tcur = t_enter
                va = fe_axis
                vs = fe_sign
                while True:
                    if tcur > t1:
                        stop = True
                        break
                    if occ[c[0], c[1], c[2]]:
                        out_hit[ri] = 1
                        out_t[ri] = tcur
                        out_vox[ri, 0] = c[0]
                        out_vox[ri, 1] = c[1]
                        out_vox[ri, 2] = c[2]
                        if va < 0:
                            out_face[ri] = 6
                        else:
                            out_face[ri] = 2 * va + (0 if vs > 0 else 1)
                        stop = True
                        break
                    axm = 0
                    if tm[1] < tm[axm]:
                        axm = 1
                    if tm[2] < tm[axm]:
                        axm = 2
                    tcur = tm[axm]
                    c[axm] += stp[axm]
                    va = axm
                    vs = stp[axm]
                    nvb[axm] += stp[axm]
                    tm[axm] = (nvb[axm] - o[axm]) / d[axm]
                    if c[axm] // SUP_EDGE != sc[axm]:
                        break  # left the supercell; resume coarse walk
                if stop:
                    break

            # coarse step
            axm = 0
            if sctm[1] < sctm[axm]:
                axm = 1
            if sctm[2] < sctm[axm]:
                axm = 2
            t_enter = sctm[axm]
            if t_enter > t1:
                break
            sc[axm] += stp[axm]
            if sc[axm] < 0 or sc[axm] >= ssize[axm]:
                break
            scnb[axm] += stp[axm] * SUP_EDGE
            sctm[axm] = (scnb[axm] - o[axm]) / d[axm]
            fe_axis = axm
            fe_sign = stp[axm]


@njit(cache=True)
def _feature_batch(occ, cls, wox, woy, vox, frac, out):
    acc = np.empty(FEATURE_DIM, np.float64)
    for m in range(vox.shape[0]):
        for k in range(FEATURE_DIM):
            acc[k] = 0.0
        for corner in range(8):
            a = (corner >> 2) & 1
            b = (corner >> 1) & 1
            g = corner & 1
            cx = vox[m, 0] + a
            cy = vox[m, 1] + b
            cz = vox[m, 2] + g

            # owner: lexicographically smallest occupied voxel incident to
            # the corner (local coords; out-of-world voxels can't own)
            ocls = -1
            for vx in range(cx - 1, cx + 1):
                if ocls >= 0 or vx < 0 or vx >= occ.shape[0]:
                    continue
                for vy in range(cy - 1, cy + 1):
                    if ocls >= 0 or vy < 0 or vy >= occ.shape[1]:
                        continue
                    for vz in range(cz - 1, cz + 1):
                        if ocls < 0 and 0 <= vz < occ.shape[2] and occ[vx, vy, vz]:
                            ocls = cls[vx, vy, vz]
            if ocls < 0:
                continue  # corner touches no occupied voxel; contributes nothing

            wx = frac[m, 0] if a == 1 else 1.0 - frac[m, 0]
            wy = frac[m, 1] if b == 1 else 1.0 - frac[m, 1]
            wz = frac[m, 2] if g == 1 else 1.0 - frac[m, 2]
            w = wx * wy * wz

            for k in range(FEATURE_DIM):
                h = _CHAIN0
                h = _hash_step(h, _FEAT_SEED)
                h = _hash_step(h, _TAG_FEATURE)
                h = _hash_step(h, ocls)
                h = _hash_step(h, (cx + wox) & 7)
                h = _hash_step(h, (cy + woy) & 7)
                h = _hash_step(h, cz & 7)
                h = _hash_step(h, k)
                # corner vectors are float32 everywhere; quantize before blending
                acc[k] += w * np.float64(np.float32(_sym_float(h)))
        for k in range(FEATURE_DIM):
            out[m, k] = np.float32(acc[k])


def raycast(world: VoxelWorld, ray: Ray, t_cap: float = np.inf) -> HitRecord:
    """First occupied voxel along the ray, with exact entry t and face."""
    origins = (ray.origin - world.origin.astype(np.float64)).reshape(1, 3)
    dirs = ray.direction.reshape(1, 3)
    hit = np.zeros(1, dtype=np.uint8)
    vox = np.zeros((1, 3), dtype=np.int64)
    t = np.zeros(1, dtype=np.float64)
    face = np.zeros(1, dtype=np.int8)
    _traverse_batch(world.occ, world.sup, origins, dirs, float(t_cap), hit, vox, t, face)
    if not hit[0]:
        return HitRecord(False, None, np.inf, None, None, None)
    v = vox[0] + world.origin
    point = ray.origin + t[0] * ray.direction
    return HitRecord(True, (int(v[0]), int(v[1]), int(v[2])), float(t[0]),
                     point, FACE_NORMALS[face[0]].copy(),
                     int(world.cls[vox[0, 0], vox[0, 1], vox[0, 2]]))


def trilinear_features(world: VoxelWorld, point) -> np.ndarray:
    """Reference corner-feature blend at a point inside an occupied voxel."""
    p = np.asarray(point, dtype=np.float64).reshape(3)
    v = np.floor(p).astype(np.int64)
    if not world.is_occupied(int(v[0]), int(v[1]), int(v[2])):
        raise ValueError(f"point {p} is not inside an occupied voxel")
    frac = np.clip(p - v, 0.0, 1.0)
    acc = np.zeros(FEATURE_DIM, dtype=np.float64)
    for corner in range(8):
        a, b, g = (corner >> 2) & 1, (corner >> 1) & 1, corner & 1
        cx, cy, cz = int(v[0] + a), int(v[1] + b), int(v[2] + g)
        try:
            feat = world.corner_feature(cx, cy, cz)
        except KeyError:
            continue
        wx = frac[0] if a else 1.0 - frac[0]
        wy = frac[1] if b else 1.0 - frac[1]
        wz = frac[2] if g else 1.0 - frac[2]
        acc += (wx * wy * wz) * feat.astype(np.float64)
    return acc.astype(np.float32)


def camera_rays(pose, width: int, height: int, vfov_deg: float = 60.0):
    """Pinhole ray grid for a pose; returns (origin, (H, W, 3) unit dirs).

    yaw about +z (0 = +x), pitch positive looks down, roll about the view
    axis (positive rolls the right vector toward up).
    """
    if width < 1 or height < 1:
        raise ValueError("resolution must be >= 1x1")
    if not (0.0 < vfov_deg < 180.0):
        raise ValueError("vfov_deg must be in (0, 180)")
    cy, sy = math.cos(math.radians(pose.yaw_deg)), math.sin(math.radians(pose.yaw_deg))
    cp, sp = math.cos(math.radians(pose.pitch_deg)), math.sin(math.radians(pose.pitch_deg))
    cr, sr = math.cos(math.radians(pose.roll_deg)), math.sin(math.radians(pose.roll_deg))

    fwd = np.array([cp * cy, cp * sy, -sp])
    right0 = np.cross(fwd, [0.0, 0.0, 1.0])
    rn = np.linalg.norm(right0)
    if rn < 1e-12:
        raise ValueError("camera looks straight along +-z; basis undefined")
    right0 /= rn
    up0 = np.cross(right0, fwd)
    right = cr * right0 + sr * up0
    up = -sr * right0 + cr * up0

    tanv = math.tan(math.radians(vfov_deg) / 2.0)
    aspect = width / height
    sx = (2.0 * (np.arange(width) + 0.5) / width - 1.0) * tanv * aspect
    sz = (1.0 - 2.0 * (np.arange(height) + 0.5) / height) * tanv
    dirs = (fwd[None, None, :]
            + sx[None, :, None] * right[None, None, :]
            + sz[:, None, None] * up[None, None, :])
    dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
    return pose.position.copy(), dirs


@dataclass
class RenderOutput:
    """Aligned per-pixel planes for one rendered view."""

    semantic: np.ndarray  # (H, W) uint8 class ids; sky where the ray missed
    depth: np.ndarray     # (H, W) float32 ray t, +inf on miss
    shaded: np.ndarray    # (H, W, 3) float32 in [0, 1]
    feature: np.ndarray   # (H, W, FEATURE_DIM) float32, zeros on miss

    def __post_init__(self):
        h, w = self.semantic.shape
        if (self.depth.shape != (h, w) or self.shaded.shape != (h, w, 3)
                or self.feature.shape != (h, w, FEATURE_DIM)):
            raise ValueError("render planes must share one resolution")


_FEATURE_NUDGE = 1e-9


def render_view(world: VoxelWorld, pose, width: int, height: int,
                vfov_deg: float = 60.0, palette: Palette | None = None,
                t_cap: float = np.inf) -> RenderOutput:
    palette = palette or default_palette()
    origin, dirs = camera_rays(pose, width, height, vfov_deg)
    n = width * height
    flat_dirs = np.ascontiguousarray(dirs.reshape(n, 3))
    flat_orig = np.broadcast_to(origin - world.origin.astype(np.float64), (n, 3))
    flat_orig = np.ascontiguousarray(flat_orig)

    hit = np.zeros(n, dtype=np.uint8)
    vox = np.zeros((n, 3), dtype=np.int64)
    t = np.zeros(n, dtype=np.float64)
    face = np.zeros(n, dtype=np.int8)
    _traverse_batch(world.occ, world.sup, flat_orig, flat_dirs, float(t_cap),
                    hit, vox, t, face)

    hm = hit.astype(bool)
    semantic = np.full(n, SKY, dtype=np.uint8)
    semantic[hm] = world.cls[vox[hm, 0], vox[hm, 1], vox[hm, 2]]
    depth = np.where(hm, t, np.inf).astype(np.float32)

    feature = np.zeros((n, FEATURE_DIM), dtype=np.float32)
    if hm.any():
        pts = flat_orig[hm] + (t[hm, None] + _FEATURE_NUDGE) * flat_dirs[hm]
        frac = np.clip(pts - vox[hm].astype(np.float64), 0.0, 1.0)
        fout = np.zeros((int(hm.sum()), FEATURE_DIM), dtype=np.float32)
        _feature_batch(world.occ, world.cls, int(world.origin[0]), int(world.origin[1]),
                       np.ascontiguousarray(vox[hm]), np.ascontiguousarray(frac), fout)
        feature[hm] = fout

    # shading: palette color x lambert from the hit face x a feature-keyed jitter
    lambert_by_face = _AMBIENT + _DIFFUSE * np.maximum(
        0.0, FACE_NORMALS @ (-LIGHT_DIR))
    colors = np.zeros((n, 3), dtype=np.float64)
    if hm.any():
        base = encode_palette_colors(palette)[semantic[hm]]
        lam = lambert_by_face[face[hm].astype(np.int64)]
        fsum = feature[hm].astype(np.float64).sum(axis=1)
        jit = 0.9 + 0.1 * (0.5 + 0.5 * (fsum / (1.0 + np.abs(fsum))))
        colors[hm] = base * (lam * jit)[:, None]
    colors[~hm] = palette.color_of(SKY)
    shaded = np.clip(colors, 0.0, 1.0).astype(np.float32)

    return RenderOutput(semantic.reshape(height, width),
                        depth.reshape(height, width),
                        shaded.reshape(height, width, 3),
                        feature.reshape(height, width, FEATURE_DIM))


def encode_palette_colors(palette: Palette) -> np.ndarray:
    """(256, 3) float64 LUT from class id to palette color."""
    lut = np.zeros((256, 3), dtype=np.float64)
    for e in palette.entries:
        lut[e.class_id] = e.color
    return lut
