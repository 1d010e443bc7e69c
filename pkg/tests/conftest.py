"""Shared fixtures and independent oracle helpers.

The march oracle here is deliberately a different algorithm from the
production traversal: fixed-step sampling along the ray, no DDA logic, so
agreement between the two is meaningful evidence.
"""

import numpy as np
import pytest
from numba import njit

import infinicity as ic
from infinicity import satmap


@njit(cache=True)
def march_first_hit(occ, ox, oy, oz, dx, dy, dz, step, t_max):
    """Fixed-step straight-line sampling; returns (hit, vx, vy, vz, t)."""
    nx, ny, nz = occ.shape
    n_steps = int(t_max / step) + 1
    for k in range(n_steps):
        t = k * step
        px = ox + t * dx
        py = oy + t * dy
        pz = oz + t * dz
        vx = int(np.floor(px))
        vy = int(np.floor(py))
        vz = int(np.floor(pz))
        if 0 <= vx < nx and 0 <= vy < ny and 0 <= vz < nz and occ[vx, vy, vz]:
            return True, vx, vy, vz, t
    return False, -1, -1, -1, np.inf


def voxel_chord(o, d, v):
    """Exact [t_in, t_out] of the ray inside voxel v (slab method), or None."""
    t0, t1 = -np.inf, np.inf
    for ax in range(3):
        lo, hi = float(v[ax]), float(v[ax] + 1)
        if d[ax] == 0.0:
            if not (lo <= o[ax] < hi):
                return None
        else:
            ta, tb = (lo - o[ax]) / d[ax], (hi - o[ax]) / d[ax]
            if ta > tb:
                ta, tb = tb, ta
            t0, t1 = max(t0, ta), min(t1, tb)
    if t0 > t1:
        return None
    return t0, t1


def random_box_world(seed: int, n_boxes: int = 40) -> ic.VoxelWorld:
    rng = np.random.default_rng(seed)
    occ = np.zeros((64, 64, 64), dtype=bool)
    for _ in range(n_boxes):
        x, y, z = rng.integers(0, 56, 3)
        w, h, d = rng.integers(2, 8, 3)
        occ[x:x + w, y:y + h, z:z + d] = True
    cls = np.where(occ, satmap.BUILDING, 0).astype(np.uint8)
    return ic.VoxelWorld(0, 0, 1, 1, occ, cls)


def random_tile(rng, classes=None, max_h: int = 63, size: int = 64) -> satmap.CdnTile:
    """Random void-free tile with unit float32 normals."""
    if classes is None:
        classes = [c for c in range(1, 12)]
    cat = rng.choice(np.array(classes, dtype=np.uint8), size=(size, size))
    hgt = rng.integers(0, max_h + 1, (size, size)).astype(np.uint16)
    nrm = rng.normal(size=(size, size, 3))
    nrm[:, :, 2] = np.abs(nrm[:, :, 2]) + 0.2
    nrm /= np.linalg.norm(nrm, axis=2, keepdims=True)
    return satmap.CdnTile(0, 0, cat, hgt, nrm.astype(np.float32))


@pytest.fixture(scope="session")
def palette():
    return satmap.default_palette()


@pytest.fixture(scope="session")
def seed1_world_and_tile():
    """128x128 watertight world from seed 1, shared by camera/render tests."""
    lf = ic.sample_field(1)
    rect = ic.Rect(0, 0, 128, 128)
    tile = satmap.clean_tile(ic.synthesize_region(lf, rect))
    blocks = []
    from infinicity.latentgrid import patch_cover
    for sub in patch_cover(rect, 64):
        blk = ic.lift_tile(tile.crop(sub.x, sub.y, sub.w, sub.h),
                           sub.x // 64, sub.y // 64)
        blocks.append(ic.complete_watertight(blk))
    return ic.assemble_world(blocks), tile


@pytest.fixture(scope="session")
def seed1_mask(seed1_world_and_tile):
    _, tile = seed1_world_and_tile
    return ic.refine_mask(ic.label_walkable(tile))
