"""Labeled-mesh ingestion: surface sampling, voxelization, top-down rescan.

The path from a triangle mesh back into the tile/block pipeline: sample the
surface densely enough that every intersected voxel sees points, vote each
voxel's class, average its normals, then scan columns top-down to recover a
map tile.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .satmap import VOID, CdnTile
from .voxelworld import BLOCK_EDGE, OctreeBlock

POINTS_PER_VOXEL_EDGE = 4


@dataclass
class LabeledMesh:
    """Triangle soup with one class id and one unit normal per triangle."""

    vertices: np.ndarray   # (N, 3) float64
    triangles: np.ndarray  # (M, 3) int32 vertex indices
    tri_class: np.ndarray  # (M,) uint8
    tri_normal: np.ndarray  # (M, 3) float64 unit

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        self.tri_class = np.asarray(self.tri_class, dtype=np.uint8).reshape(-1)
        self.tri_normal = np.asarray(self.tri_normal, dtype=np.float64).reshape(-1, 3)
        m = len(self.triangles)
        if len(self.tri_class) != m or len(self.tri_normal) != m:
            raise ValueError("per-triangle arrays must match triangle count")
        if m and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")


def face_normal(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    n = np.cross(b - a, c - a)
    ln = np.linalg.norm(n)
    if ln == 0.0:
        return np.array([0.0, 0.0, 1.0])  # degenerate; sampling skips it anyway
    return n / ln


def mesh_from_arrays(vertices, triangles, tri_class, tri_normal=None) -> LabeledMesh:
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    triangles = np.asarray(triangles, dtype=np.int32).reshape(-1, 3)
    if tri_normal is None:
        tri_normal = np.array([face_normal(vertices[t[0]], vertices[t[1]], vertices[t[2]])
                               for t in triangles], dtype=np.float64).reshape(-1, 3)
    return LabeledMesh(vertices, triangles, tri_class, tri_normal)


# --- .tmesh text format ------------------------------------------------------

def save_tmesh(mesh: LabeledMesh, path) -> None:
    with open(path, "w") as f:
        f.write("# tmesh v1\n")
        for v in mesh.vertices:
            f.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for t, c, n in zip(mesh.triangles, mesh.tri_class, mesh.tri_normal):
            f.write(f"f {int(t[0])} {int(t[1])} {int(t[2])} {int(c)} "
                    f"{float(n[0])!r} {float(n[1])!r} {float(n[2])!r}\n")


def load_tmesh(path) -> LabeledMesh:
    verts, tris, classes, normals = [], [], [], []
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v" and len(parts) == 4:
                verts.append([float(p) for p in parts[1:]])
            elif parts[0] == "f" and len(parts) in (5, 8):
                tris.append([int(p) for p in parts[1:4]])
                classes.append(int(parts[4]))
                normals.append([float(p) for p in parts[5:8]] if len(parts) == 8 else None)
            else:
                raise ValueError(f"tmesh line {lineno}: unrecognized record {parts[0]!r}")
    verts = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    tris = np.asarray(tris, dtype=np.int32).reshape(-1, 3)
    norms = np.array([n if n is not None
                      else face_normal(verts[t[0]], verts[t[1]], verts[t[2]])
                      for n, t in zip(normals, tris)], dtype=np.float64).reshape(-1, 3)
    return LabeledMesh(verts, tris, np.asarray(classes, dtype=np.uint8), norms)


@dataclass
class SurfacePointSet:
    positions: np.ndarray  # (N, 3) float64
    classes: np.ndarray    # (N,) uint8
    normals: np.ndarray    # (N, 3) float64

    def __len__(self) -> int:
        return len(self.positions)


def sample_surface(mesh: LabeledMesh, voxel_size_m: float = 1.0) -> SurfacePointSet:
    """Equal-spacing surface sampling at 4 points per voxel edge.

    Each triangle is rasterized on a world-anchored lattice in its own plane
    (spacing voxel_size_m / 4), so adjacent coplanar triangles sample the
    same lattice and overlapping geometry dedupes exactly.  Nearest sample
    spacing guarantees every voxel a triangle passes through receives points.
    """
    if voxel_size_m <= 0:
        raise ValueError("voxel_size_m must be positive")
    h = voxel_size_m / POINTS_PER_VOXEL_EDGE
    rows = []
    for t, cid, n in zip(mesh.triangles, mesh.tri_class, mesh.tri_normal):
        a, b, c = mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]
        n2 = np.cross(b - a, c - a)
        if np.dot(n2, n2) == 0.0:
            continue  # zero area
        ng = n2 / np.linalg.norm(n2)
        # canonical in-plane frame: world axis least aligned with the plane normal
        ax = int(np.argmin(np.abs(ng)))
        axis = np.zeros(3)
        axis[ax] = 1.0
        e_u = np.cross(axis, ng)
        e_u = e_u / np.linalg.norm(e_u)
        e_v = np.cross(ng, e_u)
        plane_d = float(np.dot(a, ng))

        pu = np.array([np.dot(p, e_u) for p in (a, b, c)])
        pv = np.array([np.dot(p, e_v) for p in (a, b, c)])
        u0, u1 = pu.min(), pu.max()
        v0, v1 = pv.min(), pv.max()
        iu = np.arange(np.floor(u0 / h) - 1, np.floor(u1 / h) + 2, dtype=np.int64)
        iv = np.arange(np.floor(v0 / h) - 1, np.floor(v1 / h) + 2, dtype=np.int64)
        if len(iu) == 0 or len(iv) == 0:
            continue
        gu = (iu.astype(np.float64) + 0.5) * h
        gv = (iv.astype(np.float64) + 0.5) * h
        U, V = np.meshgrid(gu, gv, indexing="ij")

        # barycentric point-in-triangle, inclusive of edges
        d00 = (pu[1] - pu[0]) ** 2 + (pv[1] - pv[0]) ** 2
        d01 = (pu[1] - pu[0]) * (pu[2] - pu[0]) + (pv[1] - pv[0]) * (pv[2] - pv[0])
        d11 = (pu[2] - pu[0]) ** 2 + (pv[2] - pv[0]) ** 2
        denom = d00 * d11 - d01 * d01
        if denom == 0.0:
            continue
        du = U - pu[0]
        dv = V - pv[0]
        d20 = du * (pu[1] - pu[0]) + dv * (pv[1] - pv[0])
        d21 = du * (pu[2] - pu[0]) + dv * (pv[2] - pv[0])
        wb = (d11 * d20 - d01 * d21) / denom
        wc = (d00 * d21 - d01 * d20) / denom
        eps = 1e-12
        keep = (wb >= -eps) & (wc >= -eps) & (wb + wc <= 1.0 + eps)
        if not keep.any():
            continue
        uu = U[keep]
        vv = V[keep]
        pos = (uu[:, None] * e_u[None, :] + vv[:, None] * e_v[None, :]
               + plane_d * ng[None, :])
        block = np.empty((len(uu), 7), dtype=np.float64)
        block[:, :3] = pos
        block[:, 3] = float(cid)
        block[:, 4:] = n
        rows.append(block)

    if not rows:
        return SurfacePointSet(np.empty((0, 3)), np.empty(0, dtype=np.uint8), np.empty((0, 3)))
    allrows = np.concatenate(rows, axis=0)
    allrows = np.unique(allrows, axis=0)  # exact dedupe + canonical order
    return SurfacePointSet(allrows[:, :3].copy(),
                           allrows[:, 3].astype(np.uint8),
                           allrows[:, 4:].copy())


def voxelize(points: SurfacePointSet, block_origin=(0, 0, 0),
             voxel_size_m: float = 1.0) -> OctreeBlock:
    """Bin points into a 64^3 block: per voxel, majority class (ties to the
    lowest id) and the normalized mean normal.

    Point order cannot matter: everything is canonically sorted before any
    accumulation.
    """
    origin = np.asarray(block_origin, dtype=np.float64)
    if origin[0] % BLOCK_EDGE or origin[1] % BLOCK_EDGE or origin[2] != 0:
        raise ValueError("block origin must be on the 64-voxel grid at z=0")
    bx, by = int(origin[0]) // BLOCK_EDGE, int(origin[1]) // BLOCK_EDGE
    blk = OctreeBlock(bx, by)
    if len(points) == 0:
        return blk

    rel = (points.positions - origin) / voxel_size_m
    idx = np.floor(rel).astype(np.int64)
    ok = ((idx >= 0) & (idx < BLOCK_EDGE)).all(axis=1)
    idx = idx[ok]
    cls = points.classes[ok].astype(np.int64)
    nrm = points.normals[ok]
    if len(idx) == 0:
        return blk

    key = (idx[:, 0] * BLOCK_EDGE + idx[:, 1]) * BLOCK_EDGE + idx[:, 2]

    # canonical order: by voxel, then class, then normal components
    order = np.lexsort((nrm[:, 2], nrm[:, 1], nrm[:, 0], cls, key))
    key, cls, nrm = key[order], cls[order], nrm[order]

    # majority class: count (voxel, class) pairs, then pick per voxel the
    # highest count with lowest class winning ties
    pair = key * 256 + cls
    upair, counts = np.unique(pair, return_counts=True)
    ukey = upair // 256
    ucls = upair % 256
    sel = np.lexsort((ucls, -counts, ukey))
    first = np.unique(ukey[sel], return_index=True)[1]
    vox_key = ukey[sel][first]
    vox_cls = ucls[sel][first]

    # mean normal per voxel over the canonically sorted rows
    uk, starts = np.unique(key, return_index=True)
    sums = np.add.reduceat(nrm, starts, axis=0)
    norms = np.sqrt((sums * sums).sum(axis=1))
    mean = np.where(norms[:, None] > 0.0, sums / np.where(norms[:, None] == 0, 1, norms[:, None]),
                    np.array([0.0, 0.0, 1.0]))
    assert np.array_equal(uk, vox_key)

    vx = vox_key // (BLOCK_EDGE * BLOCK_EDGE)
    vy = (vox_key // BLOCK_EDGE) % BLOCK_EDGE
    vz = vox_key % BLOCK_EDGE
    blk.occ[vx, vy, vz] = True
    blk.cls[vx, vy, vz] = vox_cls.astype(np.uint8)
    blk.nrm[vx, vy, vz] = mean.astype(np.float32)
    return blk


def topdown_scan(block: OctreeBlock) -> CdnTile:
    """First-hit scan straight down each column; empty columns become void."""
    occ = block.occ
    any_col = occ.any(axis=2)
    top = (BLOCK_EDGE - 1) - np.argmax(occ[:, :, ::-1], axis=2)
    top = np.where(any_col, top, 0)

    xs = np.arange(BLOCK_EDGE)[:, None]
    ys = np.arange(BLOCK_EDGE)[None, :]
    cat = np.where(any_col, block.cls[xs, ys, top], VOID).astype(np.uint8)
    hgt = np.where(any_col, top, 0).astype(np.uint16)
    nrm = block.nrm[xs, ys, top].astype(np.float32).copy()
    nrm[~any_col] = (0.0, 0.0, 1.0)

    # tile planes are [y, x]; block columns are [x, y]
    return CdnTile(block.bx * BLOCK_EDGE, block.by * BLOCK_EDGE,
                   cat.T, hgt.T, np.transpose(nrm, (1, 0, 2)))
