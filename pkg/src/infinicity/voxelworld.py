"""Voxel blocks, column completion, world assembly, and their file formats.

A block is a 64^3 voxel cube addressed [x, y, z] with z up, anchored on a
(bx, by) grid at world offset (64*bx, 64*by, 0).  Dense boolean/uint8 arrays
are the working representation; the sparse octree only exists in the
serialized form, where it stores exactly the occupied voxels as a canonical
depth-6 tree (64 = 2^6).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import hashing
from .satmap import TREE, TRUNK, VOID, CdnTile, MAX_HEIGHT_M

BLOCK_EDGE = 64
OCTREE_DEPTH = 6
FEATURE_DIM = 16
_FEATURE_SEED = 0x0F_EA_7C_0D

_UP = np.array([0.0, 0.0, 1.0], dtype=np.float32)


class OctreeBlock:
    """One 64^3 voxel cube: occupancy, class id and unit normal per voxel."""

    def __init__(self, bx: int = 0, by: int = 0, occ=None, cls=None, nrm=None):
        self.bx = int(bx)
        self.by = int(by)
        e = BLOCK_EDGE
        self.occ = np.zeros((e, e, e), dtype=bool) if occ is None else np.ascontiguousarray(occ, dtype=bool)
        self.cls = np.zeros((e, e, e), dtype=np.uint8) if cls is None else np.ascontiguousarray(cls, dtype=np.uint8)
        self.nrm = np.zeros((e, e, e, 3), dtype=np.float32) if nrm is None else np.ascontiguousarray(nrm, dtype=np.float32)
        if self.occ.shape != (e, e, e) or self.cls.shape != (e, e, e) or self.nrm.shape != (e, e, e, 3):
            raise ValueError("block arrays must be 64^3")

    @property
    def origin(self) -> np.ndarray:
        return np.array([self.bx * BLOCK_EDGE, self.by * BLOCK_EDGE, 0], dtype=np.int64)

    def occupied_count(self) -> int:
        return int(self.occ.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, OctreeBlock):
            return NotImplemented
        if (self.bx, self.by) != (other.bx, other.by):
            return False
        if not np.array_equal(self.occ, other.occ):
            return False
        m = self.occ
        return (np.array_equal(self.cls[m], other.cls[m])
                and np.array_equal(self.nrm[m], other.nrm[m]))


def lift_tile(tile: CdnTile, bx: int = 0, by: int = 0) -> OctreeBlock:
    """Extrude a 64x64 map tile into a surface-voxel block.

    Tile pixel (px, py) becomes column (x=px, y=py); the class/normal land on
    the single voxel at the pixel's height.  Void pixels yield empty columns.
    """
    if tile.width != BLOCK_EDGE or tile.height != BLOCK_EDGE:
        raise ValueError(f"lift_tile needs a {BLOCK_EDGE}x{BLOCK_EDGE} tile")
    hmax = int(tile.height_m.max(initial=0))
    if hmax > MAX_HEIGHT_M:
        raise ValueError(f"tile height {hmax} exceeds block extent")
    blk = OctreeBlock(bx, by)
    cat = tile.category.T  # [x, y]
    hgt = tile.height_m.T.astype(np.int64)
    nrm = np.transpose(tile.normal, (1, 0, 2))
    xs, ys = np.nonzero(cat != VOID)
    zs = hgt[xs, ys]
    blk.occ[xs, ys, zs] = True
    blk.cls[xs, ys, zs] = cat[xs, ys]
    blk.nrm[xs, ys, zs] = nrm[xs, ys]
    return blk


def _column_tops(occ: np.ndarray) -> np.ndarray:
    """Per column: highest occupied z, or -1 when empty."""
    any_col = occ.any(axis=2)
    top = (BLOCK_EDGE - 1) - np.argmax(occ[:, :, ::-1], axis=2)
    return np.where(any_col, top, -1)


def _surface_only(occ: np.ndarray) -> bool:
    return bool((occ.sum(axis=2) <= 1).all())


def complete_pillar(block: OctreeBlock) -> OctreeBlock:
    """Fill each surface voxel's column down to the ground with its class.

    The baseline completion: solid pillars under every surface sample.
    """
    if not _surface_only(block.occ):
        raise ValueError("pillar completion expects a surface block (<=1 voxel per column)")
    top = _column_tops(block.occ)
    zs = np.arange(BLOCK_EDGE)
    filled = zs[None, None, :] <= top[:, :, None]

    out = OctreeBlock(block.bx, block.by)
    out.occ = filled
    surf_cls = block.cls.max(axis=2)  # the lone surface voxel's class
    out.cls = np.where(filled, surf_cls[:, :, None], 0).astype(np.uint8)
    out.nrm[filled] = _UP
    sx, sy, sz = np.nonzero(block.occ)
    out.nrm[sx, sy, sz] = block.nrm[sx, sy, sz]
    return out


def complete_watertight(block: OctreeBlock) -> OctreeBlock:
    """Class-aware completion: like pillar, except trees keep a small canopy
    and stand on a trunk column instead of a full-class pillar."""
    if not _surface_only(block.occ):
        raise ValueError("watertight completion expects a surface block (<=1 voxel per column)")
    top = _column_tops(block.occ)
    surf_cls = block.cls.max(axis=2)
    zs = np.arange(BLOCK_EDGE)[None, None, :]
    top3 = top[:, :, None]
    is_tree = (surf_cls == TREE)[:, :, None]

    filled = zs <= top3
    canopy = filled & (zs >= top3 - 2)
    trunk = filled & (zs < top3 - 2)

    out = OctreeBlock(block.bx, block.by)
    out.occ = filled
    cls = np.where(filled, surf_cls[:, :, None], 0)
    cls = np.where(is_tree & canopy, TREE, cls)
    cls = np.where(is_tree & trunk, TRUNK, cls)
    out.cls = cls.astype(np.uint8)
    out.nrm[filled] = _UP
    sx, sy, sz = np.nonzero(block.occ)
    out.nrm[sx, sy, sz] = block.nrm[sx, sy, sz]
    return out


def is_watertight(block: OctreeBlock) -> bool:
    """No empty voxel below a column's surface is reachable from outside.

    Checked by flood-filling the exterior (6-connectivity, through a one-voxel
    empty shell) and testing whether it touches any below-surface void.
    """
    occ = block.occ
    top = _column_tops(occ)
    zs = np.arange(BLOCK_EDGE)[None, None, :]
    below_surface_void = (~occ) & (zs <= top[:, :, None])
    if not below_surface_void.any():
        return True
    padded = np.pad(~occ, 1, constant_values=True)
    labels, _ = ndimage.label(padded, structure=ndimage.generate_binary_structure(3, 1))
    exterior = labels == labels[0, 0, 0]
    ext_core = exterior[1:-1, 1:-1, 1:-1]
    return not bool((ext_core & below_surface_void).any())


class VoxelWorld:
    """Rectangular grid of completed blocks merged into dense arrays.

    Holds occupancy + class only; per-voxel normals stay in the blocks (the
    renderer shades from hit faces and corner features, not stored normals).
    An 8^3-downsampled occupancy mip serves empty-space skipping.
    """

    SUP = 8

    def __init__(self, bx0: int, by0: int, nbx: int, nby: int,
                 occ: np.ndarray, cls: np.ndarray):
        self.bx0, self.by0 = bx0, by0
        self.nbx, self.nby = nbx, nby
        self.occ = occ
        self.cls = cls
        self.origin = np.array([bx0 * BLOCK_EDGE, by0 * BLOCK_EDGE, 0], dtype=np.int64)
        s = self.SUP
        nx, ny, nz = occ.shape
        self.sup = occ.reshape(nx // s, s, ny // s, s, nz // s, s).any(axis=(1, 3, 5))

    @property
    def size(self) -> tuple[int, int, int]:
        return self.occ.shape

    def occupied_count(self) -> int:
        return int(self.occ.sum())

    def contains(self, x: int, y: int, z: int) -> bool:
        ox, oy, _ = self.origin
        nx, ny, nz = self.occ.shape
        return 0 <= x - ox < nx and 0 <= y - oy < ny and 0 <= z < nz

    def is_occupied(self, x: int, y: int, z: int) -> bool:
        if not self.contains(x, y, z):
            return False
        ox, oy, _ = self.origin
        return bool(self.occ[x - ox, y - oy, z])

    def class_at(self, x: int, y: int, z: int) -> int:
        if not self.is_occupied(x, y, z):
            raise KeyError(f"voxel ({x},{y},{z}) is empty")
        ox, oy, _ = self.origin
        return int(self.cls[x - ox, y - oy, z])

    def corner_feature(self, cx: int, cy: int, cz: int) -> np.ndarray:
        """Feature vector of the lattice corner (cx, cy, cz): hashed from the
        owning voxel's class and the corner's position mod 8.

        Owner = lexicographically smallest occupied voxel incident to the
        corner.  Raises if no incident voxel is occupied.
        """
        ox, oy, _ = self.origin
        nx, ny, nz = self.occ.shape
        for vx in (cx - 1, cx):
            for vy in (cy - 1, cy):
                for vz in (cz - 1, cz):
                    ix, iy = vx - ox, vy - oy
                    if 0 <= ix < nx and 0 <= iy < ny and 0 <= vz < nz and self.occ[ix, iy, vz]:
                        return corner_feature_vector(int(self.cls[ix, iy, vz]), cx, cy, cz)
        raise KeyError(f"corner ({cx},{cy},{cz}) touches no occupied voxel")


def corner_feature_vector(class_id: int, cx: int, cy: int, cz: int) -> np.ndarray:
    u = hashing.hash_grid(_FEATURE_SEED, hashing.TAG_FEATURE, class_id,
                          cx & 7, cy & 7, cz & 7, np.arange(FEATURE_DIM))
    return hashing.sym_float_grid(u).astype(np.float32)


def assemble_world(blocks) -> VoxelWorld:
    """Merge completed blocks; their (bx, by) coords must tile a full
    rectangle with no duplicates or holes."""
    blocks = list(blocks)
    if not blocks:
        raise ValueError("no blocks")
    coords = [(b.bx, b.by) for b in blocks]
    if len(set(coords)) != len(coords):
        raise ValueError("duplicate block coordinates")
    bxs = [c[0] for c in coords]
    bys = [c[1] for c in coords]
    bx0, bx1 = min(bxs), max(bxs)
    by0, by1 = min(bys), max(bys)
    nbx, nby = bx1 - bx0 + 1, by1 - by0 + 1
    if len(blocks) != nbx * nby:
        missing = sorted(set((i, j) for i in range(bx0, bx1 + 1) for j in range(by0, by1 + 1))
                         - set(coords))
        raise ValueError(f"blocks do not tile a rectangle; missing {missing[:4]}")
    e = BLOCK_EDGE
    occ = np.zeros((nbx * e, nby * e, e), dtype=bool)
    cls = np.zeros((nbx * e, nby * e, e), dtype=np.uint8)
    for b in blocks:
        x0, y0 = (b.bx - bx0) * e, (b.by - by0) * e
        occ[x0:x0 + e, y0:y0 + e, :] = b.occ
        cls[x0:x0 + e, y0:y0 + e, :] = b.cls
    return VoxelWorld(bx0, by0, nbx, nby, occ, cls)


def to_point_cloud(world: VoxelWorld) -> np.ndarray:
    """(N, 3) float64 occupied-voxel centers, lexicographically sorted."""
    idx = np.argwhere(world.occ)  # C-order walk = sorted by (x, y, z)
    return idx.astype(np.float64) + world.origin.astype(np.float64) + 0.5


def export_points_xyz(world: VoxelWorld, path) -> int:
    pts = to_point_cloud(world)
    ox, oy, _ = world.origin
    idx = np.argwhere(world.occ)
    classes = world.cls[idx[:, 0], idx[:, 1], idx[:, 2]]
    with open(path, "w") as f:
        f.write("# x y z class\n")
        for (p, c) in zip(pts, classes):
            f.write(f"{p[0]} {p[1]} {p[2]} {int(c)}\n")
    return len(pts)


# --- .ioct / .iwrl serialization --------------------------------------------

_IOCT_MAGIC = b"IOCT"
_IOCT_VERSION = 1
_IOCT_HEADER = struct.Struct("<4sBBBBii")  # magic, version, depth, flags, reserved, bx, by
_LEAF = struct.Struct("<B3f")


class BlockParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def dumps_block(block: OctreeBlock) -> bytes:
    """Canonical sparse-octree encoding: DFS, child mask per internal node,
    children visited in ascending (x,y,z)-bit order, leaves = class + normal.

    Two blocks with equal content always serialize to identical bytes.
    """
    parts = [_IOCT_HEADER.pack(_IOCT_MAGIC, _IOCT_VERSION, OCTREE_DEPTH,
                               1 if block.occ.any() else 0, 0, block.bx, block.by)]

    occ, cls, nrm = block.occ, block.cls, block.nrm

    def write(x0: int, y0: int, z0: int, size: int) -> None:
        if size == 1:
            parts.append(_LEAF.pack(int(cls[x0, y0, z0]),
                                    float(nrm[x0, y0, z0, 0]),
                                    float(nrm[x0, y0, z0, 1]),
                                    float(nrm[x0, y0, z0, 2])))
            return
        h = size // 2
        mask = 0
        kids = []
        for k in range(8):
            xb, yb, zb = (k >> 2) & 1, (k >> 1) & 1, k & 1
            cx, cy, cz = x0 + xb * h, y0 + yb * h, z0 + zb * h
            if occ[cx:cx + h, cy:cy + h, cz:cz + h].any():
                mask |= 1 << k
                kids.append((cx, cy, cz))
        parts.append(bytes([mask]))
        for (cx, cy, cz) in kids:
            write(cx, cy, cz, h)

    if block.occ.any():
        write(0, 0, 0, BLOCK_EDGE)
    return b"".join(parts)


def loads_block(data: bytes) -> OctreeBlock:
    if len(data) < _IOCT_HEADER.size:
        raise BlockParseError("truncated header", len(data))
    magic, version, depth, flags, _, bx, by = _IOCT_HEADER.unpack_from(data)
    if magic != _IOCT_MAGIC:
        raise BlockParseError(f"bad magic {magic!r}", 0)
    if version != _IOCT_VERSION:
        raise BlockParseError(f"unsupported version {version}", 4)
    if depth != OCTREE_DEPTH:
        raise BlockParseError(f"unsupported depth {depth}", 5)
    blk = OctreeBlock(bx, by)
    pos = _IOCT_HEADER.size
    if not (flags & 1):
        if pos != len(data):
            raise BlockParseError("trailing bytes after empty block", pos)
        return blk

    def read(x0: int, y0: int, z0: int, size: int, pos: int) -> int:
        if size == 1:
            if pos + _LEAF.size > len(data):
                raise BlockParseError("truncated leaf", pos)
            c, nx, ny, nz = _LEAF.unpack_from(data, pos)
            blk.occ[x0, y0, z0] = True
            blk.cls[x0, y0, z0] = c
            blk.nrm[x0, y0, z0] = (nx, ny, nz)
            return pos + _LEAF.size
        if pos >= len(data):
            raise BlockParseError("truncated node", pos)
        mask = data[pos]
        if mask == 0:
            raise BlockParseError("non-canonical empty subtree", pos)
        pos += 1
        h = size // 2
        for k in range(8):
            if mask & (1 << k):
                xb, yb, zb = (k >> 2) & 1, (k >> 1) & 1, k & 1
                pos = read(x0 + xb * h, y0 + yb * h, z0 + zb * h, h, pos)
        return pos

    pos = read(0, 0, 0, BLOCK_EDGE, pos)
    if pos != len(data):
        raise BlockParseError("trailing bytes after octree", pos)
    return blk


def save_block(block: OctreeBlock, path) -> None:
    with open(path, "wb") as f:
        f.write(dumps_block(block))


def load_block(path) -> OctreeBlock:
    with open(path, "rb") as f:
        return loads_block(f.read())


_IWRL_MAGIC = b"IWRL"
_IWRL_VERSION = 1
_IWRL_HEADER = struct.Struct("<4sHBBiiII")  # magic, version, completion, reserved, bx0, by0, nbx, nby

COMPLETION_CODES = {"pillar": 0, "watertight": 1}
_COMPLETION_NAMES = {v: k for k, v in COMPLETION_CODES.items()}


def save_world_blocks(blocks, completion: str, path) -> None:
    """Bundle per-block octrees into one world file (offset table + blobs)."""
    blocks = sorted(blocks, key=lambda b: (b.by, b.bx))
    bx0 = min(b.bx for b in blocks)
    by0 = min(b.by for b in blocks)
    nbx = max(b.bx for b in blocks) - bx0 + 1
    nby = max(b.by for b in blocks) - by0 + 1
    if len(blocks) != nbx * nby:
        raise ValueError("blocks do not tile a rectangle")
    blobs = [dumps_block(b) for b in blocks]
    head = _IWRL_HEADER.pack(_IWRL_MAGIC, _IWRL_VERSION,
                             COMPLETION_CODES[completion], 0, bx0, by0, nbx, nby)
    table_at = len(head)
    first_blob = table_at + 8 * len(blobs)
    offsets = []
    at = first_blob
    for blob in blobs:
        offsets.append(at)
        at += len(blob)
    with open(path, "wb") as f:
        f.write(head)
        f.write(struct.pack(f"<{len(blobs)}Q", *offsets))
        for blob in blobs:
            f.write(blob)


def load_world_blocks(path) -> tuple[list[OctreeBlock], str]:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _IWRL_HEADER.size:
        raise BlockParseError("truncated world header", len(data))
    magic, version, completion, _, bx0, by0, nbx, nby = _IWRL_HEADER.unpack_from(data)
    if magic != _IWRL_MAGIC:
        raise BlockParseError(f"bad magic {magic!r}", 0)
    if version != _IWRL_VERSION:
        raise BlockParseError(f"unsupported version {version}", 4)
    n = nbx * nby
    off = _IWRL_HEADER.size
    if len(data) < off + 8 * n:
        raise BlockParseError("truncated offset table", len(data))
    offsets = list(struct.unpack_from(f"<{n}Q", data, off))
    blocks = []
    for k, at in enumerate(offsets):
        end = offsets[k + 1] if k + 1 < n else len(data)
        if at > end or end > len(data):
            raise BlockParseError("bad offset table", off + 8 * k)
        blocks.append(loads_block(data[at:end]))
    return blocks, _COMPLETION_NAMES.get(completion, f"unknown({completion})")


def load_world(path) -> VoxelWorld:
    blocks, _ = load_world_blocks(path)
    return assemble_world(blocks)
