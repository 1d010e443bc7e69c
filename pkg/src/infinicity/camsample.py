"""Walkable-ground masks and collision-checked camera pose sampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .satmap import CdnTile, Palette, default_palette
from .voxelworld import VoxelWorld

EYE_HEIGHT_M = 1.7
EROSION_ITERATIONS = 3
MIN_COMPONENT_PX = 400
MAX_SAMPLE_ATTEMPTS = 1000

_CROSS = ndimage.generate_binary_structure(2, 1)  # 4-neighborhood


class NoValidPoseError(RuntimeError):
    pass


@dataclass
class WalkableMask:
    """Boolean mask over a map rect ([y, x] like tile planes) plus a record
    of how it was produced."""

    x: int
    y: int
    mask: np.ndarray
    provenance: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.mask = np.ascontiguousarray(self.mask, dtype=bool)

    @property
    def count(self) -> int:
        return int(self.mask.sum())


def label_walkable(tile: CdnTile, palette: Palette | None = None) -> WalkableMask:
    """Ground-level walkable pixels: walkable class AND height 0."""
    palette = palette or default_palette()
    walk_ids = np.array(sorted(palette.walkable_ids()), dtype=np.uint8)
    mask = np.isin(tile.category, walk_ids) & (tile.height_m == 0)
    return WalkableMask(tile.x, tile.y, mask, ["label_walkable:class&height==0"])


def refine_mask(wmask: WalkableMask, min_component_px: int = MIN_COMPONENT_PX,
                erosion_iterations: int = EROSION_ITERATIONS) -> WalkableMask:
    """Pull the mask away from obstacles and drop fragments.

    Erodes with a 4-neighborhood cross (pixels outside the rect count as
    unwalkable), then removes 4-connected components smaller than
    min_component_px.  The result is always a subset of the input.
    """
    m = ndimage.binary_erosion(wmask.mask, structure=_CROSS,
                               iterations=erosion_iterations, border_value=0)
    labels, n = ndimage.label(m, structure=_CROSS)
    if n:
        sizes = np.bincount(labels.ravel())
        keep = sizes >= min_component_px
        keep[0] = False
        m = keep[labels]
    prov = wmask.provenance + [f"erode:cross x{erosion_iterations}",
                               f"prune:<{min_component_px}px"]
    return WalkableMask(wmask.x, wmask.y, m, prov)


@dataclass
class CameraPose:
    position: np.ndarray  # (3,) float64, meters; z up
    yaw_deg: float        # about +z, 0 = +x
    pitch_deg: float      # positive looks down
    roll_deg: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)

    def to_dict(self) -> dict:
        return {"x": float(self.position[0]), "y": float(self.position[1]),
                "z": float(self.position[2]), "yaw_deg": self.yaw_deg,
                "pitch_deg": self.pitch_deg, "roll_deg": self.roll_deg}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(np.array([d["x"], d["y"], d["z"]]),
                   float(d["yaw_deg"]), float(d["pitch_deg"]), float(d["roll_deg"]))


def _column_top(world: VoxelWorld, ix: int, iy: int) -> int:
    ox, oy, _ = world.origin
    col = world.occ[ix - ox, iy - oy, :]
    if not col.any():
        return -1
    return int(len(col) - 1 - np.argmax(col[::-1]))


def sample_cameras(wmask: WalkableMask, world: VoxelWorld, n: int, seed: int,
                   eye_height_m: float = EYE_HEIGHT_M,
                   max_attempts: int = MAX_SAMPLE_ATTEMPTS) -> list[CameraPose]:
    """Draw n poses on the walkable mask with uniform view angles.

    Per pose: a uniform mask pixel with in-pixel jitter, eye at the ground
    surface plus eye_height_m, yaw/roll uniform in [0, 360), pitch uniform in
    [0, 45] degrees downward.  Poses whose eye voxel (or the voxel above it)
    is occupied are rejected and redrawn, up to max_attempts per pose.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    pix = np.argwhere(wmask.mask)  # rows (py, px), tile-local
    if len(pix) == 0:
        raise NoValidPoseError("walkable mask is empty")
    rng = np.random.Generator(np.random.PCG64(seed))
    poses = []
    for _ in range(n):
        pose = None
        for _attempt in range(max_attempts):
            k = int(rng.integers(len(pix)))
            py, px = pix[k]
            ju, jv = rng.random(2)
            x = wmask.x + px + ju
            y = wmask.y + py + jv
            ix, iy = int(np.floor(x)), int(np.floor(y))
            yaw = float(rng.random() * 360.0)
            pitch = float(rng.random() * 45.0)
            roll = float(rng.random() * 360.0)
            top = _column_top(world, ix, iy)
            z = (top + 1) + eye_height_m
            iz = int(np.floor(z))
            if world.is_occupied(ix, iy, iz) or world.is_occupied(ix, iy, iz + 1):
                continue
            pose = CameraPose(np.array([x, y, z]), yaw, pitch, roll)
            break
        if pose is None:
            raise NoValidPoseError(f"no collision-free pose found in {max_attempts} attempts")
        poses.append(pose)
    return poses


def sample_camera(wmask: WalkableMask, world: VoxelWorld, seed: int,
                  eye_height_m: float = EYE_HEIGHT_M,
                  max_attempts: int = MAX_SAMPLE_ATTEMPTS) -> CameraPose:
    return sample_cameras(wmask, world, 1, seed, eye_height_m, max_attempts)[0]
