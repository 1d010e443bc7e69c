"""Category/height/normal raster tiles and their cleanup + serialization.

A map tile carries three aligned planes over the same pixel grid: a
categorical class id per pixel, an integer height in meters, and a unit
surface normal.  Classes are defined by a palette that owns the id->color
mapping used by the categorical codec and the renderer.
"""

from __future__ import annotations

import colorsys
import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

# class ids, frozen: serialized files and the voxel stage depend on them
VOID = 0
TERRAIN = 1
ROAD = 2
GREENSPACE = 3
WATER = 4
BUILDING = 5
TREE = 6
BRIDGE = 7
TRUNK = 8
SKY = 9
PAVEMENT = 10
RAIL = 11

WALKABLE_CLASSES = frozenset({TERRAIN, ROAD, GREENSPACE, BRIDGE, PAVEMENT})

# classes the map synthesizer may emit (void/trunk/sky are reserved for
# empty columns, below-canopy fill, and ray misses respectively)
SYNTH_CLASSES = (TERRAIN, ROAD, GREENSPACE, WATER, BUILDING, TREE, BRIDGE, PAVEMENT, RAIL)

MAX_HEIGHT_M = 63


@dataclass(frozen=True)
class PaletteEntry:
    class_id: int
    name: str
    color: tuple[float, float, float]  # linear rgb in [0,1]
    walkable: bool


class Palette:
    """Ordered set of classes with distinct colors; the codec works per-entry.

    Entries are kept sorted by class id so nearest-color ties resolve to the
    lowest id by construction.
    """

    def __init__(self, entries: list[PaletteEntry]):
        entries = sorted(entries, key=lambda e: e.class_id)
        ids = [e.class_id for e in entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate class ids in palette")
        if not entries:
            raise ValueError("palette must contain at least one class")
        for e in entries:
            if not all(0.0 <= c <= 1.0 for c in e.color):
                raise ValueError(f"color out of range for class {e.class_id}")
        self.entries = tuple(entries)
        self._colors = np.array([e.color for e in entries], dtype=np.float64)
        self._ids = np.array(ids, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, Palette) and self.entries == other.entries

    def __hash__(self):
        return hash(self.entries)

    @property
    def class_ids(self) -> np.ndarray:
        return self._ids

    @property
    def colors(self) -> np.ndarray:
        """(K, 3) float64, row k = color of entries[k]."""
        return self._colors

    def entry(self, class_id: int) -> PaletteEntry:
        for e in self.entries:
            if e.class_id == class_id:
                return e
        raise KeyError(f"no class {class_id} in palette")

    def color_of(self, class_id: int) -> np.ndarray:
        return np.array(self.entry(class_id).color, dtype=np.float64)

    def walkable_ids(self) -> frozenset[int]:
        return frozenset(e.class_id for e in self.entries if e.walkable)

    def subset(self, class_ids) -> "Palette":
        wanted = set(class_ids)
        kept = [e for e in self.entries if e.class_id in wanted]
        if len(kept) != len(wanted):
            missing = wanted - {e.class_id for e in kept}
            raise KeyError(f"classes not in palette: {sorted(missing)}")
        return Palette(kept)

    def min_color_separation(self) -> float:
        """Smallest pairwise euclidean color distance; the codec's noise margin."""
        c = self._colors
        d2 = np.sum((c[:, None, :] - c[None, :, :]) ** 2, axis=2)
        d2[np.diag_indices(len(c))] = np.inf
        return float(np.sqrt(d2.min()))

    def content_hash(self) -> int:
        """Stable uint64 digest of the canonical text serialization."""
        digest = hashlib.sha256(dumps_palette(self).encode()).digest()
        return struct.unpack("<Q", digest[:8])[0]


def _ring_color(slot: int, n: int = 12, s: float = 0.78, v: float = 0.92) -> tuple[float, float, float]:
    r, g, b = colorsys.hsv_to_rgb(slot / n, s, v)
    return (r, g, b)


def default_palette() -> Palette:
    """Twelve classes on a hue ring; slots chosen so semantic neighbors
    (road/pavement, greenspace/tree) stay visually apart."""
    spec = [
        (VOID, "void", 9, False),
        (TERRAIN, "terrain", 2, True),
        (ROAD, "road", 6, True),
        (GREENSPACE, "greenspace", 4, True),
        (WATER, "water", 8, False),
        (BUILDING, "building", 1, False),
        (TREE, "tree", 5, False),
        (BRIDGE, "bridge", 10, True),
        (TRUNK, "trunk", 11, False),
        (SKY, "sky", 7, False),
        (PAVEMENT, "pavement", 3, True),
        (RAIL, "rail", 0, False),
    ]
    return Palette([PaletteEntry(cid, name, _ring_color(slot), walk) for cid, name, slot, walk in spec])


def dumps_palette(palette: Palette) -> str:
    lines = ["# infinicity palette v1", "# id name r g b walkable"]
    for e in palette.entries:
        r, g, b = e.color
        lines.append(f"{e.class_id} {e.name} {r!r} {g!r} {b!r} {int(e.walkable)}")
    return "\n".join(lines) + "\n"


def loads_palette(text: str) -> Palette:
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"palette line {lineno}: expected 6 fields, got {len(parts)}")
        cid, name = int(parts[0]), parts[1]
        color = (float(parts[2]), float(parts[3]), float(parts[4]))
        entries.append(PaletteEntry(cid, name, color, bool(int(parts[5]))))
    return Palette(entries)


def save_palette(palette: Palette, path) -> None:
    with open(path, "w") as f:
        f.write(dumps_palette(palette))


def load_palette(path) -> Palette:
    with open(path) as f:
        return loads_palette(f.read())


@dataclass
class CdnTile:
    """Category + height + normal planes over a pixel rect.

    category: (h, w) uint8; height_m: (h, w) uint16; normal: (h, w, 3) float32
    unit vectors.  x/y locate the tile's top-left pixel in map coordinates.
    """

    x: int
    y: int
    category: np.ndarray
    height_m: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        self.category = np.ascontiguousarray(self.category, dtype=np.uint8)
        self.height_m = np.ascontiguousarray(self.height_m, dtype=np.uint16)
        self.normal = np.ascontiguousarray(self.normal, dtype=np.float32)
        h, w = self.category.shape
        if self.height_m.shape != (h, w) or self.normal.shape != (h, w, 3):
            raise ValueError("tile planes must share one resolution")

    @property
    def width(self) -> int:
        return self.category.shape[1]

    @property
    def height(self) -> int:
        return self.category.shape[0]

    def validate(self, palette: Palette | None = None) -> None:
        if self.height_m.max(initial=0) > MAX_HEIGHT_M:
            raise ValueError(f"height plane exceeds {MAX_HEIGHT_M} m")
        norms = np.linalg.norm(self.normal.astype(np.float64), axis=2)
        if not np.all(np.abs(norms - 1.0) <= 1e-3):
            raise ValueError("normal plane contains non-unit vectors")
        if palette is not None:
            known = set(int(i) for i in palette.class_ids)
            present = set(int(c) for c in np.unique(self.category))
            if not present <= known:
                raise ValueError(f"unknown class ids {sorted(present - known)}")

    def crop(self, x: int, y: int, w: int, h: int) -> "CdnTile":
        """Sub-tile in map coordinates; must lie inside this tile."""
        ox, oy = x - self.x, y - self.y
        if ox < 0 or oy < 0 or ox + w > self.width or oy + h > self.height:
            raise ValueError("crop outside tile")
        return CdnTile(x, y, self.category[oy:oy + h, ox:ox + w],
                       self.height_m[oy:oy + h, ox:ox + w],
                       self.normal[oy:oy + h, ox:ox + w])


def encode_category(category: np.ndarray, palette: Palette) -> np.ndarray:
    """Class ids -> (h, w, 3) float64 palette colors."""
    category = np.asarray(category)
    lut = np.full(int(palette.class_ids.max()) + 1, -1, dtype=np.int64)
    lut[palette.class_ids] = np.arange(len(palette))
    if category.size and (category.max() >= len(lut) or np.any(lut[category] < 0)):
        raise ValueError("category plane contains ids outside the palette")
    return palette.colors[lut[category]]


def decode_category(color: np.ndarray, palette: Palette) -> np.ndarray:
    """Nearest palette color per pixel; ties go to the lowest class id.

    Pure per-pixel map, so any spatial batching decodes identically.
    """
    color = np.asarray(color, dtype=np.float64)
    pal = palette.colors
    # per-class squared distance, accumulated channelwise to keep the float
    # op sequence independent of the input's shape
    dists = np.empty(pal.shape[:1] + color.shape[:-1], dtype=np.float64)
    for k in range(len(pal)):
        d = (color[..., 0] - pal[k, 0]) ** 2
        d = d + (color[..., 1] - pal[k, 1]) ** 2
        d = d + (color[..., 2] - pal[k, 2]) ** 2
        dists[k] = d
    best = np.argmin(dists, axis=0)  # first minimum = lowest class id
    return palette.class_ids[best].astype(np.uint8)


@dataclass(frozen=True)
class BilateralPass:
    radius_px: int
    sigma_space_px: float
    sigma_value_m: float

    def __post_init__(self):
        if self.radius_px < 1:
            raise ValueError("bilateral radius must be >= 1")
        if self.sigma_space_px <= 0 or self.sigma_value_m <= 0:
            raise ValueError("bilateral sigmas must be positive")


# wide smoothing with a tight value gate first, then a small kernel that
# tolerates large steps; tuned to kill speckle but keep building edges
DEFAULT_CLEAN_SCHEDULE = (
    BilateralPass(radius_px=7, sigma_space_px=3.0, sigma_value_m=4.0),
    BilateralPass(radius_px=2, sigma_space_px=1.0, sigma_value_m=24.0),
)


def bilateral_filter(height_m: np.ndarray, passes=DEFAULT_CLEAN_SCHEDULE) -> np.ndarray:
    """Edge-preserving height smoothing; output re-rounded to integer meters.

    Gaussian weights in both space and value; edges are handled by clamping
    the window to the image (no padding values are invented).
    """
    out = np.asarray(height_m, dtype=np.float64)
    for p in passes:
        out = _bilateral_pass(out, p)
    out = np.floor(out + 0.5)  # round half up
    return np.clip(out, 0, MAX_HEIGHT_M).astype(np.uint16)


def _bilateral_pass(values: np.ndarray, p: BilateralPass) -> np.ndarray:
    h, w = values.shape
    r = p.radius_px
    inv2ss = 1.0 / (2.0 * p.sigma_space_px**2)
    inv2sv = 1.0 / (2.0 * p.sigma_value_m**2)
    num = np.zeros((h, w), dtype=np.float64)
    den = np.zeros((h, w), dtype=np.float64)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            ws = np.exp(-(dx * dx + dy * dy) * inv2ss)
            ys0, ys1 = max(0, -dy), min(h, h - dy)
            xs0, xs1 = max(0, -dx), min(w, w - dx)
            shifted = values[ys0 + dy:ys1 + dy, xs0 + dx:xs1 + dx]
            center = values[ys0:ys1, xs0:xs1]
            wv = np.exp(-((shifted - center) ** 2) * inv2sv) * ws
            num[ys0:ys1, xs0:xs1] += wv * shifted
            den[ys0:ys1, xs0:xs1] += wv
    return num / den


def clean_tile(tile: CdnTile, passes=DEFAULT_CLEAN_SCHEDULE) -> CdnTile:
    """Tile with the height plane run through the bilateral schedule."""
    return CdnTile(tile.x, tile.y, tile.category.copy(),
                   bilateral_filter(tile.height_m, passes), tile.normal.copy())


# --- .icdn serialization ---------------------------------------------------

_ICDN_MAGIC = b"ICDN"
_ICDN_VERSION = 1
_ICDN_HEADER = struct.Struct("<4sHHiiIIQ")  # magic, version, reserved, x, y, w, h, palette hash
_NORMAL_SCALE = 32767.0


class TileFormatError(ValueError):
    pass


def dumps_tile(tile: CdnTile, palette: Palette) -> bytes:
    head = _ICDN_HEADER.pack(_ICDN_MAGIC, _ICDN_VERSION, 0, tile.x, tile.y,
                             tile.width, tile.height, palette.content_hash())
    q = np.clip(np.floor(tile.normal.astype(np.float64) * _NORMAL_SCALE + 0.5),
                -32767, 32767).astype("<i2")
    return b"".join([
        head,
        tile.category.astype("<u1").tobytes(),
        tile.height_m.astype("<u2").tobytes(),
        q.tobytes(),
    ])


def loads_tile(data: bytes, palette: Palette | None = None) -> CdnTile:
    if len(data) < _ICDN_HEADER.size:
        raise TileFormatError("truncated header")
    magic, version, _, x, y, w, h, pal_hash = _ICDN_HEADER.unpack_from(data)
    if magic != _ICDN_MAGIC:
        raise TileFormatError(f"bad magic {magic!r}")
    if version != _ICDN_VERSION:
        raise TileFormatError(f"unsupported version {version}")
    if w <= 0 or h <= 0:
        raise TileFormatError("empty tile dimensions")
    if palette is not None and pal_hash != palette.content_hash():
        raise TileFormatError("palette hash mismatch")
    n = w * h
    need = _ICDN_HEADER.size + n * (1 + 2 + 6)
    if len(data) != need:
        raise TileFormatError(f"expected {need} bytes, got {len(data)}")
    off = _ICDN_HEADER.size
    cat = np.frombuffer(data, "<u1", n, off).reshape(h, w)
    off += n
    hgt = np.frombuffer(data, "<u2", n, off).reshape(h, w)
    off += 2 * n
    q = np.frombuffer(data, "<i2", 3 * n, off).reshape(h, w, 3)
    nrm = (q.astype(np.float64) / _NORMAL_SCALE).astype(np.float32)
    return CdnTile(x, y, cat.copy(), hgt.copy(), nrm)


def save_tile(tile: CdnTile, path, palette: Palette) -> None:
    with open(path, "wb") as f:
        f.write(dumps_tile(tile, palette))


def load_tile(path, palette: Palette | None = None) -> CdnTile:
    with open(path, "rb") as f:
        return loads_tile(f.read(), palette)
