"""Semantic grid maps: a connected road network with flanking sidewalks,
zebra crossings at junctions, buildings and a few obstructions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROAD, SIDEWALK, CROSSING, BUILDING, OBSTRUCTION, OFF_MAP = range(6)
PEDESTRIAN, VEHICLE = 6, 7

STATIC_CLASSES = (ROAD, SIDEWALK, CROSSING, BUILDING, OBSTRUCTION, OFF_MAP)
ALL_CLASSES = STATIC_CLASSES + (PEDESTRIAN, VEHICLE)
CLASS_NAMES = {
    ROAD: "road", SIDEWALK: "sidewalk", CROSSING: "crossing", BUILDING: "building",
    OBSTRUCTION: "obstruction", OFF_MAP: "off-map", PEDESTRIAN: "pedestrian", VEHICLE: "vehicle",
}
AGENT_CLASS_IDS = {"pedestrian": PEDESTRIAN, "vehicle": VEHICLE}

ROAD_WIDTH = 8
SIDEWALK_WIDTH = 4
MIN_BLOCK = 12
MIN_MAP_SIZE = 32


@dataclass(frozen=True)
class HRoad:
    y0: int


@dataclass(frozen=True)
class VRoad:
    x0: int
    ys: int  # first road row (inclusive)
    ye: int  # last road row (exclusive)


@dataclass(frozen=True)
class MapLayout:
    width: int
    height: int
    hroads: tuple[HRoad, ...]
    vroads: tuple[VRoad, ...]


@dataclass
class SemanticGrid:
    """``height x width`` grid of class ids, row-major (``labels[y, x]``).

    Static grids only hold the six scene classes; full grids additionally
    mark agent cells with ``PEDESTRIAN`` / ``VEHICLE``.
    """

    width: int
    height: int
    labels: np.ndarray
    layout: MapLayout | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("grid dimensions must be positive")
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.labels.shape != (self.height, self.width):
            raise ValueError(f"labels shape {self.labels.shape} != ({self.height}, {self.width})")
        if self.labels.min() < 0 or self.labels.max() > VEHICLE:
            raise ValueError("unknown class id in grid")

    def __eq__(self, other):
        if not isinstance(other, SemanticGrid):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and np.array_equal(
            self.labels, other.labels)

    @property
    def is_static(self) -> bool:
        return bool(self.labels.max() < PEDESTRIAN)

    def label_at(self, x: float, y: float) -> int:
        """Class of the cell containing point ``(x, y)``; off-map outside."""
        if not (0 <= x < self.width and 0 <= y < self.height):
            return OFF_MAP
        return int(self.labels[int(y), int(x)])


def _place_strips(rng, extent, max_count):
    """Pick road start offsets with room for sidewalks and building blocks."""
    corridor = ROAD_WIDTH + 2 * SIDEWALK_WIDTH
    lo, hi = SIDEWALK_WIDTH + 1, extent - ROAD_WIDTH - SIDEWALK_WIDTH - 1
    fit = 1 + (hi - lo) // (corridor + MIN_BLOCK)
    count = int(rng.integers(1, min(fit, max_count) + 1))
    for _ in range(200):
        pos = np.sort(rng.integers(lo, hi + 1, size=count))
        if np.all(np.diff(pos) >= corridor + MIN_BLOCK):
            return [int(p) for p in pos]
    return [int(lo + (hi - lo) // 2)]


def generate_layout(seed: int, width: int, height: int) -> MapLayout:
    if width < MIN_MAP_SIZE or height < MIN_MAP_SIZE:
        raise ValueError(f"map must be at least {MIN_MAP_SIZE}x{MIN_MAP_SIZE}, got {width}x{height}")
    rng = np.random.default_rng([seed, 0x5EED])
    hys = _place_strips(rng, height, 3)
    vxs = _place_strips(rng, width, 3)
    hroads = tuple(HRoad(y) for y in hys)
    vroads = []
    for i, x in enumerate(vxs):
        # the first vertical spans the map so every horizontal road is connected
        kind = 0 if i == 0 else int(rng.integers(0, 3))
        if kind == 0:
            vroads.append(VRoad(x, 0, height))
        else:
            anchor = hroads[int(rng.integers(0, len(hroads)))]
            if kind == 1:
                vroads.append(VRoad(x, 0, anchor.y0))
            else:
                vroads.append(VRoad(x, anchor.y0 + ROAD_WIDTH, height))
    return MapLayout(width, height, hroads, tuple(vroads))


def junctions(layout: MapLayout):
    """Yield ``(hroad, vroad, north_arm, south_arm)`` for every junction."""
    for h in layout.hroads:
        for v in layout.vroads:
            north = v.ys < h.y0
            south = v.ye > h.y0 + ROAD_WIDTH
            touches = v.ys <= h.y0 + ROAD_WIDTH and v.ye >= h.y0
            if touches and (north or south):
                yield h, v, north, south


def paint_layout(layout: MapLayout, seed: int) -> np.ndarray:
    W, H, SW, RW = layout.width, layout.height, SIDEWALK_WIDTH, ROAD_WIDTH
    g = np.full((H, W), BUILDING, dtype=np.int8)
    for h in layout.hroads:
        g[h.y0 - SW:h.y0, :] = SIDEWALK
        g[h.y0 + RW:h.y0 + RW + SW, :] = SIDEWALK
    for v in layout.vroads:
        g[v.ys:v.ye, v.x0 - SW:v.x0] = SIDEWALK
        g[v.ys:v.ye, v.x0 + RW:v.x0 + RW + SW] = SIDEWALK
    for h in layout.hroads:
        g[h.y0:h.y0 + RW, :] = ROAD
    for v in layout.vroads:
        g[v.ys:v.ye, v.x0:v.x0 + RW] = ROAD
    half = SW // 2
    for h, v, north, south in junctions(layout):
        # two-cell crossing strips centred on the sidewalk walking lines
        if north:
            yc = h.y0 - half
            g[yc - 1:yc + 1, v.x0:v.x0 + RW] = CROSSING
        if south:
            yc = h.y0 + RW + half
            g[yc - 1:yc + 1, v.x0:v.x0 + RW] = CROSSING
        if north and south:
            xc = v.x0 - half
            g[h.y0:h.y0 + RW, xc - 1:xc + 1] = CROSSING
            xc = v.x0 + RW + half
            g[h.y0:h.y0 + RW, xc - 1:xc + 1] = CROSSING

    rng = np.random.default_rng([seed, 0x0B57])
    bld = np.argwhere(g == BUILDING)
    if len(bld):
        near = []
        for y, x in bld:
            y0, y1 = max(y - 1, 0), min(y + 2, H)
            x0, x1 = max(x - 1, 0), min(x + 2, W)
            if (g[y0:y1, x0:x1] == SIDEWALK).any():
                near.append((y, x))
        n_obs = max(1, (W * H) // 2000)
        if near:
            picks = rng.choice(len(near), size=min(n_obs, len(near)), replace=False)
            for p in sorted(int(i) for i in picks):
                y, x = near[p]
                sh, sw = int(rng.integers(2, 4)), int(rng.integers(2, 4))
                block = g[y:y + sh, x:x + sw]
                block[block == BUILDING] = OBSTRUCTION
    return g


def generate_map(seed: int, width: int, height: int) -> SemanticGrid:
    """Deterministic static map for ``seed``; rejects sizes below 32."""
    layout = generate_layout(seed, width, height)
    return SemanticGrid(width, height, paint_layout(layout, seed), layout)


# run-length encoding used by the episode file format

def rle_encode(labels: np.ndarray) -> list[list[int]]:
    flat = np.asarray(labels).ravel()
    if flat.size == 0:
        return []
    change = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate([[0], change])
    lengths = np.diff(np.concatenate([starts, [flat.size]]))
    return [[int(flat[s]), int(n)] for s, n in zip(starts, lengths)]


def rle_decode(runs, width: int, height: int) -> np.ndarray:
    vals = np.array([r[0] for r in runs], dtype=np.int8)
    lens = np.array([r[1] for r in runs], dtype=np.int64)
    flat = np.repeat(vals, lens)
    if flat.size != width * height:
        raise ValueError(f"RLE covers {flat.size} cells, expected {width * height}")
    return flat.reshape(height, width)
