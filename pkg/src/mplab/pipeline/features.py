"""Feature tables shared by the four networks.

Per-frame encodings (full grid, static grid, egomotion) are computed once
per ``(episode, t)`` and shared by every agent sample of that frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import BBox, apply_egomotion, apply_egomotion_array
from ..worldsim.maps import ALL_CLASSES, CROSSING, OFF_MAP, PEDESTRIAN, SIDEWALK, STATIC_CLASSES
from ..worldsim.render import downsample_onehot, encode_egomotion, mask_plane

TYPICAL_SIZE = {PEDESTRIAN: (3.0, 3.0)}
DEFAULT_SIZE = (5.0, 5.0)


def frame_anchor(frame_size: int, class_id: int) -> np.ndarray:
    """Box at the frame centre with the class's typical extent."""
    w, h = TYPICAL_SIZE.get(class_id, DEFAULT_SIZE)
    c = frame_size / 2
    return np.array([c, c, w, h])


def frame_scale(frame_size: int) -> np.ndarray:
    c = frame_size / 2
    return np.array([c, c, 4.0, 4.0])


SLOT_WINDOW = 3      # static-grid cells on each side of a slot's own cell


def slot_grid(n: int) -> tuple[int, int]:
    """``(columns, rows)`` of the most nearly square layout of ``n`` slots."""
    rows = max(r for r in range(1, math.isqrt(n) + 1) if n % r == 0)
    return n // rows, rows


def slot_centres(n: int, frame_size: int) -> np.ndarray:
    """``(n, 2)`` slot centres on a regular grid over the frame, row-major."""
    cols, rows = slot_grid(n)
    xs = (np.arange(cols) + 0.5) * frame_size / cols
    ys = (np.arange(rows) + 0.5) * frame_size / rows
    return np.array([(x, y) for y in ys for x in xs])


def slot_windows(static, n: int, frame_size: int, half: int | None = None) -> np.ndarray:
    """Static-grid window around each slot plus its normalised position: ``(B, n, D)``.

    Cells beyond the frame read as off-map.
    """
    half = SLOT_WINDOW if half is None else half
    static = np.atleast_2d(np.asarray(static, float))
    B, C = len(static), len(STATIC_CLASSES)
    cells = math.isqrt(static.shape[1] // C)
    g = np.pad(static.reshape(B, C, cells, cells), ((0, 0), (0, 0), (half, half), (half, half)))
    edge = np.ones((cells + 2 * half,) * 2, bool)
    edge[half:-half, half:-half] = False
    g[:, STATIC_CLASSES.index(OFF_MAP), edge] = 1.0
    centres = slot_centres(n, frame_size)
    cell = frame_size / cells
    out = []
    for cx, cy in centres:
        i, j = int(cy // cell), int(cx // cell)
        out.append(g[:, :, i:i + 2 * half + 1, j:j + 2 * half + 1].reshape(B, -1))
    pos = np.tile(centres / frame_size * 2 - 1, (B, 1, 1))
    return np.concatenate([np.stack(out, axis=1), pos], axis=2)


def observed_track(ep, agent_id: int, t: int, observe: int) -> np.ndarray:
    """Observed boxes of frames ``t-observe+1 .. t`` mapped into frame ``t``."""
    out = []
    for s in range(t - observe + 1, t + 1):
        b = ep.observed[s][agent_id]
        out.append(apply_egomotion(ep.egomotion(s, t), b).as_array() if s != t else b.as_array())
    return np.array(out)


def track_vector(track: np.ndarray, frame_size: int, rot: int = 0) -> np.ndarray:
    """Last box (normalised to the frame) and earlier boxes relative to it in the heading frame."""
    c = frame_size / 2
    last = track[-1]
    head = np.array([(last[0] - c) / c, (last[1] - c) / c, (last[2] - 3) / 2, (last[3] - 3) / 2])
    rel = to_heading_frame(track[:-1] - last, rot) / 8.0
    return np.concatenate([head, rel.ravel()])


def cv_anchor(track: np.ndarray, horizon: int, ego) -> np.ndarray:
    """Constant-velocity extrapolation of a frame-``t`` track, mapped into frame ``t+horizon``."""
    n = len(track)
    s = np.arange(n, dtype=float)
    if n > 1:
        slope, icpt = np.polyfit(s, track[:, :2], 1)
        xy = slope * (n - 1 + horizon) + icpt
    else:
        xy = track[-1, :2]
    wh = np.maximum(track[:, 2:].mean(axis=0), 0.0)
    return apply_egomotion(ego, BBox(float(xy[0]), float(xy[1]), float(wh[0]), float(wh[1]))).as_array()


# Quarter-turn rotations taking a travel direction onto +x, indexed by
# 0: +x, 1: +y, 2: -x, 3: -y.
ROTATIONS = np.array([[[1, 0], [0, 1]], [[0, 1], [-1, 0]],
                      [[-1, 0], [0, -1]], [[0, -1], [1, 0]]], dtype=float)


def heading_index(track: np.ndarray) -> int:
    """Axis direction of the track's overall displacement (0 when stationary)."""
    dx, dy = track[-1, :2] - track[0, :2]
    if abs(dx) >= abs(dy):
        return 0 if dx >= 0 else 2
    return 1 if dy > 0 else 3


def to_heading_frame(offsets, rot) -> np.ndarray:
    """Box offsets ``(..., 4)`` rotated so the agent travels along +x.

    ``rot`` broadcasts against the leading dimensions; width and height
    swap for odd rotations.
    """
    off = np.asarray(offsets, dtype=float)
    rot = np.broadcast_to(np.asarray(rot), off.shape[:-1])
    R = ROTATIONS[rot]
    xy = np.einsum("...ij,...j->...i", R, off[..., :2])
    wh = np.where((rot % 2 == 1)[..., None], off[..., 3:1:-1], off[..., 2:])
    return np.concatenate([xy, wh], axis=-1)


def from_heading_frame(offsets, rot) -> np.ndarray:
    """Inverse of :func:`to_heading_frame`."""
    return to_heading_frame(offsets, (4 - np.asarray(rot)) % 4)


@dataclass
class FrameTable:
    """Per-frame encodings for a list of ``(episode index, t)`` keys."""

    keys: list[tuple[int, int]]
    grid: np.ndarray            # (F, 8 * cells) full grid, float32
    static: np.ndarray          # (F, 6 * cells) static grid, float32
    ego: np.ndarray             # (F, 4) encoded egomotion t -> t + horizon
    egos: list                  # Egomotion objects t -> t + horizon
    horizon: int
    frame_size: int = 64
    prior: np.ndarray | None = None   # (F, N, 4) prior boxes in frame t + horizon
    index: dict = field(default_factory=dict)

    def __post_init__(self):
        self.index = {k: i for i, k in enumerate(self.keys)}


def build_frame_table(episodes, keys, horizon: int) -> FrameTable:
    grids, statics, egov, egos = [], [], [], []
    frame_size = episodes[0].config.frame_size if episodes else 64
    for ei, t in keys:
        ep = episodes[ei]
        fr = ep.frame(t)
        d = ep.config.downsample
        grids.append(downsample_onehot(fr.full.labels, d, ALL_CLASSES).ravel())
        statics.append(downsample_onehot(fr.static.labels, d, STATIC_CLASSES).ravel())
        e = ep.egomotion(t, t + horizon)
        egos.append(e)
        egov.append(encode_egomotion(e))
    return FrameTable(list(keys), np.array(grids, np.float32), np.array(statics, np.float32),
                      np.array(egov).reshape(-1, 4), egos, horizon, frame_size)


PATCH_HALF = 20
PATCH_CELL = 2
PATCH_CLASSES = (SIDEWALK, CROSSING)


def local_patch(ep, t: int, center, rot: int = 0, half: int = PATCH_HALF, cell: int = PATCH_CELL,
                classes=PATCH_CLASSES) -> np.ndarray:
    """Class fractions of the static map on a square window centred on ``center`` in frame ``t``.

    The window is laid out in the heading frame given by ``rot``.  Each of
    the ``(2 * half / cell) ** 2`` cells is sampled at 2x2 points.
    """
    n = 2 * half // cell
    sub = (np.arange(2 * n) + 0.5) * (cell / 2) - half
    gx, gy = np.meshgrid(sub, sub, indexing="xy")
    # heading-frame offsets back to frame offsets: R^T p
    pts = np.stack([gx, gy], axis=-1) @ ROTATIONS[rot] + np.asarray(center[:2], float)
    w = ep.poses[t].inverse().apply_points(pts)
    xi = np.floor(w[..., 0]).astype(int)
    yi = np.floor(w[..., 1]).astype(int)
    world = ep.world
    inside = (xi >= 0) & (xi < world.width) & (yi >= 0) & (yi < world.height)
    lab = np.full(xi.shape, OFF_MAP, dtype=np.int8)
    lab[inside] = world.labels[yi[inside], xi[inside]]
    onehot = lab[None] == np.asarray(classes, dtype=np.int8)[:, None, None]
    return onehot.reshape(len(classes), n, 2, n, 2).mean(axis=(2, 4)).ravel()


def agent_masks(ep, agent_id: int, t: int, observe: int) -> np.ndarray:
    cfg = ep.config
    return np.concatenate([mask_plane(ep.observed[s][agent_id], cfg.frame_size, cfg.downsample).ravel()
                           for s in range(t - observe + 1, t + 1)])


def visible_through(ep, agent_id: int, t0: int, t1: int) -> bool:
    thr = ep.config.visibility
    return all(ep.visible(agent_id, s) >= thr for s in range(t0, t1 + 1))


def warp_prior(ego_list, boxes) -> np.ndarray:
    """Apply each frame's egomotion to its box set: ``(F, N, 4)``."""
    return np.array([apply_egomotion_array(e, b) for e, b in zip(ego_list, boxes)])
