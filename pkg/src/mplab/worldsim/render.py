"""Frame rasterisation and network input encoding."""

from __future__ import annotations

import math

import numpy as np

from ..geometry import BBox
from .maps import OFF_MAP, PEDESTRIAN, STATIC_CLASSES, ALL_CLASSES, VEHICLE, SemanticGrid

EGO_SCALE = np.array([1 / 8, 1 / 8, 20.0, 20.0])


def _frame_labels(episode, t: int) -> np.ndarray:
    """Static world labels resampled into camera frame ``t`` (cell centres)."""
    F = episode.config.frame_size
    inv = episode.poses[t].inverse()
    u = np.arange(F) + 0.5
    pts = np.stack(np.meshgrid(u, u, indexing="xy"), axis=-1)  # [y, x, 2]
    w = inv.apply_points(pts)
    xi = np.floor(w[..., 0]).astype(int)
    yi = np.floor(w[..., 1]).astype(int)
    world = episode.world
    inside = (xi >= 0) & (xi < world.width) & (yi >= 0) & (yi < world.height)
    out = np.full((F, F), OFF_MAP, dtype=np.int8)
    out[inside] = world.labels[yi[inside], xi[inside]]
    return out


def box_cells(b: BBox, width: int, height: int) -> np.ndarray:
    """Boolean ``[height, width]`` mask of unit cells overlapping the box interior."""
    x0, y0, x1, y1 = b.corners()
    cx = np.arange(width)
    cy = np.arange(height)
    mx = (cx + 1 > x0) & (cx < x1)
    my = (cy + 1 > y0) & (cy < y1)
    return my[:, None] & mx[None, :]


def render_frame(episode, t: int):
    from .episode import Frame
    F = episode.config.frame_size
    static = _frame_labels(episode, t)
    full = static.copy()
    u = np.arange(F) + 0.5
    boxes: dict[int, dict[int, BBox]] = {PEDESTRIAN: {}, VEHICLE: {}}
    # vehicles first so pedestrians on crossings stay visible
    agents = sorted(episode.states[t].values(), key=lambda a: (a.class_id != VEHICLE, a.id))
    for a in agents:
        b = episode.true_box(a.id, t)
        x0, y0, x1, y1 = b.corners()
        mx = (u >= x0) & (u < x1)
        my = (u >= y0) & (u < y1)
        full[np.ix_(my, mx)] = a.class_id
        if a.id in episode.observed[t]:
            boxes[a.class_id][a.id] = episode.observed[t][a.id]
    ego = episode.egomotion(t, t + 1) if t + 1 < episode.length else None
    return Frame(t, SemanticGrid(F, F, full), SemanticGrid(F, F, static), boxes, ego)


def downsample_onehot(labels: np.ndarray, factor: int, classes=ALL_CLASSES) -> np.ndarray:
    """Per-class cell fractions on a grid coarsened by ``factor``: ``[C, H/f, W/f]``."""
    H, W = labels.shape
    if H % factor or W % factor:
        raise ValueError(f"grid {W}x{H} not divisible by {factor}")
    onehot = (labels[None] == np.asarray(classes, dtype=labels.dtype)[:, None, None]).astype(float)
    C = len(classes)
    return onehot.reshape(C, H // factor, factor, W // factor, factor).mean(axis=(2, 4))


def mask_plane(b: BBox, frame_size: int, factor: int) -> np.ndarray:
    """Binary coarse-grid mask of cells overlapping the downsampled box."""
    n = frame_size // factor
    small = BBox(b.x / factor, b.y / factor, b.w / factor, b.h / factor)
    return box_cells(small, n, n).astype(float)


def encode_egomotion(e) -> np.ndarray:
    return np.array([e.tx, e.ty, e.theta, math.log(e.scale)]) * EGO_SCALE


def static_features(episode, t: int) -> np.ndarray:
    """Downsampled one-hot static grid of frame ``t`` (reachability prior input)."""
    cfg = episode.config
    return downsample_onehot(episode.frame(t).static.labels, cfg.downsample, STATIC_CLASSES).ravel()


def render_inputs(episode, agent_id, t: int, observe: int, horizon: int = 15) -> np.ndarray:
    """Flat feature vector for frame ``t``.

    Layout: one-hot full grid of frame ``t`` (8 classes, downsampled), then
    one object mask plane for each of frames ``t-observe+1 .. t`` (omitted
    when ``agent_id`` is None), then the encoded egomotion ``t -> t+horizon``.
    """
    cfg = episode.config
    if observe < 1 or t - observe < 0:
        raise ValueError(f"observation window of {observe} steps does not fit before t={t}")
    if t + horizon >= episode.length:
        raise ValueError(f"horizon {horizon} from t={t} exceeds episode length {episode.length}")
    parts = [downsample_onehot(episode.frame(t).full.labels, cfg.downsample).ravel()]
    if agent_id is not None:
        for s in range(t - observe + 1, t + 1):
            if episode.visible(agent_id, s) < cfg.visibility:
                raise ValueError(f"agent {agent_id} not visible at step {s}")
            parts.append(mask_plane(episode.observed[s][agent_id], cfg.frame_size,
                                    cfg.downsample).ravel())
    parts.append(encode_egomotion(episode.egomotion(t, t + horizon)))
    return np.concatenate(parts)
