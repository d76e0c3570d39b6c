"""Box arithmetic and planar egomotion transforms.

Boxes are center-format ``[x, y, w, h]`` in image-plane pixels.  The
observer's motion between two frames is a planar similarity
(translation, rotation, isotropic scale) acting on image coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if self.w < 0 or self.h < 0:
            raise ValueError(f"negative box extent {vals}")

    @classmethod
    def from_array(cls, a) -> "BBox":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), max(float(a[2]), 0.0), max(float(a[3]), 0.0))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=float)

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> tuple[float, float, float, float]:
        return (self.x - self.w / 2, self.y - self.h / 2,
                self.x + self.w / 2, self.y + self.h / 2)


def wrap_angle(a: float) -> float:
    """Map an angle into (-pi, pi]."""
    r = math.remainder(a, 2 * math.pi)
    if r <= -math.pi:
        r += 2 * math.pi
    return r


@dataclass(frozen=True)
class Egomotion:
    """Similarity ``p -> scale * R(theta) @ (p - (tx, ty))`` on image points."""

    tx: float = 0.0
    ty: float = 0.0
    theta: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.tx, self.ty, self.theta, self.scale)):
            raise ValueError("non-finite egomotion")
        if self.scale <= 0:
            raise ValueError(f"egomotion scale must be > 0, got {self.scale}")
        if not (-math.pi < self.theta <= math.pi):
            raise ValueError(f"theta {self.theta} outside (-pi, pi]")

    @classmethod
    def identity(cls) -> "Egomotion":
        return cls()

    def as_array(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.theta, self.scale], dtype=float)

    @classmethod
    def from_array(cls, a) -> "Egomotion":
        return cls(float(a[0]), float(a[1]), wrap_angle(float(a[2])), float(a[3]))

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return self.scale * np.array([[c, -s], [s, c]])

    def to_affine(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(A, b)`` with ``p' = A @ p + b``."""
        A = self.matrix()
        return A, -A @ np.array([self.tx, self.ty])

    @classmethod
    def from_affine(cls, A, b) -> "Egomotion":
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        scale = math.sqrt(abs(A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]))
        theta = wrap_angle(math.atan2(A[1, 0], A[0, 0]))
        t = -np.linalg.solve(A, b)
        return cls(float(t[0]), float(t[1]), theta, scale)

    def then(self, other: "Egomotion") -> "Egomotion":
        """Egomotion equivalent to applying ``self`` first, then ``other``."""
        return compose(self, other)

    def inverse(self) -> "Egomotion":
        A, b = self.to_affine()
        Ai = np.linalg.inv(A)
        return Egomotion.from_affine(Ai, -Ai @ b)

    def apply_points(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx = pts[..., 0] - self.tx
        dy = pts[..., 1] - self.ty
        out = np.empty_like(pts)
        out[..., 0] = self.scale * (c * dx - s * dy)
        out[..., 1] = self.scale * (s * dx + c * dy)
        return out


def compose(first: Egomotion, second: Egomotion) -> Egomotion:
    A1, b1 = first.to_affine()
    A2, b2 = second.to_affine()
    return Egomotion.from_affine(A2 @ A1, A2 @ b1 + b2)


def zoom_about(center: tuple[float, float], scale: float, theta: float = 0.0,
               shift: tuple[float, float] = (0.0, 0.0)) -> Egomotion:
    """Rotate/scale about ``center``, then translate the image by ``shift``."""
    c = np.asarray(center, dtype=float)
    A = Egomotion(0.0, 0.0, wrap_angle(theta), scale).matrix()
    b = c - A @ c + np.asarray(shift, dtype=float)
    return Egomotion.from_affine(A, b)


def center_distance(a: BBox, b: BBox) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def iou(a: BBox, b: BBox) -> float:
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def apply_egomotion(e: Egomotion, b: BBox) -> BBox:
    p = e.apply_points(np.array([b.x, b.y]))
    return BBox(float(p[0]), float(p[1]), b.w * e.scale, b.h * e.scale)


def apply_egomotion_array(e: Egomotion, boxes) -> np.ndarray:
    """Vectorised :func:`apply_egomotion` over an ``(..., 4)`` array."""
    boxes = np.asarray(boxes, dtype=float)
    out = np.empty_like(boxes)
    out[..., :2] = e.apply_points(boxes[..., :2])
    out[..., 2:] = boxes[..., 2:] * e.scale
    return out


def _clip_interval(lo, hi, center, limit):
    lo2, hi2 = max(lo, 0.0), min(hi, limit)
    if hi2 < lo2:
        p = min(max(center, 0.0), limit)
        return p, 0.0
    return (lo2 + hi2) / 2, hi2 - lo2


def clamp_to_frame(b: BBox, width: float, height: float) -> BBox:
    """Intersect ``b`` with the frame ``[0, width] x [0, height]``.

    An axis with no overlap collapses to the nearest frame coordinate, so a
    box lying fully outside becomes a zero-area box on the frame border.
    """
    if width <= 0 or height <= 0:
        raise ValueError("frame dimensions must be positive")
    x0, y0, x1, y1 = b.corners()
    x, w = _clip_interval(x0, x1, b.x, width)
    y, h = _clip_interval(y0, y1, b.y, height)
    return BBox(x, y, w, h)


def clamp_array(boxes, width: float, height: float) -> np.ndarray:
    boxes = np.atleast_2d(np.asarray(boxes, dtype=float))
    return np.array([clamp_to_frame(BBox.from_array(b), width, height).as_array() for b in boxes])


def visible_fraction(b: BBox, width: float, height: float) -> float:
    """Fraction of the box area inside the frame (1.0 for in-frame degenerate boxes)."""
    x0, y0, x1, y1 = b.corners()
    iw = max(min(x1, width) - max(x0, 0.0), 0.0)
    ih = max(min(y1, height) - max(y0, 0.0), 0.0)
    if b.area <= 0:
        return 1.0 if (0 <= b.x <= width and 0 <= b.y <= height) else 0.0
    return iw * ih / b.area
