"""Rotated-rectangle geometry: polygons, exact convex intersection, IoU.

Boxes are stored normalised to the page; every area computation happens in
pixel space, so results depend on the page aspect ratio. A positive angle
turns the rectangle counter-clockwise as seen on screen (y grows downward).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _backend
from .errors import ParameterError


@dataclass(frozen=True)
class RotatedBox:
    """Normalised unrotated extent ``(x0, y0, x1, y1)`` turned by ``angle`` about its centre."""

    x0: float
    y0: float
    x1: float
    y1: float
    angle: float = 0.0

    def __post_init__(self):
        if not (self.x0 <= self.x1 and self.y0 <= self.y1):
            raise ParameterError(f"box corners out of order: {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1, self.angle)

    def clamped(self) -> "RotatedBox":
        """Coordinates clamped into [0, 1]; the angle is kept."""
        c = lambda v: min(1.0, max(0.0, v))  # noqa: E731
        return RotatedBox(c(self.x0), c(self.y0), c(self.x1), c(self.y1), self.angle)

    def to_dict(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "x1": self.x1, "y1": self.y1, "angle": self.angle}

    @classmethod
    def from_dict(cls, data: dict) -> "RotatedBox":
        return cls(
            float(data["x0"]), float(data["y0"]), float(data["x1"]), float(data["y1"]),
            float(data.get("angle", 0.0)),
        )


def _corners(cx, cy, hw, hh, angle):
    c, s = np.cos(angle), np.sin(angle)
    dx = np.stack([-hw, hw, hw, -hw], axis=-1)
    dy = np.stack([-hh, -hh, hh, hh], axis=-1)
    c = np.expand_dims(c, -1)
    s = np.expand_dims(s, -1)
    xs = np.expand_dims(cx, -1) + dx * c + dy * s
    ys = np.expand_dims(cy, -1) - dx * s + dy * c
    return np.stack([xs, ys], axis=-1)


def box_to_polygon(box: RotatedBox, w: float, h: float) -> np.ndarray:
    """Four pixel-space corners, positively oriented (counter-clockwise in x/y)."""
    cx, cy = box.center
    return _corners(
        np.float64(cx * w), np.float64(cy * h),
        np.float64(0.5 * box.width * w), np.float64(0.5 * box.height * h),
        np.float64(box.angle),
    )


def boxes_to_array(boxes: Iterable[RotatedBox]) -> np.ndarray:
    arr = np.array([b.as_tuple() for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 5)


def boxes_to_polygons(boxes, w: float, h: float) -> np.ndarray:
    """Vectorised :func:`box_to_polygon`; accepts boxes or an (N, 5) array."""
    arr = boxes if isinstance(boxes, np.ndarray) else boxes_to_array(boxes)
    arr = np.asarray(arr, dtype=np.float64).reshape(-1, 5)
    cx = 0.5 * (arr[:, 0] + arr[:, 2]) * w
    cy = 0.5 * (arr[:, 1] + arr[:, 3]) * h
    hw = 0.5 * (arr[:, 2] - arr[:, 0]) * w
    hh = 0.5 * (arr[:, 3] - arr[:, 1]) * h
    return np.ascontiguousarray(_corners(cx, cy, hw, hh, arr[:, 4]))


def signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_area(poly: np.ndarray) -> float:
    return abs(signed_area(poly))


def _oriented(poly) -> np.ndarray:
    poly = np.ascontiguousarray(poly, dtype=np.float64)
    return poly[::-1].copy() if signed_area(poly) < 0 else poly


def convex_intersection_area(p, q) -> float:
    """Area of the intersection of two convex polygons; 0 when disjoint or degenerate."""
    p, q = _oriented(p), _oriented(q)
    if len(p) < 3 or len(q) < 3 or polygon_area(p) == 0.0 or polygon_area(q) == 0.0:
        return 0.0
    return float(_backend.clip_area(p, q))


def rotated_iou(a: RotatedBox, b: RotatedBox, w: float = 1.0, h: float = 1.0) -> float:
    pa, pb = box_to_polygon(a, w, h), box_to_polygon(b, w, h)
    inter = convex_intersection_area(pa, pb)
    union = polygon_area(pa) + polygon_area(pb) - inter
    if union <= 0.0 or inter <= 0.0:
        return 0.0
    return min(1.0, inter / union)


def iou_matrix(boxes_a, boxes_b, w: float = 1.0, h: float = 1.0) -> np.ndarray:
    """Pairwise rotated IoU, shape ``(len(boxes_a), len(boxes_b))``."""
    pa = boxes_to_polygons(boxes_a, w, h)
    pb = boxes_to_polygons(boxes_b, w, h)
    if len(pa) == 0 or len(pb) == 0:
        return np.zeros((len(pa), len(pb)))
    return np.minimum(_backend.iou_matrix(pa, pb), 1.0)


def points_in_convex(px: np.ndarray, py: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Boolean mask of points inside (or on) a convex polygon."""
    poly = _oriented(poly)
    inside = np.ones(np.broadcast(px, py).shape, dtype=bool)
    n = len(poly)
    for k in range(n):
        ax, ay = poly[k]
        bx, by = poly[(k + 1) % n]
        inside &= (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0.0
    return inside


def rasterized_iou_oracle(
    a: RotatedBox, b: RotatedBox, w: float = 1.0, h: float = 1.0, resolution: int = 1000
) -> float:
    """IoU by counting lattice points with spacing (w, h) / resolution.

    Independent of the clipping kernel: it only uses half-plane sign tests.
    Only lattice points inside the joint bounding box are visited; points
    outside it lie in neither box and do not change the counts.
    """
    if resolution < 100:
        raise ParameterError("resolution must be at least 100")
    pa, pb = box_to_polygon(a, w, h), box_to_polygon(b, w, h)
    both = np.vstack([pa, pb])
    sx, sy = w / resolution, h / resolution
    i0, i1 = math.floor(both[:, 0].min() / sx), math.ceil(both[:, 0].max() / sx)
    j0, j1 = math.floor(both[:, 1].min() / sy), math.ceil(both[:, 1].max() / sy)
    xs = (np.arange(i0, i1 + 1) + 0.5) * sx
    ys = (np.arange(j0, j1 + 1) + 0.5) * sy
    gx, gy = np.meshgrid(xs, ys)
    in_a = points_in_convex(gx, gy, pa)
    in_b = points_in_convex(gx, gy, pb)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return np.count_nonzero(in_a & in_b) / union


def clip_polygon(p, q) -> np.ndarray:
    """Vertices of the convex polygon ``p`` clipped to convex ``q`` (may be empty)."""
    p, q = _oriented(p), _oriented(q)
    pts = [tuple(v) for v in p]
    m = len(q)
    for k in range(m):
        if not pts:
            break
        ax, ay = q[k]
        bx, by = q[(k + 1) % m]
        ex, ey = bx - ax, by - ay
        out = []
        for i in range(len(pts)):
            px, py = pts[i]
            qx, qy = pts[(i + 1) % len(pts)]
            sp = ex * (py - ay) - ey * (px - ax)
            sq = ex * (qy - ay) - ey * (qx - ax)
            if sp >= 0.0:
                out.append((px, py))
                if sq < 0.0:
                    t = sp / (sp - sq)
                    out.append((px + t * (qx - px), py + t * (qy - py)))
            elif sq >= 0.0:
                t = sp / (sp - sq)
                out.append((px + t * (qx - px), py + t * (qy - py)))
        pts = out
    return np.array(pts, dtype=np.float64).reshape(-1, 2)


def _segment_crossings(polys: Sequence[np.ndarray]) -> list[float]:
    edges = []
    for poly in polys:
        n = len(poly)
        for k in range(n):
            edges.append((poly[k], poly[(k + 1) % n]))
    xs = []
    for i in range(len(edges)):
        p0, p1 = edges[i]
        r = p1 - p0
        for j in range(i + 1, len(edges)):
            q0, q1 = edges[j]
            s = q1 - q0
            denom = r[0] * s[1] - r[1] * s[0]
            if denom == 0.0:
                continue
            d = q0 - p0
            t = (d[0] * s[1] - d[1] * s[0]) / denom
            u = (d[0] * r[1] - d[1] * r[0]) / denom
            if 0.0 < t < 1.0 and 0.0 < u < 1.0:
                xs.append(float(p0[0] + t * r[0]))
    return xs


def _vertical_section(poly: np.ndarray, x: float) -> tuple[float, float] | None:
    ys = []
    n = len(poly)
    for k in range(n):
        (ax, ay), (bx, by) = poly[k], poly[(k + 1) % n]
        lo, hi = (ax, bx) if ax <= bx else (bx, ax)
        if lo <= x <= hi and bx != ax:
            ys.append(ay + (x - ax) * (by - ay) / (bx - ax))
    if len(ys) < 2:
        return None
    return min(ys), max(ys)


def union_area(polys: Sequence[np.ndarray]) -> float:
    """Exact area of a union of convex polygons by vertical slab decomposition.

    Slab boundaries are all vertex abscissae and edge crossings, so inside a
    slab every section endpoint is linear and the union length can be
    integrated with the midpoint rule without error.
    """
    polys = [np.asarray(p, dtype=np.float64) for p in polys if len(p) >= 3 and polygon_area(p) > 0.0]
    if not polys:
        return 0.0
    if len(polys) == 1:
        return polygon_area(polys[0])
    events = sorted(set([float(x) for p in polys for x in p[:, 0]] + _segment_crossings(polys)))
    total = 0.0
    for xa, xb in zip(events[:-1], events[1:]):
        if xb <= xa:
            continue
        xm = 0.5 * (xa + xb)
        spans = [s for s in (_vertical_section(p, xm) for p in polys) if s is not None]
        if not spans:
            continue
        spans.sort()
        length = 0.0
        cur_lo, cur_hi = spans[0]
        for lo, hi in spans[1:]:
            if lo > cur_hi:
                length += cur_hi - cur_lo
                cur_lo, cur_hi = lo, hi
            else:
                cur_hi = max(cur_hi, hi)
        length += cur_hi - cur_lo
        total += length * (xb - xa)
    return total
