"""Rotated- and axis-aligned-rectangle algebra in the image plane.

Boxes live in image pixel coordinates (x right, y down).  A rotated box
is ``(cx, cy, w, h, theta)`` with ``theta`` in radians measured from the
image x-axis to the box's w-edge, positive rotating x toward y.  The
canonical angle range is ``[-pi/2, pi/2)``; a rectangle is invariant
under ``theta -> theta + pi``, and a square also under ``+ pi/2``.

Everything here is a pure function on immutable values in double
precision, so concurrent use is safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Clipping results below this area (px^2) are treated as empty, and
# vertices closer than TAU_COL are merged.  Overridable per call.
TAU_AREA = 1e-9
TAU_COL = 1e-9

_HALF_PI = math.pi / 2.0


def _require_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class Point2:
    """A point in image pixel coordinates."""

    x: float
    y: float

    def __post_init__(self) -> None:
        _require_finite("Point2", self.x, self.y)


@dataclass(frozen=True)
class RBox:
    """Rotated rectangle: center, side lengths, rotation angle (radians)."""

    cx: float
    cy: float
    w: float
    h: float
    theta: float

    def __post_init__(self) -> None:
        _require_finite("RBox", self.cx, self.cy, self.w, self.h, self.theta)
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"RBox sides must be positive, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> Point2:
        return Point2(self.cx, self.cy)

    def normalized(self) -> "RBox":
        """Same rectangle with theta folded into [-pi/2, pi/2)."""
        return RBox(self.cx, self.cy, self.w, self.h, normalize_angle(self.theta))


@dataclass(frozen=True)
class HBox:
    """Axis-aligned rectangle as (xmin, ymin, xmax, ymax)."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        _require_finite("HBox", self.xmin, self.ymin, self.xmax, self.ymax)
        if self.xmax <= self.xmin or self.ymax <= self.ymin:
            raise ValueError(f"HBox extents must be positive: {self}")

    @property
    def w(self) -> float:
        return self.xmax - self.xmin

    @property
    def h(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> Point2:
        return Point2((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)


@dataclass(frozen=True)
class ConvexPolygon:
    """Convex polygon with counter-clockwise vertices; may be empty."""

    vertices: tuple[Point2, ...]

    def __post_init__(self) -> None:
        if 0 < len(self.vertices) < 3:
            raise ValueError("a non-empty polygon needs at least 3 vertices")

    @classmethod
    def from_xy(cls, pts) -> "ConvexPolygon":
        return cls(tuple(Point2(float(x), float(y)) for x, y in pts))

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) == 0

    def as_tuples(self) -> list[tuple[float, float]]:
        return [(p.x, p.y) for p in self.vertices]


def normalize_angle(theta: float) -> float:
    """Fold an angle into [-pi/2, pi/2), modulo the rectangle period pi."""
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    return (theta + _HALF_PI) % math.pi - _HALF_PI


def rbox_corners(b: RBox) -> ConvexPolygon:
    """Counter-clockwise corner polygon of a rotated box."""
    c = math.cos(b.theta)
    s = math.sin(b.theta)
    hw = b.w / 2.0
    hh = b.h / 2.0
    pts = []
    for ux, uy in ((-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)):
        pts.append(Point2(b.cx + ux * c - uy * s, b.cy + ux * s + uy * c))
    return ConvexPolygon(tuple(pts))


def polygon_area(p: ConvexPolygon) -> float:
    """Shoelace area; zero for the empty polygon."""
    pts = p.vertices
    n = len(pts)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        a = pts[i]
        b = pts[(i + 1) % n]
        acc += a.x * b.y - b.x * a.y
    return abs(acc) / 2.0


def _signed_area(pts: list[tuple[float, float]]) -> float:
    acc = 0.0
    n = len(pts)
    for i in range(n):
        ax, ay = pts[i]
        bx, by = pts[(i + 1) % n]
        acc += ax * by - bx * ay
    return acc / 2.0


def _ensure_ccw(pts: list[tuple[float, float]]) -> list[tuple[float, float]]:
    if len(pts) >= 3 and _signed_area(pts) < 0:
        return pts[::-1]
    return pts


def _clip_by_edge(subject, ax, ay, bx, by):
    """One Sutherland-Hodgman pass: keep the half-plane left of a->b."""
    ex = bx - ax
    ey = by - ay
    out = []
    n = len(subject)
    for i in range(n):
        sx, sy = subject[i - 1]
        px, py = subject[i]
        s_side = ex * (sy - ay) - ey * (sx - ax)
        p_side = ex * (py - ay) - ey * (px - ax)
        # boundary points (side == 0) count as inside
        if p_side >= 0.0:
            if s_side < 0.0:
                t = s_side / (s_side - p_side)
                out.append((sx + t * (px - sx), sy + t * (py - sy)))
            out.append((px, py))
        elif s_side >= 0.0:
            t = s_side / (s_side - p_side)
            out.append((sx + t * (px - sx), sy + t * (py - sy)))
    return out


def convex_intersect(
    p: ConvexPolygon,
    q: ConvexPolygon,
    *,
    tau_area: float | None = None,
    tau_col: float | None = None,
) -> ConvexPolygon:
    """Intersection of two convex polygons (Sutherland-Hodgman clipping).

    Both inputs must be convex; vertex order may be either orientation.
    Near-degenerate results are collapsed: consecutive vertices closer
    than ``tau_col`` are merged and anything with area below
    ``tau_area`` comes back as the empty polygon.
    """
    if tau_area is None:
        tau_area = TAU_AREA
    if tau_col is None:
        tau_col = TAU_COL
    if p.is_empty or q.is_empty:
        return ConvexPolygon(())

    subject = _ensure_ccw(p.as_tuples())
    clipper = _ensure_ccw(q.as_tuples())
    for i in range(len(clipper)):
        ax, ay = clipper[i - 1]
        bx, by = clipper[i]
        subject = _clip_by_edge(subject, ax, ay, bx, by)
        if not subject:
            return ConvexPolygon(())

    # merge duplicate vertices produced by clips through corners
    dedup: list[tuple[float, float]] = []
    for pt in subject:
        if not dedup or math.hypot(pt[0] - dedup[-1][0], pt[1] - dedup[-1][1]) > tau_col:
            dedup.append(pt)
    if len(dedup) >= 2 and math.hypot(dedup[0][0] - dedup[-1][0], dedup[0][1] - dedup[-1][1]) <= tau_col:
        dedup.pop()
    if len(dedup) < 3 or abs(_signed_area(dedup)) < tau_area:
        return ConvexPolygon(())
    return ConvexPolygon.from_xy(dedup)


def _rbox_key(b: RBox) -> tuple[float, float, float, float, float]:
    return (b.cx, b.cy, b.w, b.h, b.theta)


def rbox_iou(a: RBox, b: RBox, *, tau_area: float | None = None) -> float:
    """Intersection over union of two rotated boxes, in [0, 1].

    The pair is shifted so the midpoint of the two centers sits at the
    origin before clipping (keeps the polygon arithmetic well
    conditioned far from the image origin), and the operands are
    ordered canonically so the result is exactly symmetric.
    """
    ka = _rbox_key(a)
    kb = _rbox_key(b)
    if ka == kb:
        return 1.0  # identical rectangles, exactly
    if kb < ka:
        a, b = b, a
    mx = (a.cx + b.cx) / 2.0
    my = (a.cy + b.cy) / 2.0
    a0 = RBox(a.cx - mx, a.cy - my, a.w, a.h, a.theta)
    b0 = RBox(b.cx - mx, b.cy - my, b.w, b.h, b.theta)
    inter = polygon_area(convex_intersect(rbox_corners(a0), rbox_corners(b0), tau_area=tau_area))
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def hbox_iou(a: HBox, b: HBox) -> float:
    """Intersection over union of two axis-aligned boxes, in [0, 1]."""
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(max(inter / union, 0.0), 1.0)


def rbox_to_hbox(b: RBox) -> HBox:
    """Smallest axis-aligned box containing all four corners."""
    c = abs(math.cos(b.theta))
    s = abs(math.sin(b.theta))
    half_x = (b.w * c + b.h * s) / 2.0
    half_y = (b.w * s + b.h * c) / 2.0
    return HBox(b.cx - half_x, b.cy - half_y, b.cx + half_x, b.cy + half_y)


def _containment_slack(b: RBox) -> float:
    # keeps exact boundary points (e.g. the box's own corners) inside
    # despite the rotation round trip's ~1 ulp noise
    return 1e-9 * max(b.w, b.h, abs(b.cx), abs(b.cy), 1.0)


def point_in_rbox(p: Point2, b: RBox) -> bool:
    """Boundary-inclusive containment test in the box's own frame."""
    c = math.cos(b.theta)
    s = math.sin(b.theta)
    dx = p.x - b.cx
    dy = p.y - b.cy
    u = dx * c + dy * s
    v = -dx * s + dy * c
    slack = _containment_slack(b)
    return abs(u) <= b.w / 2.0 + slack and abs(v) <= b.h / 2.0 + slack


def points_in_rbox(xs: np.ndarray, ys: np.ndarray, b: RBox) -> np.ndarray:
    """Vectorized `point_in_rbox` over coordinate arrays."""
    c = math.cos(b.theta)
    s = math.sin(b.theta)
    dx = np.asarray(xs, dtype=np.float64) - b.cx
    dy = np.asarray(ys, dtype=np.float64) - b.cy
    u = dx * c + dy * s
    v = -dx * s + dy * c
    slack = _containment_slack(b)
    return (np.abs(u) <= b.w / 2.0 + slack) & (np.abs(v) <= b.h / 2.0 + slack)


def center_distance(a: RBox, b: RBox) -> float:
    """Euclidean distance between box centers, in pixels."""
    return math.hypot(a.cx - b.cx, a.cy - b.cy)
