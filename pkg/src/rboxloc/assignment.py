"""Training-target assignment for the two detection heads.

The rotated head is anchor-free: every feature location maps to an
image point (stride//2 + index*stride per axis); points inside the
ground-truth rotated box become positives, optionally filtered by
per-level ranges on the largest edge offset, and carry box-frame
regression offsets plus a centerness score.  The horizontal head is a
conventional anchor/IoU assigner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geometry import HBox, Point2, RBox, hbox_iou, point_in_rbox

# (lower, upper] bounds on max(l, t, r, b) per level k=3..7; together
# they partition (0, inf) so every positive lands on exactly one level.
DEFAULT_SCALE_RANGES: tuple[tuple[float, float], ...] = (
    (0.0, 64.0),
    (64.0, 128.0),
    (128.0, 256.0),
    (256.0, 512.0),
    (512.0, math.inf),
)

UNBOUNDED_RANGES: tuple[tuple[float, float], ...] = tuple((0.0, math.inf) for _ in range(5))


@dataclass(frozen=True)
class LocationTarget:
    """Assignment result for one feature location."""

    k: int
    i: int
    j: int
    point: Point2
    is_positive: bool
    centerness: float | None = None
    regression: tuple[float, float, float, float, float] | None = None


@dataclass(frozen=True)
class AnchorTarget:
    """Assignment result for one anchor: label and encoded offsets."""

    label: str  # "positive" | "negative" | "ignore"
    iou: float
    offsets: tuple[float, float, float, float] | None = None


def check_scale_ranges(ranges) -> tuple[tuple[float, float], ...]:
    ranges = tuple((float(lo), float(hi)) for lo, hi in ranges)
    if all(r == (0.0, math.inf) for r in ranges):
        return ranges  # pure-containment mode: no level filtering
    if ranges[0][0] != 0.0 or ranges[-1][1] != math.inf:
        raise ValueError("scale ranges must cover (0, inf)")
    for (lo, hi), (nlo, _) in zip(ranges, ranges[1:]):
        if hi != nlo or hi <= lo:
            raise ValueError(f"scale ranges must be contiguous and increasing, got {ranges}")
    return ranges


def feature_to_image(i: int, j: int, stride: int) -> Point2:
    """Image point of feature cell (row i, column j) at the given stride."""
    if i < 0 or j < 0:
        raise ValueError(f"feature indices must be non-negative, got ({i}, {j})")
    half = stride // 2
    return Point2(half + j * stride, half + i * stride)


def box_frame_offsets(p: Point2, b: RBox) -> tuple[float, float, float, float, float]:
    """Distances from an interior point to the box edges, in the box frame.

    Returns (left, top, right, bottom, theta): left+right == w and
    top+bottom == h.  The point must lie inside the box (boundary
    counts as inside; offsets are clamped at 0 against round-off).
    """
    c = math.cos(b.theta)
    s = math.sin(b.theta)
    dx = p.x - b.cx
    dy = p.y - b.cy
    u = dx * c + dy * s
    v = -dx * s + dy * c
    left = b.w / 2.0 + u
    right = b.w / 2.0 - u
    top = b.h / 2.0 + v
    bottom = b.h / 2.0 - v
    slack = 1e-9 * max(b.w, b.h, 1.0)
    if min(left, right, top, bottom) < -slack:
        raise ValueError(f"point {p} lies outside box {b}")
    return (max(left, 0.0), max(top, 0.0), max(right, 0.0), max(bottom, 0.0), b.theta)


def centerness(left: float, top: float, right: float, bottom: float) -> float:
    """How central a point is in its box: 1 at the center, 0 on an edge."""
    if min(left, top, right, bottom) < 0:
        raise ValueError("offsets must be non-negative")
    lr = left + right
    tb = top + bottom
    if lr <= 0 or tb <= 0:
        raise ValueError("degenerate offsets: zero extent on both sides of an axis")
    return math.sqrt(
        (min(left, right) / max(left, right)) * (min(top, bottom) / max(top, bottom))
    )


def assign_rbox_targets(
    pyramid_shapes,
    gt: RBox,
    ranges=DEFAULT_SCALE_RANGES,
) -> list[LocationTarget]:
    """Assign every location of a pyramid against one ground-truth box.

    ``pyramid_shapes`` is a per-level list of (h, w, stride).  A
    location is positive iff its image point falls inside ``gt`` and
    the largest of its four edge offsets lies in the level's
    (lower, upper] range.  Targets come back in (level, row-major scan)
    order, negatives included; a box too small to cover any location
    simply yields zero positives.
    """
    ranges = check_scale_ranges(ranges)
    if len(ranges) != len(pyramid_shapes):
        raise ValueError(
            f"{len(pyramid_shapes)} levels but {len(ranges)} scale ranges"
        )
    gt = gt.normalized()
    out: list[LocationTarget] = []
    for (h, w, stride), (lo, hi) in zip(pyramid_shapes, ranges):
        k = int(stride).bit_length() - 1
        for i in range(h):
            for j in range(w):
                point = feature_to_image(i, j, stride)
                if point_in_rbox(point, gt):
                    reg = box_frame_offsets(point, gt)
                    m = max(reg[:4])
                    if lo < m <= hi:
                        out.append(
                            LocationTarget(
                                k, i, j, point, True,
                                centerness=centerness(*reg[:4]),
                                regression=reg,
                            )
                        )
                        continue
                out.append(LocationTarget(k, i, j, point, False))
    return out


def count_positives(targets: list[LocationTarget]) -> int:
    return sum(1 for t in targets if t.is_positive)


def assign_rbox_targets_multi(
    pyramid_shapes,
    gts,
    ranges=DEFAULT_SCALE_RANGES,
) -> list[LocationTarget]:
    """Single-query assignment generalized to several ground-truth boxes.

    A location inside more than one box (after range filtering) is
    assigned the box with the smallest area.
    """
    if not gts:
        raise ValueError("need at least one ground-truth box")
    per_gt = [assign_rbox_targets(pyramid_shapes, gt, ranges) for gt in gts]
    areas = [gt.w * gt.h for gt in gts]
    out: list[LocationTarget] = []
    for idx, base in enumerate(per_gt[0]):
        best = None
        for targets, area in zip(per_gt, areas):
            t = targets[idx]
            if t.is_positive and (best is None or area < best[0]):
                best = (area, t)
        out.append(best[1] if best is not None else
                   LocationTarget(base.k, base.i, base.j, base.point, False))
    return out


def generate_anchors(pyramid_shapes, scale: float = 4.0) -> list[HBox]:
    """One square anchor per location, side scale*stride, in scan order."""
    anchors = []
    for h, w, stride in pyramid_shapes:
        half = scale * stride / 2.0
        for i in range(h):
            for j in range(w):
                p = feature_to_image(i, j, stride)
                anchors.append(HBox(p.x - half, p.y - half, p.x + half, p.y + half))
    return anchors


def encode_hbox_offsets(anchor: HBox, gt: HBox) -> tuple[float, float, float, float]:
    """Standard box deltas: center shift over anchor size, log size ratio."""
    ac = anchor.center
    gc = gt.center
    return (
        (gc.x - ac.x) / anchor.w,
        (gc.y - ac.y) / anchor.h,
        math.log(gt.w / anchor.w),
        math.log(gt.h / anchor.h),
    )


def assign_hbox_targets(
    anchors,
    gt: HBox,
    pos_thr: float = 0.5,
    neg_thr: float = 0.4,
) -> list[AnchorTarget]:
    """IoU-threshold anchor assignment for the horizontal head."""
    if not (0.0 <= neg_thr <= pos_thr <= 1.0):
        raise ValueError(f"need 0 <= neg_thr <= pos_thr <= 1, got {neg_thr}/{pos_thr}")
    out = []
    for anchor in anchors:
        iou = hbox_iou(anchor, gt)
        if iou >= pos_thr:
            out.append(AnchorTarget("positive", iou, encode_hbox_offsets(anchor, gt)))
        elif iou < neg_thr:
            out.append(AnchorTarget("negative", iou))
        else:
            out.append(AnchorTarget("ignore", iou))
    return out
