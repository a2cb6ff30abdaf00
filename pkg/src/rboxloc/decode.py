"""From per-location head outputs to a final localization answer.

Box reconstruction inverts the assignment encoding, classification and
centerness fuse into one score by geometric mean, overlapping
candidates are suppressed greedily under rotated IoU, and the winning
box can be exported as a segmentation prompt (axis-aligned extents or
the four rotated corners).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geometry import HBox, Point2, RBox, rbox_corners, rbox_iou, rbox_to_hbox

# fused scores below this are dropped before top-1 selection, unless
# that would leave nothing to select
SCORE_FLOOR = 1e-4

DEFAULT_NMS_THR = 0.1


@dataclass(frozen=True)
class RawPrediction:
    """Head output at one feature location, before decoding."""

    k: int
    i: int
    j: int
    cls: float
    centerness: float
    regression: tuple[float, ...]


@dataclass(frozen=True)
class Prediction:
    """A decoded box with its fused confidence."""

    box: RBox | HBox
    score: float


def decode_rbox(point: Point2, reg: tuple[float, float, float, float, float]) -> RBox:
    """Rebuild the rotated box a location's (l, t, r, b, theta) describes."""
    left, top, right, bottom, theta = (float(v) for v in reg)
    if min(left, top, right, bottom) < 0:
        raise ValueError(f"edge offsets must be non-negative, got {reg!r}")
    w = left + right
    h = top + bottom
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate offsets {reg!r} decode to an empty box")
    # the point sits at ((l-r)/2, (t-b)/2) in the box frame; undo that
    u = (right - left) / 2.0
    v = (bottom - top) / 2.0
    c = math.cos(theta)
    s = math.sin(theta)
    return RBox(point.x + u * c - v * s, point.y + u * s + v * c, w, h, theta)


def decode_hbox(point: Point2, reg: tuple[float, float, float, float]) -> HBox:
    """Axis-aligned counterpart: distances to the four image-frame sides."""
    left, top, right, bottom = (float(v) for v in reg[:4])
    if min(left, top, right, bottom) < 0:
        raise ValueError(f"edge offsets must be non-negative, got {reg!r}")
    if left + right <= 0 or top + bottom <= 0:
        raise ValueError(f"degenerate offsets {reg!r} decode to an empty box")
    return HBox(point.x - left, point.y - top, point.x + right, point.y + bottom)


def decode_anchor_offsets(anchor: HBox, reg: tuple[float, float, float, float]) -> HBox:
    """Invert the anchor delta encoding (dx, dy, dw, dh)."""
    dx, dy, dw, dh = (float(v) for v in reg)
    ac = anchor.center
    cx = ac.x + dx * anchor.w
    cy = ac.y + dy * anchor.h
    w = anchor.w * math.exp(dw)
    h = anchor.h * math.exp(dh)
    return HBox(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


def fuse_score(cls: float, centerness: float) -> float:
    """Geometric mean of classification and centerness confidences."""
    if not (0.0 <= cls <= 1.0 and 0.0 <= centerness <= 1.0):
        raise ValueError(f"scores must lie in [0, 1], got {cls}, {centerness}")
    return math.sqrt(cls * centerness)


def rotated_nms(preds: list[Prediction], iou_thr: float = DEFAULT_NMS_THR) -> list[Prediction]:
    """Greedy suppression under rotated IoU.

    Keeps the best-scoring box, drops every remaining box overlapping
    it at or above ``iou_thr``, repeats.  Output is score-descending;
    ties keep the earlier entry of the input list, so callers that
    build candidates in (level, scan) order get that tie-break.
    """
    if not (0.0 <= iou_thr <= 1.0):
        raise ValueError(f"iou threshold must be in [0, 1], got {iou_thr}")
    order = sorted(range(len(preds)), key=lambda idx: -preds[idx].score)
    kept: list[Prediction] = []
    for idx in order:
        cand = preds[idx]
        box = cand.box if isinstance(cand.box, RBox) else _hbox_as_rbox(cand.box)
        suppressed = False
        for keep in kept:
            kbox = keep.box if isinstance(keep.box, RBox) else _hbox_as_rbox(keep.box)
            if rbox_iou(box, kbox) >= iou_thr:
                suppressed = True
                break
        if not suppressed:
            kept.append(cand)
    return kept


def select_top1(preds: list[Prediction], score_floor: float = SCORE_FLOOR) -> Prediction:
    """Best prediction by fused score; earliest entry wins exact ties.

    Entries below ``score_floor`` are ignored unless they are all
    there is.
    """
    if not preds:
        raise ValueError("cannot select from an empty prediction list")
    pool = [p for p in preds if p.score >= score_floor] or preds
    best = pool[0]
    for p in pool[1:]:
        if p.score > best.score:
            best = p
    return best


def export_sam_prompt(pred: Prediction, mode: str, image_id: str = "") -> dict:
    """Segmentation-prompt record for a decoded box.

    ``hbox`` mode emits the axis-aligned extents; ``rbox-corners`` the
    four corner coordinates flattened to 8 numbers.  Coordinates are
    reference-image pixels.
    """
    if mode == "hbox":
        hull = pred.box if isinstance(pred.box, HBox) else rbox_to_hbox(pred.box)
        box = [hull.xmin, hull.ymin, hull.xmax, hull.ymax]
    elif mode == "rbox-corners":
        rbox = pred.box if isinstance(pred.box, RBox) else _hbox_as_rbox(pred.box)
        box = [c for p in rbox_corners(rbox).vertices for c in (p.x, p.y)]
    else:
        raise ValueError(f"unknown prompt mode {mode!r}")
    return {"image_id": image_id, "mode": mode, "box": box, "score": pred.score}


def _hbox_as_rbox(b: HBox) -> RBox:
    center = b.center
    return RBox(center.x, center.y, b.w, b.h, 0.0)
