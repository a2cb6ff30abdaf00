"""Benchmark metrics: thresholded accuracy, mask quality, rotation stats.

Accuracy at threshold t is the fraction of (prediction, ground truth)
pairs whose IoU reaches t, under either the rotated criterion or the
axis-aligned one (rotated boxes are hull-converted for the latter).
Mask metrics convert pixel measurements to ground units through the
ground sample distance: area errors scale with gsd squared, center
errors linearly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .geometry import HBox, RBox, hbox_iou, normalize_angle, rbox_iou, rbox_to_hbox

DEFAULT_ROT_THR_DEG = 1.0
HIST_BINS = 18  # 5-degree bins over [0, 90)


@dataclass(frozen=True)
class EvalReport:
    acc25: float
    acc50: float
    acc75: float
    n: int
    miou: float | None = None
    mdice: float | None = None
    aae: float | None = None
    me: float | None = None

    def to_dict(self) -> dict:
        out = {"n": self.n, "acc25": self.acc25, "acc50": self.acc50, "acc75": self.acc75}
        if self.miou is not None:
            out.update({"miou": self.miou, "mdice": self.mdice, "aae": self.aae, "me": self.me})
        return out


class GapReport(NamedTuple):
    acc_hbox: float
    acc_rbox: float
    gap: float


class MaskMetrics(NamedTuple):
    miou: float
    mdice: float
    aae: float
    me: float


class RotationStats(NamedTuple):
    fraction_rotated: float
    histogram: tuple[int, ...]


def _as_hbox(box) -> HBox:
    return box if isinstance(box, HBox) else rbox_to_hbox(box)


def _as_rbox(box) -> RBox:
    if isinstance(box, RBox):
        return box
    center = box.center
    return RBox(center.x, center.y, box.w, box.h, 0.0)


def pair_iou(pred, gt, criterion: str) -> float:
    """IoU of one pair under the chosen criterion, converting box kinds."""
    if criterion == "rbox":
        return rbox_iou(_as_rbox(pred), _as_rbox(gt))
    if criterion == "hbox":
        return hbox_iou(_as_hbox(pred), _as_hbox(gt))
    raise ValueError(f"unknown criterion {criterion!r}")


def acc_at(pairs: Sequence[tuple], t: float, criterion: str = "rbox") -> float:
    """Fraction of pairs with IoU >= t (t as a fraction in (0, 1])."""
    if not pairs:
        raise ValueError("accuracy is undefined on an empty pair list")
    if not 0.0 < t <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {t}")
    hits = sum(1 for pred, gt in pairs if pair_iou(pred, gt, criterion) >= t)
    return hits / len(pairs)


def criterion_gap(pairs: Sequence[tuple[RBox, RBox]], t: float) -> GapReport:
    """Accuracy under the loose hull criterion vs the rotated one.

    Predictions that look fine as axis-aligned hulls can miss the
    oriented geometry entirely; the gap (hull accuracy minus rotated
    accuracy) quantifies how much the loose criterion overstates.
    """
    acc_h = acc_at(pairs, t, criterion="hbox")
    acc_r = acc_at(pairs, t, criterion="rbox")
    return GapReport(acc_h, acc_r, acc_h - acc_r)


def _centroid(mask: np.ndarray) -> tuple[float, float]:
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        # empty mask: fall back to the grid center so the distance stays defined
        h, w = mask.shape
        return ((w - 1) / 2.0, (h - 1) / 2.0)
    return (float(xs.mean()), float(ys.mean()))


def mask_metrics(
    pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    gsd: float = 1.0,
    centroid: str = "mask",
) -> MaskMetrics:
    """Mean IoU/Dice plus area and center errors in ground units.

    Pairs are (predicted, ground-truth) boolean grids of equal shape.
    A pair of two empty masks counts as a perfect match.  ``centroid``
    chooses how the center error is measured: "mask" uses the mean
    foreground coordinate, "bbox" the center of the foreground's
    bounding box.
    """
    if not pairs:
        raise ValueError("mask metrics are undefined on an empty pair list")
    if gsd <= 0 or not math.isfinite(gsd):
        raise ValueError(f"ground sample distance must be positive, got {gsd}")
    if centroid not in ("mask", "bbox"):
        raise ValueError(f"unknown centroid mode {centroid!r}")

    ious = []
    dices = []
    area_errors = []
    center_errors = []
    for pred, gt in pairs:
        pred = np.asarray(pred, dtype=bool)
        gt = np.asarray(gt, dtype=bool)
        if pred.shape != gt.shape:
            raise ValueError(f"mask shape mismatch: {pred.shape} vs {gt.shape}")
        inter = int(np.count_nonzero(pred & gt))
        union = int(np.count_nonzero(pred | gt))
        a_pred = int(np.count_nonzero(pred))
        a_gt = int(np.count_nonzero(gt))
        if union == 0:
            ious.append(1.0)
            dices.append(1.0)
        else:
            ious.append(inter / union)
            dices.append(2.0 * inter / (a_pred + a_gt))
        area_errors.append(abs(a_pred - a_gt) * gsd * gsd)
        if a_pred == 0 and a_gt == 0:
            center_errors.append(0.0)
        else:
            cp = _centroid_by_mode(pred, centroid)
            cg = _centroid_by_mode(gt, centroid)
            center_errors.append(math.hypot(cp[0] - cg[0], cp[1] - cg[1]) * gsd)

    n = len(pairs)
    return MaskMetrics(
        sum(ious) / n, sum(dices) / n, sum(area_errors) / n, sum(center_errors) / n
    )


def _centroid_by_mode(mask: np.ndarray, mode: str) -> tuple[float, float]:
    if mode == "mask":
        return _centroid(mask)
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        h, w = mask.shape
        return ((w - 1) / 2.0, (h - 1) / 2.0)
    return ((float(xs.min()) + float(xs.max())) / 2.0, (float(ys.min()) + float(ys.max())) / 2.0)


def rotation_stats(boxes: Sequence[RBox], rot_thr_deg: float = DEFAULT_ROT_THR_DEG) -> RotationStats:
    """Share of boxes rotated beyond a threshold, plus an |angle| histogram.

    Angles are normalized first; the histogram covers [0, 90) degrees
    in eighteen 5-degree bins (an exact 90, i.e. theta = -pi/2, lands
    in the last bin).
    """
    if not boxes:
        raise ValueError("rotation statistics are undefined on an empty list")
    hist = [0] * HIST_BINS
    rotated = 0
    for box in boxes:
        deg = abs(math.degrees(normalize_angle(box.theta)))
        if deg > rot_thr_deg:
            rotated += 1
        hist[min(int(deg / (90.0 / HIST_BINS)), HIST_BINS - 1)] += 1
    return RotationStats(rotated / len(boxes), tuple(hist))
