"""Loss terms for both heads, verified gradients, and a box fitter.

The rotated-regression loss combines three penalties:

    (1 - rotated IoU) + alpha * sigmoid(center distance)
                      + beta * |sin(angle difference)|

The distance enters the sigmoid in raw pixels, so the term saturates
near 1 beyond a few pixels and sits at alpha/2 (not 0) at a perfect
match; that floor is intentional and kept as designed.  The sine term
is period-pi, so it stays small across the +-90 degree wrap where a
plain angle difference would explode.  A ``distance_mode`` of
"centered" swaps in 2*sigmoid(d)-1, which does vanish at zero, for
experimentation.

Gradients are analytic for the distance and angle terms and central
finite differences for the IoU term (the polygon-clipping IoU has no
practical closed-form derivative).  ``fit_rbox`` runs plain
constant-step gradient descent with per-parameter step scales; there
is no line search or schedule, so near a kink the iterate oscillates
inside a band set by the step size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .assignment import LocationTarget
from .decode import decode_hbox, decode_rbox
from .geometry import HBox, RBox, center_distance, hbox_iou, normalize_angle, rbox_iou

EPS_P = 1e-7        # probability clamp for log terms
EPS_NORM = 1e-12    # floor for the centerness-sum normalizer
KINK_DC = 1e-8      # below this center distance the cone gradient is taken as 0
FD_STEP = 1e-4      # relative central-difference step for the IoU term


@dataclass(frozen=True)
class LossWeights:
    """Term weights for the combined objective (all 1.0 by default)."""

    mu1: float = 1.0
    mu2: float = 1.0
    mu3: float = 1.0


@dataclass(frozen=True)
class LossBreakdown:
    classification: float
    centerness: float
    regression: float
    total: float
    n_pos: int
    sum_cn_pos: float


class LossGrad(NamedTuple):
    vec: np.ndarray  # d/d(cx, cy, w, h, theta)
    at_kink: bool    # True when evaluated at zero center distance


def _clamp_p(p: float) -> float:
    return min(max(p, EPS_P), 1.0 - EPS_P)


def focal_loss(p: float, y: int, gamma: float = 2.0, alpha: float = 0.25) -> float:
    """Hard-example-weighted cross-entropy on one binary score.

    ``alpha`` scales the whole term, so gamma=0, alpha=1 is plain
    cross-entropy for either label.
    """
    p = _clamp_p(p)
    pt = p if y else 1.0 - p
    return alpha * (1.0 - pt) ** gamma * -math.log(pt)


def centerness_bce(pred: float, target: float) -> float:
    """Binary cross-entropy against a soft target in [0, 1]."""
    if not 0.0 <= target <= 1.0:
        raise ValueError(f"target must be in [0, 1], got {target}")
    p = _clamp_p(pred)
    return -target * math.log(p) - (1.0 - target) * math.log(1.0 - p)


def iou_loss_hbox(pred: HBox, gt: HBox, form: str = "linear") -> float:
    """Axis-aligned overlap loss: 1 - IoU, or -log(IoU) with ``form="log"``."""
    iou = hbox_iou(pred, gt)
    if form == "linear":
        return 1.0 - iou
    if form == "log":
        return -math.log(max(iou, EPS_P))
    raise ValueError(f"unknown IoU loss form {form!r}")


def _sigmoid(x: float) -> float:
    if x >= 0:
        z = math.exp(-x)
        return 1.0 / (1.0 + z)
    z = math.exp(x)
    return z / (1.0 + z)


def _distance_term(d: float, mode: str) -> float:
    if mode == "sigmoid":
        return _sigmoid(d)
    if mode == "centered":
        return 2.0 * _sigmoid(d) - 1.0
    raise ValueError(f"unknown distance mode {mode!r}")


def oriented_box_loss(
    pred: RBox,
    gt: RBox,
    alpha: float = 1.0,
    beta: float = 1.0,
    distance_mode: str = "sigmoid",
) -> float:
    """Joint location/orientation regression loss for rotated boxes."""
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    iou_term = 1.0 - rbox_iou(pred, gt)
    dist_term = alpha * _distance_term(center_distance(pred, gt), distance_mode)
    dtheta = normalize_angle(pred.theta - gt.theta)
    return iou_term + dist_term + beta * abs(math.sin(dtheta))


def oriented_box_loss_grad(
    pred: RBox,
    gt: RBox,
    alpha: float = 1.0,
    beta: float = 1.0,
    distance_mode: str = "sigmoid",
    fd_step: float = FD_STEP,
) -> LossGrad:
    """Gradient of the rotated regression loss w.r.t. (cx, cy, w, h, theta).

    Distance and angle terms are differentiated analytically; the IoU
    term by central differences with a step of ``fd_step`` relative to
    each parameter's scale.  At zero center distance the distance term
    has a cone apex: its components are returned as 0 and the result is
    flagged ``at_kink``.  The angle term's subgradient at sin == 0 is
    likewise 0, and an exact parameter match short-circuits to the zero
    subgradient outright (the IoU term is kinked at its minimum, where
    a finite difference would read discretization noise instead of 0).
    """
    if (pred.cx == gt.cx and pred.cy == gt.cy and pred.w == gt.w and pred.h == gt.h
            and normalize_angle(pred.theta) == normalize_angle(gt.theta)):
        return LossGrad(np.zeros(5), True)

    grad = np.zeros(5)

    # IoU term by central differences
    params = [pred.cx, pred.cy, pred.w, pred.h, pred.theta]
    scales = [max(1.0, abs(pred.cx)), max(1.0, abs(pred.cy)), pred.w, pred.h, 1.0]
    for idx in range(5):
        step = fd_step * scales[idx]
        lo = params.copy()
        hi = params.copy()
        lo[idx] -= step
        hi[idx] += step
        f_lo = 1.0 - rbox_iou(RBox(*lo), gt)
        f_hi = 1.0 - rbox_iou(RBox(*hi), gt)
        grad[idx] = (f_hi - f_lo) / (2.0 * step)

    # distance term, analytic
    d = center_distance(pred, gt)
    at_kink = d <= KINK_DC
    if not at_kink:
        s = _sigmoid(d)
        slope = s * (1.0 - s)
        if distance_mode == "centered":
            slope *= 2.0
        elif distance_mode != "sigmoid":
            raise ValueError(f"unknown distance mode {distance_mode!r}")
        grad[0] += alpha * slope * (pred.cx - gt.cx) / d
        grad[1] += alpha * slope * (pred.cy - gt.cy) / d

    # angle term, analytic
    dtheta = normalize_angle(pred.theta - gt.theta)
    sin_d = math.sin(dtheta)
    if sin_d != 0.0:
        grad[4] += beta * math.copysign(1.0, sin_d) * math.cos(dtheta)

    return LossGrad(grad, at_kink)


def total_loss(
    predictions: Sequence[tuple[float, float, Sequence[float]]],
    targets: Sequence[LocationTarget],
    weights: LossWeights = LossWeights(),
    alpha: float = 1.0,
    beta: float = 1.0,
    head: str = "rbox",
    gamma: float = 2.0,
    focal_alpha: float = 0.25,
    distance_mode: str = "sigmoid",
    iou_form: str = "linear",
) -> LossBreakdown:
    """Combine classification, centerness and regression over a scene.

    ``predictions`` is a per-location sequence of (cls score,
    centerness score, regression values) aligned one-to-one with
    ``targets``.  Classification averages focal loss over all locations
    divided by the positive count; centerness and regression run over
    positives only, the latter weighted by the centerness target and
    normalized by the summed centerness.  Both normalizers are floored
    so a scene without positives is still defined.
    """
    if len(predictions) != len(targets):
        raise ValueError(
            f"{len(predictions)} predictions vs {len(targets)} targets"
        )
    if head not in ("rbox", "hbox"):
        raise ValueError(f"unknown head {head!r}")

    n_pos = sum(1 for t in targets if t.is_positive)
    sum_cn = sum(t.centerness for t in targets if t.is_positive)
    n_pos_div = max(n_pos, 1)
    sum_cn_div = max(sum_cn, EPS_NORM)

    cls_sum = 0.0
    cn_sum = 0.0
    reg_sum = 0.0
    for (cls_p, cn_p, reg_p), tgt in zip(predictions, targets):
        cls_sum += focal_loss(cls_p, int(tgt.is_positive), gamma, focal_alpha)
        if not tgt.is_positive:
            continue
        cn_sum += centerness_bce(cn_p, tgt.centerness)
        if head == "rbox":
            pred_box = decode_rbox(tgt.point, tuple(reg_p))
            gt_box = decode_rbox(tgt.point, tgt.regression)
            reg_l = oriented_box_loss(pred_box, gt_box, alpha, beta, distance_mode)
        else:
            pred_box = decode_hbox(tgt.point, tuple(reg_p))
            gt_box = decode_hbox(tgt.point, tgt.regression)
            reg_l = iou_loss_hbox(pred_box, gt_box, iou_form)
        reg_sum += tgt.centerness * reg_l

    classification = cls_sum / n_pos_div
    cn_loss = cn_sum / n_pos_div
    regression = reg_sum / sum_cn_div
    total = weights.mu1 * classification + weights.mu2 * cn_loss + weights.mu3 * regression
    return LossBreakdown(classification, cn_loss, regression, total, n_pos, sum_cn)


@dataclass(frozen=True)
class FitResult:
    """Gradient-descent trajectory: (box, loss) per step, plus status."""

    trajectory: list[tuple[RBox, float]]
    diverged: bool = False
    note: str = ""

    @property
    def initial_loss(self) -> float:
        return self.trajectory[0][1]

    @property
    def final_loss(self) -> float:
        return self.trajectory[-1][1]

    @property
    def final_box(self) -> RBox:
        return self.trajectory[-1][0]


# step scale per parameter: the overlap term's translation gradient is
# ~1/width, so centers get a few-pixel scale to cross large offsets in
# reasonable step counts, while the angle moves in small radian steps;
# terminal oscillation stays under a pixel (and under 0.02 rad)
DEFAULT_PARAM_SCALE = (3.0, 3.0, 1.0, 1.0, 0.02)

_MIN_SIDE = 1e-3


def fit_rbox(
    init: RBox,
    gt: RBox,
    alpha: float = 1.0,
    beta: float = 1.0,
    lr: float = 0.5,
    steps: int = 500,
    param_scale: Sequence[float] = DEFAULT_PARAM_SCALE,
    distance_mode: str = "sigmoid",
) -> FitResult:
    """Fit a box to a target by descending the rotated regression loss.

    Plain constant-step descent: each iteration subtracts
    ``lr * scale_p * grad_p`` per parameter.  Side lengths are floored
    at a tiny positive value and the angle re-normalized every step.
    If the loss goes non-finite the partial trajectory is returned with
    ``diverged`` set.
    """
    if lr <= 0 or not math.isfinite(lr):
        raise ValueError(f"learning rate must be positive and finite, got {lr}")
    if steps < 0:
        raise ValueError(f"step count must be non-negative, got {steps}")
    scale = np.asarray(param_scale, dtype=np.float64)
    if scale.shape != (5,) or np.any(scale <= 0):
        raise ValueError(f"param_scale must be 5 positive factors, got {param_scale!r}")

    box = init.normalized()
    loss = oriented_box_loss(box, gt, alpha, beta, distance_mode)
    trajectory = [(box, loss)]
    for step in range(steps):
        grad = oriented_box_loss_grad(box, gt, alpha, beta, distance_mode).vec
        params = np.array([box.cx, box.cy, box.w, box.h, box.theta]) - lr * scale * grad
        params[2] = max(params[2], _MIN_SIDE)
        params[3] = max(params[3], _MIN_SIDE)
        if not np.all(np.isfinite(params)):
            return FitResult(trajectory, diverged=True, note=f"non-finite update at step {step}")
        box = RBox(params[0], params[1], params[2], params[3], normalize_angle(params[4]))
        loss = oriented_box_loss(box, gt, alpha, beta, distance_mode)
        if not math.isfinite(loss):
            return FitResult(trajectory, diverged=True, note=f"non-finite loss at step {step}")
        trajectory.append((box, loss))
    return FitResult(trajectory)
