"""Acceptance gate: one test per release criterion, each printing a
pass line with its measured margin (run with -s to see them inline).
"""

import json
import math
import time

import numpy as np
import pytest

from rboxloc.assignment import DEFAULT_SCALE_RANGES, assign_rbox_targets
from rboxloc.attention import attention_maps, refine_pyramid
from rboxloc.cli import main
from rboxloc.clickmap import make_click_map
from rboxloc.dataset import SynthConfig, render_rbox_mask, synth_gt_batch
from rboxloc.geometry import (
    RBox,
    center_distance,
    hbox_iou,
    normalize_angle,
    rbox_iou,
    rbox_to_hbox,
)
from rboxloc.losses import (
    LossWeights,
    fit_rbox,
    oriented_box_loss,
    oriented_box_loss_grad,
    total_loss,
)
from rboxloc.metrics import acc_at, mask_metrics, rotation_stats
from rboxloc.pipeline import run_pipeline
from rboxloc.pyramid import FeatureLevel, FeaturePyramid
from oracles import attention_reference, enumerate_assignment, fd_gradient


def report(criterion, ok, detail):
    mark = "PASS" if ok else "FAIL"
    print(f"[{criterion}] {mark} - {detail}")
    assert ok, f"{criterion}: {detail}"


def random_rbox(rng, span=50.0, dims=(1.0, 100.0)):
    return RBox(
        rng.uniform(-span, span), rng.uniform(-span, span),
        rng.uniform(*dims), rng.uniform(*dims),
        rng.uniform(-math.pi / 2, math.pi / 2),
    )


def test_criterion_01_rotated_iou_oracle(mc_oracle):
    start = time.time()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(1000):
        a = random_rbox(rng)
        b = RBox(
            a.cx + rng.uniform(-40, 40), a.cy + rng.uniform(-40, 40),
            rng.uniform(1, 100), rng.uniform(1, 100),
            rng.uniform(-math.pi / 2, math.pi / 2),
        )
        worst = max(worst, abs(rbox_iou(a, b) - mc_oracle.iou(a, b)))
    elapsed = time.time() - start
    report(
        "A01", worst <= 0.005 and elapsed <= 60.0,
        f"1000 pairs vs 1e6-point sampling: worst |err|={worst:.5f} "
        f"(<=0.005), {elapsed:.1f}s (<=60s)",
    )


def test_criterion_02_adjacent_object_ambiguity(mc_oracle):
    theta = math.pi / 4
    a = RBox(0.0, 0.0, 20.0, 4.0, theta)
    shift = 4.8
    b = RBox(-shift * math.sin(theta), shift * math.cos(theta), 20.0, 4.0, theta)
    rotated = rbox_iou(a, b)
    hulls = hbox_iou(rbox_to_hbox(a), rbox_to_hbox(b))
    sampled = mc_oracle.iou(a, b)
    ok = rotated <= 0.01 and hulls >= 0.33 and abs(sampled - rotated) <= 0.005
    report(
        "A02", ok,
        f"adjacent oriented pair: hull IoU={hulls:.3f} (>=0.33), "
        f"rotated IoU={rotated:.4f} (<=0.01, sampler agrees at {sampled:.4f})",
    )


def test_criterion_03_criterion_gap_500_scenes(tmp_path):
    out = tmp_path / "gap.json"
    code = main([
        "gap", "--seeds", "500", "--seed", "3", "--thr", "0.5",
        "--theta-min", "15", "--theta-max", "75",
        "--box-min", "24", "--box-max", "60",
        "--output", str(out),
    ])
    payload = json.loads(out.read_text())
    ok = code == 0 and payload["n"] == 500 and payload["gap"] >= 0.10
    report(
        "A03", ok,
        f"hull predictions on 500 rotated scenes: acc_hbox={payload['acc_hbox']:.3f}, "
        f"acc_rbox={payload['acc_rbox']:.3f}, gap={payload['gap']:.3f} (>=0.10)",
    )


def test_criterion_04_click_map_exactness():
    grid = make_click_map(2, 2, (0.0, 0.0))
    exact = (
        abs(grid[0, 0] - 1.0) <= 1e-12
        and abs(grid[1, 1] - 0.25) <= 1e-12
    )
    grid2 = make_click_map(3, 4, (0.0, 0.0))
    exact = exact and abs(grid2[2, 3] - (1 - math.sqrt(13) / 5) ** 2) <= 1e-12
    grid3 = make_click_map(5, 9, (4.0, 2.0))
    exact = exact and abs(grid3[2, 4] - 1.0) <= 1e-12

    rng = np.random.default_rng(104)
    invariants = True
    for _ in range(50):
        h = int(rng.integers(1, 48))
        w = int(rng.integers(1, 48))
        click = (rng.uniform(0, w - 1e-9), rng.uniform(0, h - 1e-9))
        grid = make_click_map(h, w, click)
        invariants &= bool(grid.min() >= 0.0 and grid.max() <= 1.0)
        jj, ii = np.meshgrid(np.arange(w), np.arange(h))
        dist = np.hypot(jj - click[0], ii - click[1]).ravel()
        order = np.argsort(dist)
        deltas = np.diff(grid.ravel()[order])
        gaps = np.diff(dist[order])
        invariants &= bool(np.all(deltas[gaps > 1e-12] < 0))
    report(
        "A04", exact and invariants,
        "click map matches the three tabulated values to 1e-12; "
        "range and monotone decay hold on 50 random configurations",
    )


def test_criterion_05_attention_oracle_equivalence():
    rng = np.random.default_rng(105)
    eps = 1e-6
    worst = 0.0
    argmax_ok = True
    scale_ok = True
    for _ in range(100):
        d = int(rng.integers(2, 6))
        shape = (int(rng.integers(1, 5)), int(rng.integers(1, 5)))
        query = FeaturePyramid(tuple(
            FeatureLevel(k, rng.normal(size=(d, *shape))) for k in range(3, 8)
        ))
        reference = FeaturePyramid(tuple(
            FeatureLevel(k, rng.normal(size=(d, *shape))) for k in range(3, 8)
        ))
        maps, refined = attention_reference(
            [lv.values for lv in query.levels],
            [lv.values for lv in reference.levels],
            eps,
        )
        got_maps = attention_maps(query, reference, eps)
        got = refine_pyramid(query, reference, eps)
        for ref_map, got_map, ref_level, got_level, r_lv in zip(
            maps, got_maps, refined, got.levels, reference.levels
        ):
            worst = max(worst, float(np.max(np.abs(ref_map - got_map))))
            worst = max(worst, float(np.max(np.abs(ref_level - got_level.values))))
            raw = np.tensordot(
                query.levels[0].values.mean(axis=(1, 2)), r_lv.values, axes=(0, 0)
            )
            del raw  # argmax checked against the score map below
        # argmax preservation, on the raw cosine scores
        from rboxloc.attention import cosine_score_map, global_average_pool

        for q_lv, r_lv, got_map in zip(query.levels, reference.levels, got_maps):
            scores = cosine_score_map(global_average_pool(q_lv), r_lv)
            argmax_ok &= bool(np.argmax(scores) == np.argmax(got_map))
        scaled = FeaturePyramid(tuple(
            FeatureLevel(lv.k, lv.values * float(rng.uniform(0.1, 50.0)))
            for lv in query.levels
        ))
        for a, b in zip(attention_maps(scaled, reference, eps), got_maps):
            scale_ok &= bool(np.max(np.abs(a - b)) <= 1e-9)
    report(
        "A05", worst <= 1e-9 and argmax_ok and scale_ok,
        f"100 random pyramids: max deviation from the line-by-line oracle "
        f"{worst:.2e} (<=1e-9); argmax preserved; positive-scale invariant",
    )


def test_criterion_06_assignment_oracle_equivalence():
    rng = np.random.default_rng(106)
    shapes = [(32, 32, 8), (16, 16, 16), (8, 8, 32), (4, 4, 64), (2, 2, 128)]
    worst = 0.0
    sets_equal = True
    for _ in range(100):
        w = rng.uniform(6, 140)
        h = rng.uniform(6, 140)
        margin = math.hypot(w, h) / 2 + 1
        gt = RBox(
            rng.uniform(margin, 256 - margin), rng.uniform(margin, 256 - margin),
            w, h, rng.uniform(-math.pi / 2, math.pi / 2),
        )
        targets = assign_rbox_targets(shapes, gt, DEFAULT_SCALE_RANGES)
        got = {(t.k, t.i, t.j): t for t in targets if t.is_positive}
        expected = enumerate_assignment(
            shapes, (gt.cx, gt.cy, gt.w, gt.h, gt.theta), DEFAULT_SCALE_RANGES
        )
        sets_equal &= set(got) == set(expected)
        for key, (cn, reg) in expected.items():
            worst = max(worst, abs(got[key].centerness - cn))
            worst = max(worst, max(abs(a - b) for a, b in zip(got[key].regression, reg)))
    report(
        "A06", sets_equal and worst <= 1e-9,
        f"100 scenes: positive sets identical to exhaustive enumeration, "
        f"targets within {worst:.2e} (<=1e-9)",
    )


def test_criterion_07_oriented_loss_verbatim_values():
    gt = RBox(31.0, -7.0, 23.0, 11.0, 0.61)
    at_match = oriented_box_loss(gt, gt, alpha=1.0, beta=1.0)
    square = RBox(5, 5, 9, 9, 0.2)
    turned = RBox(5, 5, 9, 9, 0.2 + math.pi / 2)
    quarter = oriented_box_loss(turned, square, alpha=1.0, beta=1.0)
    rng = np.random.default_rng(107)
    period_ok = True
    for _ in range(50):
        a = random_rbox(rng, span=15, dims=(2, 40))
        b = random_rbox(rng, span=15, dims=(2, 40))
        shifted = RBox(a.cx, a.cy, a.w, a.h, a.theta + math.pi)
        period_ok &= abs(
            oriented_box_loss(a, b) - oriented_box_loss(shifted, b)
        ) <= 1e-9
    ok = at_match == 0.5 and abs(quarter - 1.5) <= 1e-9 and period_ok
    report(
        "A07", ok,
        f"perfect match scores exactly 0.5; square quarter-turn {quarter:.12f} "
        f"(=1.5 within 1e-9); angle term period-pi invariant",
    )


def test_criterion_08_gradient_check_200_tuples():
    start = time.time()
    rng = np.random.default_rng(108)
    checked = 0
    failures = 0
    worst = 0.0
    while checked < 200:
        gt = RBox(rng.uniform(-20, 20), rng.uniform(-20, 20),
                  rng.uniform(5, 60), rng.uniform(5, 60),
                  rng.uniform(-math.pi / 2, math.pi / 2))
        pred = RBox(gt.cx + rng.uniform(-8, 8), gt.cy + rng.uniform(-8, 8),
                    gt.w * rng.uniform(0.7, 1.4), gt.h * rng.uniform(0.7, 1.4),
                    gt.theta + rng.uniform(-0.6, 0.6))
        alpha = float(rng.uniform(0.2, 2.0))
        beta = float(rng.uniform(0.2, 2.0))
        dtheta = abs(normalize_angle(pred.theta - gt.theta))
        if rbox_iou(pred, gt) <= 0.0 or center_distance(pred, gt) <= 0.1:
            continue
        if min(dtheta, abs(dtheta - math.pi / 2)) <= 0.01:
            continue
        checked += 1
        got = oriented_box_loss_grad(pred, gt, alpha, beta).vec
        steps = [1e-5 * max(1.0, abs(pred.cx)), 1e-5 * max(1.0, abs(pred.cy)),
                 1e-5 * pred.w, 1e-5 * pred.h, 1e-5]
        fd = fd_gradient(
            lambda p: oriented_box_loss(RBox(*p), gt, alpha, beta),
            [pred.cx, pred.cy, pred.w, pred.h, pred.theta],
            steps,
        )
        for g, f in zip(got, fd):
            err = abs(g - f)
            worst = max(worst, err)
            if err > max(1e-4, 0.02 * abs(f)):
                failures += 1
    elapsed = time.time() - start
    report(
        "A08", failures == 0 and elapsed <= 30.0,
        f"200 smooth-region tuples: 0 tolerance breaches "
        f"(worst abs err {worst:.2e}), {elapsed:.1f}s (<=30s)",
    )


def test_criterion_09_fit_convergence_100_trials():
    start = time.time()
    rng = np.random.default_rng(109)
    n_boundary = 15
    converged = 0
    for trial in range(100):
        while True:
            w = rng.uniform(14, 40)
            h = rng.uniform(14, 40)
            cx, cy = rng.uniform(60, 200, size=2)
            if trial < n_boundary:
                gt_theta = math.radians(rng.uniform(75, 89))
                init_theta = gt_theta + math.radians(rng.uniform(5, 30))  # wraps past +90
            else:
                gt_theta = rng.uniform(-math.pi / 2, math.pi / 2)
                init_theta = gt_theta + math.radians(rng.uniform(-45, 45))
            gt = RBox(cx, cy, w, h, gt_theta)
            offset = rng.uniform(3, 20)
            direction = rng.uniform(0, 2 * math.pi)
            init = RBox(cx + offset * math.cos(direction),
                        cy + offset * math.sin(direction),
                        w, h, normalize_angle(init_theta))
            if rbox_iou(init, gt) > 0.1:
                break
        result = fit_rbox(init, gt, alpha=1.0, beta=1.0, lr=0.5, steps=900)
        final = result.final_box
        center_err = math.hypot(final.cx - gt.cx, final.cy - gt.cy)
        angle_err = abs(math.sin(normalize_angle(final.theta - gt.theta)))
        if center_err < 1.0 and angle_err < 0.02 and not result.diverged:
            converged += 1
    elapsed = time.time() - start
    report(
        "A09", converged >= 95 and elapsed <= 120.0,
        f"{converged}/100 seeded fits converged (center<1px, |sin dtheta|<0.02, "
        f"{n_boundary} across the +-90deg boundary), {elapsed:.0f}s (<=120s)",
    )


def test_criterion_10_total_loss_decomposition():
    shapes = [(4, 4, 8), (2, 2, 16), (1, 1, 32), (1, 1, 64), (1, 1, 128)]
    gt = RBox(16, 16, 20, 12, 0.5)
    targets = assign_rbox_targets(shapes, gt)
    rng = np.random.default_rng(110)
    recon_ok = True
    for _ in range(25):
        weights = LossWeights(*rng.uniform(0.1, 3.0, size=3))
        preds = []
        for t in targets:
            cls = float(rng.uniform(0.01, 0.99))
            cn = float(rng.uniform(0.01, 0.99))
            if t.is_positive:
                l, tp, r, b, th = t.regression
                jit = rng.uniform(0.7, 1.3, size=4)
                reg = (l * jit[0], tp * jit[1], r * jit[2], b * jit[3],
                       th + rng.uniform(-0.2, 0.2))
            else:
                reg = (1.0, 1.0, 1.0, 1.0, 0.0)
            preds.append((cls, cn, reg))
        out = total_loss(preds, targets, weights)
        recon = (weights.mu1 * out.classification + weights.mu2 * out.centerness
                 + weights.mu3 * out.regression)
        recon_ok &= abs(out.total - recon) <= 1e-9

    base_preds = [(0.6, 0.5, (t.regression if t.is_positive else (1.0, 1.0, 1.0, 1.0, 0.0)))
                  for t in targets]
    unit = total_loss(base_preds, targets, LossWeights(1.0, 1.0, 1.0))
    doubled = total_loss(base_preds, targets, LossWeights(1.0, 1.0, 2.0))
    scaling_ok = (
        doubled.total - unit.total == pytest.approx(unit.regression, rel=1e-12)
        and doubled.classification == unit.classification
        and doubled.centerness == unit.centerness
    )
    defaults_ok = LossWeights() == LossWeights(1.0, 1.0, 1.0)
    report(
        "A10", recon_ok and scaling_ok and defaults_ok,
        "weighted sum reconstructs within 1e-9 over 25 random scenes; "
        "doubling the regression weight doubles exactly that term; defaults are 1.0",
    )


def test_criterion_11_planted_signal_pipeline():
    start = time.time()
    clean, _ = run_pipeline(0, 50, SynthConfig(noise=0.0), workers=2)
    noisy, _ = run_pipeline(0, 50, SynthConfig(noise=0.3), workers=2)
    elapsed = time.time() - start
    ok = (clean.acc50 == 1.0 and clean.acc75 >= 0.9
          and noisy.acc50 >= 0.8 and elapsed <= 120.0)
    report(
        "A11", ok,
        f"50 scenes noise 0: acc50={clean.acc50:.2f} (=1.0), acc75={clean.acc75:.2f} "
        f"(>=0.9); noise 0.3: acc50={noisy.acc50:.2f} (>=0.8); {elapsed:.0f}s (<=120s)",
    )


def test_criterion_12_metric_identities():
    rng = np.random.default_rng(112)
    dice_ok = True
    for _ in range(200):
        a = render_rbox_mask(24, 24, random_rbox(rng, span=6, dims=(4, 16)))
        b = render_rbox_mask(24, 24, random_rbox(rng, span=6, dims=(4, 16)))
        out = mask_metrics([(a, b)])
        dice_ok &= abs(out.mdice - 2 * out.miou / (1 + out.miou)) <= 1e-12

    pairs = []
    for _ in range(20):
        a = render_rbox_mask(32, 32, random_rbox(rng, span=4, dims=(6, 20)))
        b = render_rbox_mask(32, 32, random_rbox(rng, span=4, dims=(6, 20)))
        pairs.append((a, b))
    base = mask_metrics(pairs, gsd=1.0)
    scaled = mask_metrics(pairs, gsd=2.0)
    gsd_ok = (scaled.aae == 4 * base.aae) and (scaled.me == 2 * base.me)

    box_pairs = []
    for _ in range(80):
        gt = random_rbox(rng, span=10, dims=(5, 30))
        pred = RBox(gt.cx + rng.uniform(-5, 5), gt.cy + rng.uniform(-5, 5),
                    gt.w * rng.uniform(0.8, 1.2), gt.h * rng.uniform(0.8, 1.2),
                    gt.theta + rng.uniform(-0.3, 0.3))
        box_pairs.append((pred, gt))
    accs = [acc_at(box_pairs, float(t)) for t in np.linspace(0.05, 1.0, 20)]
    monotone_ok = all(a >= b for a, b in zip(accs, accs[1:]))
    report(
        "A12", dice_ok and gsd_ok and monotone_ok,
        "Dice = 2 IoU/(1+IoU) per pair within 1e-12 on 200 mask pairs; "
        "area error scales with gsd^2 and center error with gsd exactly; "
        "accuracy is monotone in the threshold",
    )


def test_criterion_13_planted_rotation_fraction():
    config = SynthConfig(rotated_fraction=0.6)
    boxes = [gt for gt, _ in synth_gt_batch(13, 200, config)]
    stats = rotation_stats(boxes, rot_thr_deg=1.0)
    report(
        "A13", stats.fraction_rotated == 0.600,
        f"generator planted 60% rotated instances; measured fraction "
        f"{stats.fraction_rotated:.3f} at the 1-degree threshold",
    )


def test_criterion_14_cli_determinism(tmp_path):
    ann = tmp_path / "ann.jsonl"
    main(["synth", "--seeds", "2", "--seed", "1", "--output", str(tmp_path / "seed-data")])
    (tmp_path / "seed-data" / "annotations.jsonl").rename(ann)
    preds = tmp_path / "preds.jsonl"
    with open(preds, "w") as handle:
        for line in ann.read_text().splitlines():
            d = json.loads(line)
            handle.write(json.dumps({"id": d["id"], "rbox": d["gt_rbox"]}) + "\n")

    runs = {
        "validate": ["validate", "--input", str(ann)],
        "convert": ["convert", "--input", str(ann)],
        "synth": None,  # handled as a directory below
        "clickmap": ["clickmap", "--height", "16", "--width", "16", "--click", "3,4"],
        "eval": ["eval", "--input", str(ann), "--pred", str(preds)],
        "gap": ["gap", "--seeds", "12", "--seed", "2", "--theta-min", "10",
                 "--theta-max", "80"],
        "stats": ["stats", "--seeds", "15", "--seed", "2", "--rotated-fraction", "0.6"],
        "cost": ["cost", "--seeds", "4"],
        "assign": ["assign", "--seeds", "4", "--seed", "5", "--criterion", "hbox"],
        "gradcheck": ["gradcheck", "--seeds", "10", "--seed", "4"],
        "fitbox": ["fitbox", "--steps", "40"],
        "pipeline": ["pipeline", "--seeds", "4", "--seed", "6", "--noise", "0.2"],
    }

    stable = []
    for name, argv in runs.items():
        if name == "synth":
            blobs = []
            for tag in ("a", "b"):
                out = tmp_path / f"synth-{tag}"
                assert main(["synth", "--seeds", "2", "--seed", "3", "--noise", "0.1",
                             "--output", str(out)]) == 0
                blobs.append({
                    str(p.relative_to(out)): p.read_bytes()
                    for p in sorted(out.rglob("*")) if p.is_file()
                })
            stable.append(blobs[0] == blobs[1])
            continue
        contents = []
        for tag in ("a", "b"):
            out = tmp_path / f"{name}-{tag}.out"
            extra = ["--workers", "1" if tag == "a" else "3"]
            main(argv + extra + ["--output", str(out)])
            contents.append(out.read_bytes())
        if name == "fitbox":
            plots = []
            for tag in ("c", "d"):
                plot = tmp_path / f"plot-{tag}.svg"
                assert main(["fitbox", "--steps", "40", "--plot", str(plot),
                             "--output", str(tmp_path / f"fit-{tag}.jsonl")]) == 0
                plots.append(plot.read_bytes())
            stable.append(plots[0] == plots[1])
        contents_equal = contents[0] == contents[1]
        stable.append(contents_equal)
        assert contents_equal, f"{name} artifacts differ across runs/workers"
    report(
        "A14", all(stable),
        f"{len(runs)} subcommands re-run (and with different --workers) "
        "produced byte-identical artifacts, plot file included",
    )
