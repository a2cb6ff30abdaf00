"""Command-line entry point.

Subcommands cover the whole toolchain: annotation validation and
conversion, synthetic scene generation, click-map emission, metric
evaluation, the hull-vs-rotated criterion gap, rotation statistics,
gradient checking, gradient-descent box fitting, and the end-to-end
synthetic pipeline.  Reports are JSON with a fixed key order; tables go
to stdout and diagnostics to stderr, so machine output never mixes with
logs.  Runs with the same arguments and seed are byte-identical,
whatever ``--workers`` says.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .assignment import DEFAULT_SCALE_RANGES, check_scale_ranges
from .attention import DEFAULT_EPS, EPS_NORM
from .clickmap import make_click_map
from .dataset import (
    CostLedger,
    SynthConfig,
    cost_summary,
    hbox_from_rbox_record,
    read_annotations,
    render_rbox_mask,
    rle_encode,
    synth_batch,
    synth_gt_batch,
    validate_file,
    write_annotations,
)
from .decode import DEFAULT_NMS_THR, SCORE_FLOOR
from .geometry import RBox, HBox
from . import geometry
from .losses import FD_STEP, fit_rbox, oriented_box_loss, oriented_box_loss_grad
from .metrics import (
    DEFAULT_ROT_THR_DEG,
    acc_at,
    criterion_gap,
    mask_metrics,
    rotation_stats,
)
from .pipeline import PipelineKnobs, run_pipeline
from .pyramid import write_pyramid

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _want_color() -> bool:
    return sys.stdout.isatty() and not os.environ.get("NO_COLOR")


def _mark(ok: bool) -> str:
    word = "PASS" if ok else "FAIL"
    if _want_color():
        return f"\x1b[32m{word}\x1b[0m" if ok else f"\x1b[31m{word}\x1b[0m"
    return word


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_report(args, report: dict) -> None:
    text = json.dumps(report, indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _config_echo(args, keys) -> dict:
    return {key: getattr(args, key.replace("-", "_")) for key in keys}


def _table(rows: list[tuple[str, str]]) -> None:
    width = max((len(k) for k, _ in rows), default=0)
    for key, value in rows:
        print(f"{key.ljust(width)}  {value}")


def _parse_box(text: str) -> RBox:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 5:
        raise argparse.ArgumentTypeError("box must be cx,cy,w,h,theta_deg")
    return RBox(parts[0], parts[1], parts[2], parts[3], math.radians(parts[4]))


def _parse_ranges(text: str):
    edges = [float(v) for v in text.split(",")]
    bounds = [0.0] + edges + [math.inf]
    return check_scale_ranges(tuple(zip(bounds[:-1], bounds[1:])))


def _require_file(path: str | None, what: str = "--input") -> Path:
    if not path:
        raise UsageError(f"{what} is required for this subcommand")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"no such file: {p}")
    return p


def _synth_config(args) -> SynthConfig:
    return SynthConfig(
        image_size=args.image_size,
        box_size=(args.box_min, args.box_max),
        theta_range_deg=(args.theta_min, args.theta_max),
        channels=args.channels,
        noise=args.noise,
        rotated_fraction=args.rotated_fraction,
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args) -> int:
    path = _require_file(args.input)
    size = (args.query_h, args.query_w) if args.query_h and args.query_w else None
    report = validate_file(path, size)
    payload = {
        "command": "validate",
        "config": {"input": str(path), "query_size": size},
        "n_records": report.n_records,
        "n_violations": len(report.violations),
        "violations": [
            {"record_id": v.record_id, "rule": v.rule, "detail": v.detail}
            for v in report.violations
        ],
    }
    _write_report(args, payload)
    _table([("records", str(report.n_records)), ("violations", str(len(report.violations)))])
    for v in report.violations:
        print(f"  {v.record_id}: {v.rule} ({v.detail})")
    print(f"validate: {_mark(report.ok)}")
    return EXIT_OK if report.ok else EXIT_FAILURE


def cmd_convert(args) -> int:
    path = _require_file(args.input)
    if not args.output:
        _log("error: convert needs --output")
        return EXIT_USAGE
    records = [hbox_from_rbox_record(rec) for rec in read_annotations(path)]
    n = write_annotations(records, args.output)
    _table([("converted", str(n)), ("output", args.output)])
    return EXIT_OK


def cmd_synth(args) -> int:
    if not args.output:
        _log("error: synth needs --output (a directory)")
        return EXIT_USAGE
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "pyramids").mkdir(exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    config = _synth_config(args)

    records = []
    for scene in synth_batch(args.seed, args.seeds, config):
        records.append(scene.record())
        write_pyramid(scene.query, out / "pyramids" / f"{scene.scene_id}.query.bin")
        write_pyramid(scene.reference, out / "pyramids" / f"{scene.scene_id}.reference.bin")
        mask = render_rbox_mask(scene.image_size, scene.image_size, scene.gt_rbox)
        rle = rle_encode(mask)
        rle["id"] = scene.scene_id
        (out / "masks" / f"{scene.scene_id}.json").write_text(
            json.dumps(rle, sort_keys=True), encoding="utf-8"
        )
    write_annotations(records, out / "annotations.jsonl")
    _table([("scenes", str(len(records))), ("output", str(out))])
    return EXIT_OK


def cmd_clickmap(args) -> int:
    if not args.output:
        _log("error: clickmap needs --output (.npy)")
        return EXIT_USAGE
    x, y = (float(v) for v in args.click.split(","))
    grid = make_click_map(args.height, args.width, (x, y))
    with open(args.output, "wb") as handle:  # exact path, whatever the suffix
        np.save(handle, grid.astype(np.float32))
    _table([
        ("shape", f"{args.height}x{args.width}"),
        ("click", f"({x}, {y})"),
        ("max", f"{grid.max():.6f}"),
        ("min", f"{grid.min():.6f}"),
        ("output", args.output),
    ])
    return EXIT_OK


def _load_box_pairs(gt_path: Path, pred_path: Path):
    gt_by_id = {rec.id: rec for rec in read_annotations(gt_path)}
    pairs = []
    with open(pred_path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            rid = str(d["id"])
            if rid not in gt_by_id:
                raise ValueError(f"{pred_path}:{lineno}: no ground truth for id {rid!r}")
            if "rbox" in d:
                b = [float(v) for v in d["rbox"]]
                pred = RBox(b[0], b[1], b[2], b[3], math.radians(b[4]))
            elif "hbox" in d:
                pred = HBox(*(float(v) for v in d["hbox"]))
            else:
                raise ValueError(f"{pred_path}:{lineno}: prediction needs 'rbox' or 'hbox'")
            pairs.append((pred, gt_by_id[rid].gt_rbox))
    if not pairs:
        raise ValueError(f"no predictions found in {pred_path}")
    return pairs


def cmd_eval(args) -> int:
    gt_path = _require_file(args.input)
    pred_path = _require_file(args.pred, "--pred")
    pairs = _load_box_pairs(gt_path, pred_path)
    payload = {
        "command": "eval",
        "config": _config_echo(args, ["criterion", "gsd", "centroid_mode"]),
        "n": len(pairs),
        "acc25": acc_at(pairs, 0.25, args.criterion),
        "acc50": acc_at(pairs, 0.50, args.criterion),
        "acc75": acc_at(pairs, 0.75, args.criterion),
    }
    if args.gt_masks and args.pred_masks:
        mask_pairs = _load_mask_pairs(Path(args.pred_masks), Path(args.gt_masks))
        mm = mask_metrics(mask_pairs, gsd=args.gsd, centroid=args.centroid_mode)
        payload.update({"miou": mm.miou, "mdice": mm.mdice, "aae": mm.aae, "me": mm.me})
    _write_report(args, payload)
    _table([(k, f"{v:.4f}" if isinstance(v, float) else str(v))
            for k, v in payload.items() if k not in ("command", "config")])
    return EXIT_OK


def _load_masks(path: Path) -> dict:
    """id -> mask, from an RLE JSONL file or a directory of mask files."""
    from .dataset import load_mask, rle_decode

    masks = {}
    if path.is_dir():
        for entry in sorted(path.iterdir()):
            if entry.suffix in (".json", ".png", ".bmp", ".tif", ".tiff"):
                masks[entry.stem] = load_mask(entry)
        return masks
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            masks[str(d["id"])] = rle_decode(d)
    return masks


def _load_mask_pairs(pred_path: Path, gt_path: Path):
    preds = _load_masks(pred_path)
    gts = _load_masks(gt_path)
    pairs = []
    for rid in sorted(gts):
        if rid not in preds:
            raise ValueError(f"no predicted mask for id {rid!r}")
        pairs.append((preds[rid], gts[rid]))
    if not pairs:
        raise ValueError(f"no masks found in {gt_path}")
    return pairs


def cmd_gap(args) -> int:
    if args.input or args.pred:
        pairs = _load_box_pairs(_require_file(args.input), _require_file(args.pred, "--pred"))
        pairs = [(p if isinstance(p, RBox) else _hbox_rbox(p), g) for p, g in pairs]
        source = {"input": args.input, "pred": args.pred}
    else:
        # demonstration mode: rotated ground truths, hull boxes as predictions
        config = _synth_config(args)
        pairs = []
        for gt, _click in synth_gt_batch(args.seed, args.seeds, config):
            hull = geometry.rbox_to_hbox(gt)
            center = hull.center
            pairs.append((RBox(center.x, center.y, hull.w, hull.h, 0.0), gt))
        source = {"seeds": args.seeds, "seed": args.seed}
    report = criterion_gap(pairs, args.thr)
    payload = {
        "command": "gap",
        "config": {**source, "thr": args.thr},
        "n": len(pairs),
        "acc_hbox": report.acc_hbox,
        "acc_rbox": report.acc_rbox,
        "gap": report.gap,
    }
    _write_report(args, payload)
    _table([
        ("pairs", str(len(pairs))),
        ("acc_hbox", f"{report.acc_hbox:.4f}"),
        ("acc_rbox", f"{report.acc_rbox:.4f}"),
        ("gap", f"{report.gap:.4f}"),
    ])
    return EXIT_OK


def _hbox_rbox(b: HBox) -> RBox:
    c = b.center
    return RBox(c.x, c.y, b.w, b.h, 0.0)


def cmd_stats(args) -> int:
    if args.input:
        boxes = [rec.gt_rbox for rec in read_annotations(_require_file(args.input))]
        source = {"input": args.input}
    else:
        config = _synth_config(args)
        boxes = [gt for gt, _ in synth_gt_batch(args.seed, args.seeds, config)]
        source = {"seeds": args.seeds, "seed": args.seed,
                  "rotated_fraction": args.rotated_fraction}
    stats = rotation_stats(boxes, args.rot_thr)
    payload = {
        "command": "stats",
        "config": {**source, "rot_thr": args.rot_thr},
        "n": len(boxes),
        "fraction_rotated": stats.fraction_rotated,
        "histogram_deg_bins": list(stats.histogram),
    }
    _write_report(args, payload)
    _table([
        ("boxes", str(len(boxes))),
        ("fraction_rotated", f"{stats.fraction_rotated:.4f}"),
    ])
    return EXIT_OK


def cmd_cost(args) -> int:
    ledger = CostLedger()
    if args.input:
        with open(_require_file(args.input), "r", encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if line:
                    d = json.loads(line)
                    ledger.add(str(d["kind"]), float(d["seconds"]))
    else:
        # reference profile: rotated-box clicks against pixel-level masks
        for _ in range(args.seeds):
            ledger.add("rbox", args.rbox_seconds)
            ledger.add("mask", args.rbox_seconds * args.mask_factor)
    summary = cost_summary(ledger)
    payload = {"command": "cost", "config": {"input": args.input}, **summary}
    _write_report(args, payload)
    _table([(k, f"{v:.3f}") for k, v in summary["means"].items()])
    return EXIT_OK


def cmd_assign(args) -> int:
    from .assignment import assign_hbox_targets, assign_rbox_targets, generate_anchors
    from .dataset import synth_gt_batch
    from .losses import iou_loss_hbox

    size = args.image_size
    shapes = [(-(-size // 2 ** k), -(-size // 2 ** k), 2 ** k) for k in range(3, 8)]
    if args.input:
        boxes = [rec.gt_rbox for rec in read_annotations(_require_file(args.input))]
        source = {"input": args.input}
    else:
        boxes = [gt for gt, _ in synth_gt_batch(args.seed, args.seeds, _synth_config(args))]
        source = {"seeds": args.seeds, "seed": args.seed}

    n_pos = 0
    n_loc = 0
    cn_sum = 0.0
    for gt in boxes:
        targets = assign_rbox_targets(shapes, gt, args.scale_ranges)
        n_loc += len(targets)
        for t in targets:
            if t.is_positive:
                n_pos += 1
                cn_sum += t.centerness
    payload = {
        "command": "assign",
        "config": {
            **source,
            "image_size": size,
            "scale_ranges": [[lo, hi if math.isfinite(hi) else "inf"]
                             for lo, hi in args.scale_ranges],
            "pos_thr": args.pos_thr,
            "neg_thr": args.neg_thr,
            "anchor_scale": args.anchor_scale,
            "iou_loss": args.iou_loss,
            "criterion": args.criterion,
        },
        "n_boxes": len(boxes),
        "locations_per_box": n_loc // max(len(boxes), 1),
        "positives": n_pos,
        "mean_positives_per_box": n_pos / max(len(boxes), 1),
        "mean_centerness": cn_sum / max(n_pos, 1),
    }

    if args.criterion == "hbox":
        anchors = generate_anchors(shapes, args.anchor_scale)
        counts = {"positive": 0, "negative": 0, "ignore": 0}
        loss_sum = 0.0
        for gt in boxes:
            hull = geometry.rbox_to_hbox(gt)
            for tgt, anchor in zip(
                assign_hbox_targets(anchors, hull, args.pos_thr, args.neg_thr), anchors
            ):
                counts[tgt.label] += 1
                if tgt.label == "positive":
                    loss_sum += iou_loss_hbox(anchor, hull, args.iou_loss)
        payload["anchors"] = {
            **counts,
            "mean_positive_iou_loss": loss_sum / max(counts["positive"], 1),
        }

    _write_report(args, payload)
    _table([
        ("boxes", str(len(boxes))),
        ("positives", str(n_pos)),
        ("mean_pos/box", f"{payload['mean_positives_per_box']:.2f}"),
        ("mean_centerness", f"{payload['mean_centerness']:.4f}"),
    ])
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([args.seed, 11])))
    worst_abs = 0.0
    failures = 0
    checked = 0
    while checked < args.seeds:
        gt = RBox(rng.uniform(-20, 20), rng.uniform(-20, 20),
                  rng.uniform(5, 60), rng.uniform(5, 60), rng.uniform(-math.pi / 2, math.pi / 2))
        pred = RBox(gt.cx + rng.uniform(-8, 8), gt.cy + rng.uniform(-8, 8),
                    gt.w * rng.uniform(0.7, 1.4), gt.h * rng.uniform(0.7, 1.4),
                    gt.theta + rng.uniform(-0.6, 0.6))
        alpha = float(rng.uniform(0.2, 2.0))
        beta = float(rng.uniform(0.2, 2.0))
        dtheta = abs(geometry.normalize_angle(pred.theta - gt.theta))
        if geometry.rbox_iou(pred, gt) <= 0.0 or geometry.center_distance(pred, gt) <= 0.1:
            continue
        if min(dtheta, abs(dtheta - math.pi / 2)) <= 0.01:
            continue
        checked += 1
        grad = oriented_box_loss_grad(pred, gt, alpha, beta, fd_step=args.fd_step).vec
        fd = _fd_loss_grad(pred, gt, alpha, beta)
        for g, f in zip(grad, fd):
            err = abs(g - f)
            worst_abs = max(worst_abs, err)
            if err > max(1e-4, 0.02 * abs(f)):
                failures += 1
    ok = failures == 0
    payload = {
        "command": "gradcheck",
        "config": _config_echo(args, ["seeds", "seed", "alpha", "beta", "fd_step"]),
        "n": checked,
        "failures": failures,
        "max_abs_err": worst_abs,
        "pass": ok,
    }
    _write_report(args, payload)
    _table([
        ("tuples", str(checked)),
        ("failures", str(failures)),
        ("max_abs_err", f"{worst_abs:.3e}"),
        ("gradcheck", _mark(ok)),
    ])
    return EXIT_OK if ok else EXIT_FAILURE


def _fd_loss_grad(pred: RBox, gt: RBox, alpha: float, beta: float, step_rel: float = 1e-5):
    params = [pred.cx, pred.cy, pred.w, pred.h, pred.theta]
    scales = [max(1.0, abs(pred.cx)), max(1.0, abs(pred.cy)), pred.w, pred.h, 1.0]
    out = []
    for idx in range(5):
        h = step_rel * scales[idx]
        lo, hi = params.copy(), params.copy()
        lo[idx] -= h
        hi[idx] += h
        out.append(
            (oriented_box_loss(RBox(*hi), gt, alpha, beta)
             - oriented_box_loss(RBox(*lo), gt, alpha, beta)) / (2 * h)
        )
    return out


def cmd_fitbox(args) -> int:
    gt = args.gt if args.gt else RBox(128.0, 128.0, 40.0, 20.0, math.radians(30.0))
    if args.init:
        init = args.init
    else:
        init = RBox(gt.cx + 10.0, gt.cy, gt.w, gt.h, gt.theta)
    result = fit_rbox(init, gt, alpha=args.alpha, beta=args.beta,
                      lr=args.lr, steps=args.steps, distance_mode=args.distance_mode)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as handle:
            for step, (box, loss) in enumerate(result.trajectory):
                handle.write(json.dumps({
                    "step": step,
                    "box": [box.cx, box.cy, box.w, box.h, math.degrees(box.theta)],
                    "loss": loss,
                }) + "\n")
    if args.plot:
        _plot_losses([loss for _, loss in result.trajectory], args.plot)
    final_box, final_loss = result.trajectory[-1]
    _table([
        ("steps", str(len(result.trajectory) - 1)),
        ("initial_loss", f"{result.initial_loss:.6f}"),
        ("final_loss", f"{final_loss:.6f}"),
        ("center_err", f"{math.hypot(final_box.cx - gt.cx, final_box.cy - gt.cy):.4f}"),
        ("diverged", str(result.diverged)),
    ])
    return EXIT_FAILURE if result.diverged else EXIT_OK


def _plot_losses(losses: list[float], path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "rboxloc"
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(losses)), losses)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title("box fit: loss per descent step")
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None} if path.endswith(".svg") else None)
    plt.close(fig)


def cmd_pipeline(args) -> int:
    config = _synth_config(args)
    knobs = PipelineKnobs(eps=args.eps, eps_norm=args.eps_norm,
                          score_floor=args.score_floor,
                          scale_ranges=args.scale_ranges)
    report, rows = run_pipeline(args.seed, args.seeds, config, knobs, workers=args.workers)
    loss_mean = _mean_scene_loss(args, config, knobs)
    # the worker count is an execution detail, not part of the result,
    # so it stays out of the (byte-compared) report
    payload = {
        "command": "pipeline",
        "config": {
            **_config_echo(args, ["seeds", "seed", "noise", "eps", "eps_norm", "score_floor",
                                  "alpha", "beta", "mu1", "mu2", "mu3"]),
            "image_size": args.image_size,
            "channels": args.channels,
        },
        "n": report.n,
        "acc25": report.acc25,
        "acc50": report.acc50,
        "acc75": report.acc75,
        "loss": loss_mean,
    }
    _write_report(args, payload)
    if args.dump_scenes:
        _dump_scene_detections(args, config, knobs, rows)
    if args.sam_prompts:
        _dump_sam_prompts(args, config, knobs)
    _table([
        ("scenes", str(report.n)),
        ("acc25", f"{report.acc25:.4f}"),
        ("acc50", f"{report.acc50:.4f}"),
        ("acc75", f"{report.acc75:.4f}"),
    ])
    return EXIT_OK


def _mean_scene_loss(args, config, knobs) -> dict:
    from .dataset import batch_theta_plan, synth_scene
    from .losses import LossWeights
    from .pipeline import scene_loss

    weights = LossWeights(args.mu1, args.mu2, args.mu3)
    plan = batch_theta_plan(args.seed, args.seeds, config)
    sums = {"classification": 0.0, "centerness": 0.0, "regression": 0.0, "total": 0.0}
    for offset in range(args.seeds):
        scene = synth_scene(args.seed + offset, config, force_theta_deg=plan[offset])
        out = scene_loss(scene, config.noise, knobs, weights, args.alpha, args.beta)
        sums["classification"] += out.classification
        sums["centerness"] += out.centerness
        sums["regression"] += out.regression
        sums["total"] += out.total
    return {key: value / args.seeds for key, value in sums.items()}


def _dump_scene_detections(args, config, knobs, rows) -> None:
    from .dataset import batch_theta_plan, synth_scene
    from .pipeline import scene_detections

    plan = batch_theta_plan(args.seed, args.seeds, config)
    with open(args.dump_scenes, "w", encoding="utf-8") as handle:
        for offset, row in enumerate(rows):
            scene = synth_scene(args.seed + offset, config, force_theta_deg=plan[offset])
            kept = scene_detections(scene, config.noise, knobs, nms_thr=args.nms_thr)
            row = dict(row)
            row["detections"] = [
                {"box": [p.box.cx, p.box.cy, p.box.w, p.box.h, math.degrees(p.box.theta)],
                 "score": p.score}
                for p in kept[:10]
            ]
            handle.write(json.dumps(row) + "\n")


def _dump_sam_prompts(args, config, knobs) -> None:
    from .dataset import batch_theta_plan, synth_scene
    from .decode import export_sam_prompt
    from .pipeline import run_scene

    plan = batch_theta_plan(args.seed, args.seeds, config)
    with open(args.sam_prompts, "w", encoding="utf-8") as handle:
        for offset in range(args.seeds):
            scene = synth_scene(args.seed + offset, config, force_theta_deg=plan[offset])
            top, _gt = run_scene(scene, config.noise, knobs)
            record = export_sam_prompt(top, args.sam_mode, image_id=scene.scene_id)
            handle.write(json.dumps(record) + "\n")


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rboxloc",
        description="rotated-box cross-view geo-localization toolkit",
    )
    parser.add_argument("--version", action="version", version=f"rboxloc {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="input file (JSONL unless stated otherwise)")
    common.add_argument("--output", help="output path for the JSON report / artifact")
    common.add_argument("--seed", type=int, default=0, help="base random seed")
    common.add_argument("--seeds", type=int, default=100, help="number of seeded cases")
    common.add_argument("--alpha", type=float, default=1.0, help="center-distance weight")
    common.add_argument("--beta", type=float, default=1.0, help="angle-term weight")
    common.add_argument("--mu1", type=float, default=1.0, help="classification term weight")
    common.add_argument("--mu2", type=float, default=1.0, help="centerness term weight")
    common.add_argument("--mu3", type=float, default=1.0, help="regression term weight")
    common.add_argument("--eps", type=float, default=DEFAULT_EPS, help="min-max denominator guard")
    common.add_argument("--eps-norm", type=float, default=EPS_NORM, help="zero-vector guard")
    common.add_argument("--gsd", type=float, default=1.0, help="ground sample distance, m/px")
    common.add_argument("--criterion", choices=("rbox", "hbox"), default="rbox")
    common.add_argument("--thr", type=float, default=0.5, help="IoU threshold (fraction)")
    common.add_argument("--steps", type=int, default=500, help="descent steps")
    common.add_argument("--lr", type=float, default=0.5, help="descent learning rate")
    common.add_argument("--noise", type=float, default=0.0, help="synthetic noise level")
    common.add_argument("--workers", type=int, default=1, help="parallel scene workers")
    common.add_argument("--fd-step", type=float, default=FD_STEP, help="IoU finite-difference step")
    common.add_argument("--nms-thr", type=float, default=DEFAULT_NMS_THR, help="suppression IoU")
    common.add_argument("--score-floor", type=float, default=SCORE_FLOOR, help="selection floor")
    common.add_argument("--rot-thr", type=float, default=DEFAULT_ROT_THR_DEG,
                        help="rotation threshold, degrees")
    common.add_argument("--pos-thr", type=float, default=0.5, help="anchor positive IoU")
    common.add_argument("--neg-thr", type=float, default=0.4, help="anchor negative IoU")
    common.add_argument("--anchor-scale", type=float, default=4.0, help="anchor side in strides")
    common.add_argument("--tau-area", type=float, default=geometry.TAU_AREA,
                        help="empty-intersection area floor, px^2")
    common.add_argument("--tau-col", type=float, default=geometry.TAU_COL,
                        help="clipping vertex merge tolerance, px")
    common.add_argument("--distance-mode", choices=("sigmoid", "centered"), default="sigmoid")
    common.add_argument("--iou-loss", choices=("linear", "log"), default="linear",
                        help="axis-aligned IoU loss form")
    common.add_argument("--centroid-mode", choices=("mask", "bbox"), default="mask")
    common.add_argument("--scale-ranges", type=_parse_ranges,
                        default=DEFAULT_SCALE_RANGES,
                        help="comma-separated inner range edges, e.g. 64,128,256,512")
    common.add_argument("--image-size", type=int, default=256, help="synthetic raster size")
    common.add_argument("--channels", type=int, default=8, help="synthetic pyramid channels")
    common.add_argument("--box-min", type=float, default=16.0, help="synthetic min box side")
    common.add_argument("--box-max", type=float, default=64.0, help="synthetic max box side")
    common.add_argument("--theta-min", type=float, default=-85.0, help="synthetic min angle, deg")
    common.add_argument("--theta-max", type=float, default=85.0, help="synthetic max angle, deg")
    common.add_argument("--rotated-fraction", type=float, default=None,
                        help="plant exactly this fraction of rotated scenes")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check an annotation file")
    p.add_argument("--query-h", type=int, default=0, help="query image height, for click bounds")
    p.add_argument("--query-w", type=int, default=0, help="query image width, for click bounds")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("convert", parents=[common], help="derive hbox annotations from rbox ones")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic scene batch to disk")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("clickmap", parents=[common], help="emit a click proximity map (.npy)")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--click", required=True, help="x,y in query pixels")
    p.set_defaults(func=cmd_clickmap)

    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("--pred", help="prediction JSONL ({'id', 'rbox'|'hbox'})")
    p.add_argument("--gt-masks", help="ground-truth masks JSONL (RLE records with id)")
    p.add_argument("--pred-masks", help="predicted masks JSONL (RLE records with id)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gap", parents=[common],
                       help="hull-criterion vs rotated-criterion accuracy gap")
    p.add_argument("--pred", help="optional prediction JSONL; default: synthetic demo")
    p.set_defaults(func=cmd_gap)

    p = sub.add_parser("stats", parents=[common], help="rotation statistics of annotations")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("cost", parents=[common], help="annotation-cost summary")
    p.add_argument("--rbox-seconds", type=float, default=9.0,
                   help="seconds per rotated-box annotation")
    p.add_argument("--mask-factor", type=float, default=15.0,
                   help="mask cost as a multiple of box cost")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("assign", parents=[common],
                       help="target-assignment statistics for annotations or synthetic boxes")
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="verify analytic gradients against finite differences")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("fitbox", parents=[common], help="gradient-descent box fitting demo")
    p.add_argument("--init", type=_parse_box, help="cx,cy,w,h,theta_deg")
    p.add_argument("--gt", type=_parse_box, help="cx,cy,w,h,theta_deg")
    p.add_argument("--plot", help="write a loss-vs-step plot (svg)")
    p.set_defaults(func=cmd_fitbox)

    p = sub.add_parser("pipeline", parents=[common],
                       help="synthetic end-to-end run: scenes to accuracy report")
    p.add_argument("--dump-scenes", help="per-scene JSONL dump incl. suppressed detections")
    p.add_argument("--sam-prompts", help="write segmentation-prompt JSONL for the top boxes")
    p.add_argument("--sam-mode", choices=("hbox", "rbox-corners"), default="hbox")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # process-wide geometry tolerances (echoed in reports via their flags)
    geometry.TAU_AREA = args.tau_area
    geometry.TAU_COL = args.tau_col
    try:
        return args.func(args)
    except (UsageError, ValueError, OSError) as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
