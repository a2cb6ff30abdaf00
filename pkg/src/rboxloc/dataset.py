"""Annotation records, validation, synthetic scenes, masks, cost ledger.

Annotations travel as JSON Lines, one record per line, with the box
angle in degrees on disk (human-auditable) and radians in memory.
Serialization is canonical: fixed key order and degree values rounded
to nine decimals, so serialize -> parse -> serialize is byte-stable.

The synthetic generator builds desk-scale scenes with a planted
cross-view signal: reference-feature vectors inside the ground-truth
box point (up to noise) along the query pyramid's pooled descriptor,
everything else points nearly orthogonal to it.  Scenes are a pure
function of (seed, config) via a counter-based generator, so any scene
is reconstructible without storing it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .geometry import HBox, Point2, RBox, normalize_angle, points_in_rbox, rbox_to_hbox
from .pyramid import LEVEL_KS, FeatureLevel, FeaturePyramid

SPLITS = ("train", "val", "test")
VIEWS = ("drone", "ground")

HULL_TOL_PX = 1.0  # a stored hbox may exceed the rbox hull, never undercut it by more


@dataclass(frozen=True)
class AnnotationRecord:
    id: str
    query_image: str
    reference_image: str
    click: Point2
    gt_rbox: RBox
    gt_hbox: HBox | None = None
    split: str = "train"
    view: str = "drone"

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.view not in VIEWS:
            raise ValueError(f"view must be one of {VIEWS}, got {self.view!r}")


def _canon_deg(theta_rad: float) -> float:
    # nine decimals absorbs the radians round trip while keeping
    # human-entered degree values byte-stable
    return round(math.degrees(theta_rad), 9)


def record_to_json(rec: AnnotationRecord) -> str:
    """One canonical JSONL line for a record (fixed key order)."""
    payload: dict = {
        "id": rec.id,
        "query_image": rec.query_image,
        "reference_image": rec.reference_image,
        "click": [rec.click.x, rec.click.y],
        "gt_rbox": [rec.gt_rbox.cx, rec.gt_rbox.cy, rec.gt_rbox.w, rec.gt_rbox.h,
                    _canon_deg(rec.gt_rbox.theta)],
    }
    if rec.gt_hbox is not None:
        payload["gt_hbox"] = [rec.gt_hbox.xmin, rec.gt_hbox.ymin,
                              rec.gt_hbox.xmax, rec.gt_hbox.ymax]
    payload["split"] = rec.split
    payload["view"] = rec.view
    return json.dumps(payload)


def record_from_dict(d: dict) -> AnnotationRecord:
    """Build a typed record from a parsed JSON object (raises when invalid)."""
    click = d["click"]
    rb = d["gt_rbox"]
    hb = d.get("gt_hbox")
    return AnnotationRecord(
        id=str(d["id"]),
        query_image=str(d["query_image"]),
        reference_image=str(d["reference_image"]),
        click=Point2(float(click[0]), float(click[1])),
        gt_rbox=RBox(float(rb[0]), float(rb[1]), float(rb[2]), float(rb[3]),
                     normalize_angle(math.radians(float(rb[4])))),
        gt_hbox=None if hb is None else HBox(*(float(v) for v in hb)),
        split=d.get("split", "train"),
        view=d.get("view", "drone"),
    )


def read_annotations(path: str | Path) -> Iterator[AnnotationRecord]:
    """Strict reader: yields typed records, raising on the first bad line."""
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield record_from_dict(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad annotation record: {exc}") from exc


def write_annotations(records: Iterable[AnnotationRecord], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as handle:
        for rec in records:
            handle.write(record_to_json(rec) + "\n")
            n += 1
    return n


@dataclass(frozen=True)
class Violation:
    record_id: str  # record id, or "line:<n>" when no id could be parsed
    rule: str
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    n_records: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, record_id: str, rule: str, detail: str) -> None:
        self.violations.append(Violation(record_id, rule, detail))


def _check_numbers(report, rid, name, values, expect) -> bool:
    if not isinstance(values, (list, tuple)) or len(values) != expect:
        report.add(rid, "bad-field-shape", f"{name} must be a list of {expect} numbers")
        return False
    try:
        floats = [float(v) for v in values]
    except (TypeError, ValueError):
        report.add(rid, "bad-field-shape", f"{name} holds non-numeric entries")
        return False
    if not all(math.isfinite(v) for v in floats):
        report.add(rid, "nonfinite-field", f"{name} holds non-finite values")
        return False
    return True


def validate_lines(
    lines: Iterable[str],
    query_size: tuple[int, int] | None = None,
) -> ValidationReport:
    """Check a JSONL annotation stream against the schema invariants.

    Every violation is reported with the offending record's id and a
    rule name; unparseable lines are reported by line number and
    validation continues.  ``query_size`` (h, w), when known, enables
    the click-bounds check.
    """
    report = ValidationReport()
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        report.n_records += 1
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            report.add(f"line:{lineno}", "unparseable", str(exc))
            continue
        if not isinstance(d, dict):
            report.add(f"line:{lineno}", "unparseable", "record is not a JSON object")
            continue
        rid = str(d.get("id", f"line:{lineno}"))

        missing = [k for k in ("id", "query_image", "reference_image", "click", "gt_rbox") if k not in d]
        if missing:
            report.add(rid, "missing-field", ",".join(missing))
            continue

        rbox = None
        if _check_numbers(report, rid, "gt_rbox", d["gt_rbox"], 5):
            cx, cy, w, h, deg = (float(v) for v in d["gt_rbox"])
            if w <= 0 or h <= 0:
                report.add(rid, "nonpositive-extent", f"w={w}, h={h}")
            elif not -90.0 <= deg < 90.0:
                report.add(rid, "angle-out-of-range", f"theta={deg} deg")
            else:
                rbox = RBox(cx, cy, w, h, math.radians(deg))

        if _check_numbers(report, rid, "click", d["click"], 2) and query_size is not None:
            x, y = (float(v) for v in d["click"])
            qh, qw = query_size
            if not (0 <= x < qw and 0 <= y < qh):
                report.add(rid, "click-out-of-bounds", f"click=({x}, {y}) vs {qw}x{qh}")

        if d.get("gt_hbox") is not None and _check_numbers(report, rid, "gt_hbox", d["gt_hbox"], 4):
            xmin, ymin, xmax, ymax = (float(v) for v in d["gt_hbox"])
            if xmax <= xmin or ymax <= ymin:
                report.add(rid, "hbox-invalid", f"extents ({xmin},{ymin},{xmax},{ymax})")
            elif rbox is not None:
                hull = rbox_to_hbox(rbox)
                if (xmin > hull.xmin + HULL_TOL_PX or ymin > hull.ymin + HULL_TOL_PX
                        or xmax < hull.xmax - HULL_TOL_PX or ymax < hull.ymax - HULL_TOL_PX):
                    report.add(rid, "hbox-hull-mismatch",
                               f"stored hbox does not contain the rbox hull (tol {HULL_TOL_PX} px)")

        if d.get("split", "train") not in SPLITS:
            report.add(rid, "bad-split", str(d.get("split")))
        if d.get("view", "drone") not in VIEWS:
            report.add(rid, "bad-view", str(d.get("view")))
    return report


def validate_file(path: str | Path, query_size: tuple[int, int] | None = None) -> ValidationReport:
    with open(path, "r", encoding="utf-8") as handle:
        return validate_lines(handle, query_size)


def hbox_from_rbox_record(rec: AnnotationRecord) -> AnnotationRecord:
    """Derive the legacy axis-aligned annotation from the rotated one."""
    return replace(rec, gt_hbox=rbox_to_hbox(rec.gt_rbox))


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 256          # square reference raster, pixels
    query_size: int = 256
    box_size: tuple[float, float] = (16.0, 64.0)
    theta_range_deg: tuple[float, float] = (-85.0, 85.0)
    channels: int = 8
    noise: float = 0.0
    in_cos: float = 0.9            # planted cosine inside the GT box
    out_cos: float = 0.1           # planted cosine elsewhere
    rotated_fraction: float | None = None  # batch-level split; None = all from theta_range
    rotated_theta_deg: tuple[float, float] = (5.0, 85.0)  # |theta| band for forced-rotated scenes

    def __post_init__(self) -> None:
        if self.channels < 2:
            raise ValueError("need at least 2 channels to plant an orthogonal signal")
        if self.box_size[0] > self.box_size[1] or self.box_size[0] <= 0:
            raise ValueError(f"bad box size range {self.box_size}")
        if self.box_size[1] > self.image_size / 2:
            raise ValueError("boxes this large cannot be placed inside the raster")
        if self.noise < 0:
            raise ValueError("noise level must be non-negative")
        if not 0.0 <= self.out_cos < self.in_cos <= 1.0:
            raise ValueError("need 0 <= out_cos < in_cos <= 1")


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    seed: int
    scene_id: str
    image_size: int
    click: Point2
    gt_rbox: RBox
    query: FeaturePyramid
    reference: FeaturePyramid

    def record(self) -> AnnotationRecord:
        return AnnotationRecord(
            id=self.scene_id,
            query_image=f"synthetic://{self.scene_id}/query",
            reference_image=f"synthetic://{self.scene_id}/reference",
            click=self.click,
            gt_rbox=self.gt_rbox,
            gt_hbox=rbox_to_hbox(self.gt_rbox),
            split="test",
            view="drone",
        )


def _scene_rng(seed: int, stream: int) -> np.random.Generator:
    # Philox is counter-based: any (seed, stream) cell regenerates alone
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


def _level_shapes(image_size: int) -> list[tuple[int, int, int]]:
    return [(-(-image_size // 2 ** k), -(-image_size // 2 ** k), 2 ** k) for k in LEVEL_KS]


def _orthogonal_units(rng, u: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Random unit vectors orthogonal to u, one per spatial location."""
    g = rng.normal(size=(u.size,) + shape)
    g -= u[:, None, None] * np.tensordot(u, g, axes=(0, 0))[None]
    norms = np.linalg.norm(g, axis=0)
    bad = norms < 1e-9
    if np.any(bad):
        fallback = np.zeros_like(u)
        fallback[int(np.argmin(np.abs(u)))] = 1.0
        fallback -= (fallback @ u) * u
        g[:, bad] = (fallback / np.linalg.norm(fallback))[:, None]
        norms = np.linalg.norm(g, axis=0)
    return g / norms


def _draw_geometry(rng, config: SynthConfig, force_theta_deg: float | None) -> tuple[RBox, Point2]:
    size = config.image_size
    w = rng.uniform(*config.box_size)
    h = rng.uniform(*config.box_size)
    drawn = rng.uniform(*config.theta_range_deg)  # always drawn, keeps the stream aligned
    theta_deg = drawn if force_theta_deg is None else force_theta_deg
    theta = normalize_angle(math.radians(theta_deg))
    # place so the hull (worst case at 45 degrees) stays inside the raster
    margin = math.hypot(w, h) / 2.0 + 1.0
    if 2 * margin >= size:
        raise ValueError(f"box {w:.1f}x{h:.1f} cannot be placed in a {size} px raster")
    cx = rng.uniform(margin, size - margin)
    cy = rng.uniform(margin, size - margin)
    click = Point2(rng.uniform(0, config.query_size - 1e-6),
                   rng.uniform(0, config.query_size - 1e-6))
    return RBox(cx, cy, w, h, theta), click


def synth_gt(seed: int, config: SynthConfig = SynthConfig(), *, force_theta_deg: float | None = None) -> tuple[RBox, Point2]:
    """Geometry-only draw: the same (box, click) the full scene would carry."""
    return _draw_geometry(_scene_rng(seed, 0), config, force_theta_deg)


def synth_scene(seed: int, config: SynthConfig = SynthConfig(), *, force_theta_deg: float | None = None) -> SyntheticScene:
    """Generate one deterministic scene with a planted cross-view signal.

    The query pyramid pools exactly to a fixed unit descriptor (plus
    zero-spatial-mean noise); reference locations whose image points
    fall in the ground-truth box get feature vectors at cosine
    ``in_cos`` to that descriptor, all others at ``out_cos``, before
    noise is added.  ``force_theta_deg`` overrides the angle draw (used
    for planting exact rotation fractions in batches).
    """
    rng = _scene_rng(seed, 0)
    size = config.image_size
    gt, click = _draw_geometry(rng, config, force_theta_deg)

    d = config.channels
    u = np.zeros(d)
    u[0] = 1.0
    # fixed random rotation spreads the signal across channels
    mix = _scene_rng(seed, 1).normal(size=(d, d))
    q_mix, _ = np.linalg.qr(mix)
    u = q_mix @ u

    in_sin = math.sqrt(1.0 - config.in_cos ** 2)
    out_sin = math.sqrt(1.0 - config.out_cos ** 2)
    q_levels = []
    r_levels = []
    noise = config.noise
    for (lh, lw, stride), k in zip(_level_shapes(size), LEVEL_KS):
        qv = np.tile(u[:, None, None], (1, lh, lw))
        if noise > 0:
            eps = rng.normal(size=(d, lh, lw)) / math.sqrt(d)
            # zero the spatial mean so pooling still recovers the descriptor
            eps -= eps.mean(axis=(1, 2), keepdims=True)
            qv = qv + noise * eps
        q_levels.append(FeatureLevel(k, qv))

        half = stride // 2
        xs = half + stride * np.arange(lw, dtype=np.float64)
        ys = half + stride * np.arange(lh, dtype=np.float64)
        jj, ii = np.meshgrid(xs, ys)
        inside = points_in_rbox(jj, ii, gt)
        ortho = _orthogonal_units(rng, u, (lh, lw))
        cos_f = np.where(inside, config.in_cos, config.out_cos)
        sin_f = np.where(inside, in_sin, out_sin)
        rv = cos_f[None] * u[:, None, None] + sin_f[None] * ortho
        if noise > 0:
            rv = rv + noise * rng.normal(size=rv.shape) / math.sqrt(d)
        r_levels.append(FeatureLevel(k, rv))

    return SyntheticScene(
        seed=seed,
        scene_id=f"scene-{seed:08d}",
        image_size=size,
        click=click,
        gt_rbox=gt,
        query=FeaturePyramid(tuple(q_levels)),
        reference=FeaturePyramid(tuple(r_levels)),
    )


def batch_theta_plan(base_seed: int, n: int, config: SynthConfig) -> list[float | None]:
    """Per-scene forced angles implementing an exact rotated fraction.

    With ``rotated_fraction`` set, the first round(fraction*n) scenes of
    the batch draw |theta| from the rotated band (sign alternating by a
    seeded draw) and the rest are exactly axis-aligned; ordering is a
    deterministic seeded shuffle.  Returns None entries when no
    fraction is configured (free draw from the config range).
    """
    if config.rotated_fraction is None:
        return [None] * n
    n_rot = round(config.rotated_fraction * n)
    flags = [True] * n_rot + [False] * (n - n_rot)
    rng = _scene_rng(base_seed, 2)
    rng.shuffle(flags)
    plan: list[float | None] = []
    lo, hi = config.rotated_theta_deg
    for flag in flags:
        if flag:
            mag = rng.uniform(lo, hi)
            plan.append(mag if rng.uniform() < 0.5 else -mag)
        else:
            plan.append(0.0)
    return plan


def synth_batch(base_seed: int, n: int, config: SynthConfig = SynthConfig()) -> Iterator[SyntheticScene]:
    """Scenes for seeds base_seed..base_seed+n-1 (deterministic per seed)."""
    plan = batch_theta_plan(base_seed, n, config)
    for offset in range(n):
        yield synth_scene(base_seed + offset, config, force_theta_deg=plan[offset])


def synth_gt_batch(base_seed: int, n: int, config: SynthConfig = SynthConfig()) -> Iterator[tuple[RBox, Point2]]:
    """Geometry-only batch: same boxes/clicks as synth_batch, no features."""
    plan = batch_theta_plan(base_seed, n, config)
    for offset in range(n):
        yield synth_gt(base_seed + offset, config, force_theta_deg=plan[offset])


def render_rbox_mask(h: int, w: int, box: RBox) -> np.ndarray:
    """Boolean (h, w) mask of pixel centers covered by a rotated box."""
    jj, ii = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    return points_in_rbox(jj, ii, box)


# ---------------------------------------------------------------------------
# masks on disk: column-major run-length JSON, or single-channel images


def rle_encode(mask: np.ndarray) -> dict:
    """Column-major run-length encoding; counts start with background."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    flat = mask.flatten(order="F")
    counts = []
    current = False
    run = 0
    for bit in flat:
        if bit == current:
            run += 1
        else:
            counts.append(run)
            current = bool(bit)
            run = 1
    counts.append(run)
    return {"h": int(h), "w": int(w), "counts": counts}


def rle_decode(d: dict) -> np.ndarray:
    h, w = int(d["h"]), int(d["w"])
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for run in d["counts"]:
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    if pos != h * w:
        raise ValueError(f"run lengths sum to {pos}, expected {h * w}")
    return flat.reshape((h, w), order="F")


def load_mask(path: str | Path) -> np.ndarray:
    """Read a mask: RLE-JSON for .json files, single-channel image otherwise."""
    path = Path(path)
    if path.suffix == ".json":
        return rle_decode(json.loads(path.read_text(encoding="utf-8")))
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("L")) > 0


# ---------------------------------------------------------------------------
# annotation-cost accounting


@dataclass
class CostLedger:
    """Per-record annotation timings, grouped by annotation kind."""

    entries: list[tuple[str, float]] = field(default_factory=list)

    def add(self, kind: str, seconds: float) -> None:
        if seconds < 0 or not math.isfinite(seconds):
            raise ValueError(f"annotation time must be non-negative, got {seconds}")
        self.entries.append((kind, float(seconds)))


def cost_summary(ledger: CostLedger) -> dict:
    """Mean seconds per annotation kind and all pairwise cost ratios."""
    if not ledger.entries:
        raise ValueError("cost summary is undefined on an empty ledger")
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for kind, seconds in ledger.entries:
        sums[kind] = sums.get(kind, 0.0) + seconds
        counts[kind] = counts.get(kind, 0) + 1
    means = {kind: sums[kind] / counts[kind] for kind in sorted(sums)}
    ratios = {}
    for a in means:
        for b in means:
            if a != b and means[b] > 0:
                ratios[f"{a}/{b}"] = means[a] / means[b]
    return {"means": means, "counts": {k: counts[k] for k in sorted(counts)}, "ratios": ratios}
