"""Rotated-box cross-view geo-localization core library."""

from .geometry import (
    ConvexPolygon,
    HBox,
    Point2,
    RBox,
    center_distance,
    convex_intersect,
    hbox_iou,
    normalize_angle,
    point_in_rbox,
    polygon_area,
    rbox_corners,
    rbox_iou,
    rbox_to_hbox,
)
from .clickmap import attach_click_channel, make_click_map
from .pyramid import FeatureLevel, FeaturePyramid, read_pyramid, write_pyramid
from .attention import (
    attention_maps,
    cosine_score_map,
    global_average_pool,
    minmax_normalize,
    modulate,
    refine_pyramid,
)
from .assignment import (
    AnchorTarget,
    LocationTarget,
    assign_hbox_targets,
    assign_rbox_targets,
    assign_rbox_targets_multi,
    box_frame_offsets,
    centerness,
    feature_to_image,
    generate_anchors,
)
from .losses import (
    FitResult,
    LossBreakdown,
    LossWeights,
    centerness_bce,
    fit_rbox,
    focal_loss,
    iou_loss_hbox,
    oriented_box_loss,
    oriented_box_loss_grad,
    total_loss,
)
from .decode import (
    Prediction,
    RawPrediction,
    decode_hbox,
    decode_rbox,
    export_sam_prompt,
    fuse_score,
    rotated_nms,
    select_top1,
)
from .metrics import (
    EvalReport,
    acc_at,
    criterion_gap,
    mask_metrics,
    rotation_stats,
)
from .dataset import (
    AnnotationRecord,
    CostLedger,
    SynthConfig,
    SyntheticScene,
    cost_summary,
    hbox_from_rbox_record,
    read_annotations,
    render_rbox_mask,
    rle_decode,
    rle_encode,
    synth_batch,
    synth_scene,
    validate_file,
    validate_lines,
    write_annotations,
)
from .pipeline import PipelineKnobs, run_pipeline, run_scene, scene_detections, scene_loss

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
