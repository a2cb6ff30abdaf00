"""Cross-view attention over feature pyramids.

For each level, the query grid is pooled to one global descriptor,
scored against every reference location by cosine similarity, the
scores are min-max scaled into an attention map, and the map gates the
per-location-normalized reference features.  Levels are independent;
all functions are pure.
"""

from __future__ import annotations

import numpy as np

from .pyramid import FeatureLevel, FeaturePyramid

# denominator guard for min-max scaling, and the zero-vector guard for
# cosine / unit normalization
DEFAULT_EPS = 1e-6
EPS_NORM = 1e-12


def global_average_pool(level: FeatureLevel) -> np.ndarray:
    """Spatial mean per channel: a single d-vector describing the grid."""
    return level.values.mean(axis=(1, 2))


def cosine_score_map(g: np.ndarray, level: FeatureLevel, *, eps_norm: float = EPS_NORM) -> np.ndarray:
    """Cosine similarity of ``g`` against every location of ``level``.

    Scores are in [-1, 1]; any location (or a guide vector) with norm
    below ``eps_norm`` scores 0.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (level.d,):
        raise ValueError(f"guide vector has {g.shape} components, level has d={level.d}")
    g_norm = float(np.linalg.norm(g))
    loc_norms = np.linalg.norm(level.values, axis=0)
    if g_norm < eps_norm:
        return np.zeros((level.h, level.w), dtype=np.float64)
    safe = np.where(loc_norms < eps_norm, 1.0, loc_norms)
    scores = np.tensordot(g / g_norm, level.values, axes=(0, 0)) / safe
    scores[loc_norms < eps_norm] = 0.0
    return np.clip(scores, -1.0, 1.0)


def minmax_normalize(scores: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Affinely rescale a score grid into [0, 1).

    The ``eps`` in the denominator keeps a constant grid at exactly 0
    and guarantees the open upper bound; being a positive affine map it
    preserves the argmax of the raw scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("score grid must be finite")
    lo = scores.min()
    hi = scores.max()
    return (scores - lo) / (hi - lo + eps)


def unit_normalize_locations(level: FeatureLevel, *, eps_norm: float = EPS_NORM) -> FeatureLevel:
    """L2-normalize each location's d-vector (zero vectors stay zero)."""
    norms = np.linalg.norm(level.values, axis=0)
    safe = np.where(norms < eps_norm, 1.0, norms)
    return FeatureLevel(level.k, level.values / safe)


def modulate(attn: np.ndarray, level: FeatureLevel) -> FeatureLevel:
    """Gate every channel of ``level`` by the spatial attention map."""
    attn = np.asarray(attn, dtype=np.float64)
    if attn.shape != (level.h, level.w):
        raise ValueError(f"attention shape {attn.shape} != level spatial {(level.h, level.w)}")
    return FeatureLevel(level.k, level.values * attn[None, :, :])


def attention_map(
    query_level: FeatureLevel,
    reference_level: FeatureLevel,
    eps: float = DEFAULT_EPS,
    *,
    eps_norm: float = EPS_NORM,
) -> np.ndarray:
    """Min-max-scaled cosine attention of one level pair."""
    if query_level.d != reference_level.d:
        raise ValueError(
            f"channel mismatch at k={query_level.k}: {query_level.d} vs {reference_level.d}"
        )
    g = global_average_pool(query_level)
    return minmax_normalize(cosine_score_map(g, reference_level, eps_norm=eps_norm), eps)


def attention_maps(
    query: FeaturePyramid,
    reference: FeaturePyramid,
    eps: float = DEFAULT_EPS,
    *,
    eps_norm: float = EPS_NORM,
) -> list[np.ndarray]:
    """Per-level attention maps for an aligned pyramid pair."""
    _check_aligned(query, reference)
    return [
        attention_map(q, r, eps, eps_norm=eps_norm)
        for q, r in zip(query.levels, reference.levels)
    ]


def refine_pyramid(
    query: FeaturePyramid,
    reference: FeaturePyramid,
    eps: float = DEFAULT_EPS,
    *,
    eps_norm: float = EPS_NORM,
) -> FeaturePyramid:
    """Refined reference pyramid: attention times unit-normalized features."""
    _check_aligned(query, reference)
    refined = []
    for q, r in zip(query.levels, reference.levels):
        attn = attention_map(q, r, eps, eps_norm=eps_norm)
        refined.append(modulate(attn, unit_normalize_locations(r, eps_norm=eps_norm)))
    return FeaturePyramid(tuple(refined))


def _check_aligned(query: FeaturePyramid, reference: FeaturePyramid) -> None:
    for q, r in zip(query.levels, reference.levels):
        if q.d != r.d:
            raise ValueError(f"channel mismatch at k={q.k}: {q.d} vs {r.d}")
