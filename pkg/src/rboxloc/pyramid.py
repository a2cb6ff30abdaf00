"""Five-level feature pyramid values and their binary container format.

A pyramid stands in for the multi-scale output of a shared encoder:
levels k = 3..7, each a (d, h_k, w_k) grid with stride 2**k pixels.
Pyramids serialize to a flat little-endian container: an int32 header
(level count, then k/d/h/w per level) followed by the levels'
row-major float32 values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LEVEL_KS = (3, 4, 5, 6, 7)


@dataclass(frozen=True, eq=False)
class FeatureLevel:
    """One pyramid level: index k and a (d, h, w) value grid."""

    k: int
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.k not in LEVEL_KS:
            raise ValueError(f"level index must be in {LEVEL_KS}, got {self.k}")
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3 or min(values.shape) < 1:
            raise ValueError(f"level values must be (d, h, w), got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("level values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def stride(self) -> int:
        return 2 ** self.k

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> int:
        return self.values.shape[1]

    @property
    def w(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True, eq=False)
class FeaturePyramid:
    """Exactly five levels, k = 3..7 in order."""

    levels: tuple[FeatureLevel, ...]

    def __post_init__(self) -> None:
        ks = tuple(lv.k for lv in self.levels)
        if ks != LEVEL_KS:
            raise ValueError(f"pyramid needs levels k={LEVEL_KS} in order, got {ks}")

    def __iter__(self):
        return iter(self.levels)

    def __getitem__(self, idx: int) -> FeatureLevel:
        return self.levels[idx]

    def shapes(self) -> list[tuple[int, int, int]]:
        """Per-level (h, w, stride), the layout the assignment step needs."""
        return [(lv.h, lv.w, lv.stride) for lv in self.levels]


def spatially_consistent(pyr: FeaturePyramid) -> bool:
    """True when each level is the ceil-halving of the previous one.

    Encoder-produced pyramids satisfy this; hand-built test pyramids
    need not, so it is a check rather than a constructor invariant.
    """
    for prev, cur in zip(pyr.levels, pyr.levels[1:]):
        if cur.h != -(-prev.h // 2) or cur.w != -(-prev.w // 2):
            return False
    return True


def write_pyramid(pyr: FeaturePyramid, path: str | Path) -> None:
    """Serialize to the flat binary container."""
    parts = [struct.pack("<i", len(pyr.levels))]
    for lv in pyr.levels:
        parts.append(struct.pack("<4i", lv.k, lv.d, lv.h, lv.w))
    for lv in pyr.levels:
        parts.append(np.ascontiguousarray(lv.values, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_pyramid(path: str | Path) -> FeaturePyramid:
    """Parse the flat binary container back into a pyramid."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ValueError(f"truncated pyramid container: {path}")
    (count,) = struct.unpack_from("<i", raw, 0)
    offset = 4
    headers = []
    for _ in range(count):
        headers.append(struct.unpack_from("<4i", raw, offset))
        offset += 16
    levels = []
    for k, d, h, w in headers:
        n = d * h * w
        values = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(d, h, w)
        offset += 4 * n
        levels.append(FeatureLevel(k, values.astype(np.float64)))
    return FeaturePyramid(tuple(levels))
