"""Score-map fusion and candidate extraction.

Per-template score maps are combined by a weighted average, M = sum_i W_i m_i,
with the weights taken from the bag config. Candidates are then the k highest
cells of the fused map under a greedy spatial non-maximum suppression, so one
wide blob cannot occupy the whole candidate list.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import BBox


class FusionError(ValueError):
    """Inconsistent map shapes or weights."""


@dataclass(frozen=True)
class ScoreMap:
    """Grid of per-cell confidences plus the box each cell decodes to.

    scores: (H, W) float64 in [0, 1].
    boxes: (H, W, 4) float64, each cell holding (x, y, w, h) in pixels.
    """

    scores: np.ndarray
    boxes: np.ndarray

    def __post_init__(self):
        if self.scores.ndim != 2:
            raise FusionError(f"scores must be 2-D, got shape {self.scores.shape}")
        if self.boxes.shape != self.scores.shape + (4,):
            raise FusionError(
                f"boxes shape {self.boxes.shape} does not match scores {self.scores.shape}"
            )
        if not np.all(np.isfinite(self.scores)):
            raise FusionError("scores contain non-finite values")
        if self.scores.min() < 0.0 or self.scores.max() > 1.0:
            raise FusionError("scores must lie in [0, 1]")

    @property
    def grid_dims(self) -> tuple[int, int]:
        return self.scores.shape  # type: ignore[return-value]

    def cell_box(self, row: int, col: int) -> BBox:
        x, y, w, h = self.boxes[row, col]
        return BBox(float(x), float(y), float(w), float(h))


@dataclass(frozen=True)
class Candidate:
    box: BBox
    confidence: float
    cell: tuple[int, int]

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise FusionError(f"candidate confidence {self.confidence} outside [0, 1]")


def fuse(maps: Sequence[ScoreMap], weights: Sequence[float]) -> ScoreMap:
    """Weighted average of score maps; box grid from the dominant template.

    Each fused cell's box comes from the template whose weighted score at that
    cell is largest (averaging box geometry across templates would blend
    unrelated objects). Ties pick the lowest template index.
    """
    if len(maps) != len(weights):
        raise FusionError(f"{len(maps)} maps but {len(weights)} weights")
    if not maps:
        raise FusionError("need at least one map")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise FusionError(f"weights sum to {sum(weights)}, need 1 within 1e-9")
    dims = maps[0].grid_dims
    for i, m in enumerate(maps):
        if m.grid_dims != dims:
            raise FusionError(f"map {i} has grid {m.grid_dims}, expected {dims}")
    if len(maps) == 1:
        return maps[0]  # identity: no arithmetic, bitwise-equal result
    stack = np.stack([m.scores for m in maps])  # (n, H, W)
    w = np.asarray(weights, dtype=np.float64)
    fused_scores = np.einsum("i,ihw->hw", w, stack)
    # float error can push an exact-1 sum a hair over; clamp inside [0, 1]
    fused_scores = np.clip(fused_scores, 0.0, 1.0)
    dominant = np.argmax(stack * w[:, None, None], axis=0)  # (H, W)
    box_stack = np.stack([m.boxes for m in maps])  # (n, H, W, 4)
    rows, cols = np.indices(dims)
    fused_boxes = box_stack[dominant, rows, cols]
    return ScoreMap(scores=fused_scores, boxes=fused_boxes)


def top_candidates(score_map: ScoreMap, k: int = 10, nms_radius: int = 2) -> list[Candidate]:
    """k best cells under greedy NMS, score-descending.

    A picked cell suppresses every cell within Chebyshev distance nms_radius.
    Score ties break by (row, col) lexicographic order, so the output is fully
    deterministic. Fewer than k survivors is legal on small or flat maps.
    """
    if k < 1:
        raise FusionError(f"k must be >= 1, got {k}")
    h, w = score_map.grid_dims
    scores = score_map.scores
    flat_order = np.lexsort(
        (np.tile(np.arange(w), h), np.repeat(np.arange(h), w), -scores.ravel())
    )
    suppressed = np.zeros((h, w), dtype=bool)
    out: list[Candidate] = []
    for flat in flat_order:
        if len(out) == k:
            break
        r, c = divmod(int(flat), w)
        if suppressed[r, c]:
            continue
        out.append(
            Candidate(
                box=score_map.cell_box(r, c),
                confidence=float(scores[r, c]),
                cell=(r, c),
            )
        )
        r0, r1 = max(0, r - nms_radius), min(h, r + nms_radius + 1)
        c0, c1 = max(0, c - nms_radius), min(w, c + nms_radius + 1)
        suppressed[r0:r1, c0:c1] = True
    return out
