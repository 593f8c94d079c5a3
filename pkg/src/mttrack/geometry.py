"""Bounding-box primitives shared by every other module.

Boxes are stored as (left, top, width, height) in pixel space, matching the
layout of benchmark annotation files. Normalized boxes store center + size in
[0, 1] because the temporal predictor and the distance-error computation both
consume centers. All fields are 64-bit floats.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


class BoxOutsideImageError(ValueError):
    """Raised when a box to be normalized lies entirely outside the image."""


@dataclass(frozen=True)
class BBox:
    """Pixel-space box: left edge, top edge, width, height."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for v in (self.x, self.y, self.w, self.h):
            if not math.isfinite(v):
                raise ValueError(f"non-finite box field in {self!r}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive size, got w={self.w}, h={self.h}")

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class NormBBox:
    """Normalized box: center and size divided by image dimensions."""

    cx: float
    cy: float
    nw: float
    nh: float

    def __post_init__(self):
        for name, v in (("cx", self.cx), ("cy", self.cy), ("nw", self.nw), ("nh", self.nh)):
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"normalized field {name}={v} outside [0, 1]")
        if self.nw <= 0 or self.nh <= 0:
            raise ValueError("normalized size must be strictly positive")


@dataclass(frozen=True)
class ImageDims:
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image dims must be positive, got {self.width}x{self.height}")


class ClampCounter:
    """Counts silent clamps of partially out-of-frame boxes, for diagnostics."""

    def __init__(self):
        self.clamped = 0

    def note(self):
        self.clamped += 1


#: module-level counter used when callers do not supply their own
default_clamp_counter = ClampCounter()


def normalize(box: BBox, dims: ImageDims, counter: ClampCounter | None = None) -> NormBBox:
    """Convert a pixel box to a normalized center/size box.

    A box entirely outside the image raises :class:`BoxOutsideImageError`.
    Partially outside boxes are clamped into [0, 1] silently, but the clamp is
    recorded on `counter` (real annotations contain such boxes).
    """
    if box.x >= dims.width or box.y >= dims.height or box.x + box.w <= 0 or box.y + box.h <= 0:
        raise BoxOutsideImageError(f"box {box.as_tuple()} entirely outside {dims.width}x{dims.height}")
    cx = (box.x + box.w / 2.0) / dims.width
    cy = (box.y + box.h / 2.0) / dims.height
    nw = box.w / dims.width
    nh = box.h / dims.height
    clamped = not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0 and nw <= 1.0 and nh <= 1.0)
    if clamped:
        (counter or default_clamp_counter).note()
    eps = 1e-12  # size must stay strictly positive after the clamp
    return NormBBox(
        cx=min(max(cx, 0.0), 1.0),
        cy=min(max(cy, 0.0), 1.0),
        nw=min(max(nw, eps), 1.0),
        nh=min(max(nh, eps), 1.0),
    )


def denormalize(nbox: NormBBox, dims: ImageDims) -> BBox:
    """Inverse of :func:`normalize` for in-image boxes."""
    w = nbox.nw * dims.width
    h = nbox.nh * dims.height
    return BBox(x=nbox.cx * dims.width - w / 2.0, y=nbox.cy * dims.height - h / 2.0, w=w, h=h)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two pixel boxes, in [0, 1]."""
    left = max(a.x, b.x)
    top = max(a.y, b.y)
    right = min(a.x + a.w, b.x + b.w)
    bottom = min(a.y + a.h, b.y + b.h)
    inter = max(0.0, right - left) * max(0.0, bottom - top)
    union = a.w * a.h + b.w * b.h - inter
    # (x + w) - x can exceed w by an ulp; equal boxes must score exactly 1
    return min(1.0, inter / union) if union > 0 else 0.0


def center_distance(a: BBox, b: BBox) -> float:
    """Euclidean distance between box centers, in pixels."""
    return math.hypot(a.cx - b.cx, a.cy - b.cy)
