"""Multi-template tracking with temporal path prediction and reliability-based selection."""

__version__ = "0.1.0"

from .geometry import BBox, ImageDims, NormBBox, center_distance, denormalize, iou, normalize

__all__ = [
    "BBox",
    "NormBBox",
    "ImageDims",
    "normalize",
    "denormalize",
    "iou",
    "center_distance",
    "__version__",
]
