"""Active co-tracking with a Q-learned uncertainty margin."""

from qact.geometry import BoundingBox, center_error, iou

__version__ = "0.1.0"

__all__ = ["BoundingBox", "center_error", "iou", "__version__"]
