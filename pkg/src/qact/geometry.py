"""Axis-aligned boxes and the overlap / distance metrics built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class BoundingBox:
    """Box in continuous pixel coordinates: left edge ``x``, top edge ``y``."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box needs positive size, got w={self.w}, h={self.h}")
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValueError(f"box has non-finite coordinates: {self}")

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> BoundingBox:
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def clip(self, width: float, height: float) -> BoundingBox | None:
        """Intersection with the frame ``[0, width) x [0, height)``; None if empty."""
        x1, y1 = max(self.x, 0.0), max(self.y, 0.0)
        x2, y2 = min(self.x2, float(width)), min(self.y2, float(height))
        if x2 <= x1 or y2 <= y1:
            return None
        return BoundingBox(x1, y1, x2 - x1, y2 - y1)


def intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BoundingBox, b: BoundingBox) -> float:
    if a == b:
        # (x + w) - x is not always w in floating point
        return 1.0
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    union = a.area() + b.area() - inter
    return min(1.0, inter / union)


def center_error(a: BoundingBox, b: BoundingBox) -> float:
    return math.hypot(a.cx - b.cx, a.cy - b.cy)
