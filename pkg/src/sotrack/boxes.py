"""Axis-aligned boxes shared by every stage of the tracker."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    """(x, y) is the top-left corner, (w, h) the extent, all in pixels."""

    x: float
    y: float
    w: float
    h: float

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def center(self) -> tuple[float, float]:
        return (self.cx, self.cy)

    @property
    def area(self) -> float:
        return max(self.w, 0.0) * max(self.h, 0.0)

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def is_valid(self) -> bool:
        vals = (self.x, self.y, self.w, self.h)
        return all(math.isfinite(v) for v in vals) and self.w > 0 and self.h > 0

    def translate(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x + dx, self.y + dy, self.w, self.h)

    def resize_about_center(self, w: float, h: float) -> "BoundingBox":
        return BoundingBox.from_center(self.cx, self.cy, w, h)

    def scaled(self, factor: float) -> "BoundingBox":
        """Scale coordinates and extent (image rescaling, not box growth)."""
        return BoundingBox(self.x * factor, self.y * factor, self.w * factor, self.h * factor)

    def clamp_to(self, width: int, height: int, min_size: float = 1.0) -> "BoundingBox":
        """Keep the box inside a width x height frame with at least min_size extent."""
        w = min(max(self.w, min_size), float(width))
        h = min(max(self.h, min_size), float(height))
        x = min(max(self.x, 0.0), width - w)
        y = min(max(self.y, 0.0), height - h)
        return BoundingBox(x, y, w, h)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=np.float64)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0 when either box has no area."""
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def center_error(a: BoundingBox, b: BoundingBox) -> float:
    return math.hypot(a.cx - b.cx, a.cy - b.cy)


def min_cover(boxes: Iterable[BoundingBox]) -> BoundingBox:
    """Smallest axis-aligned rectangle containing every input box."""
    boxes = list(boxes)
    if len(boxes) < 2:
        raise ValueError("min_cover needs at least two boxes")
    x1 = min(b.x for b in boxes)
    y1 = min(b.y for b in boxes)
    x2 = max(b.x2 for b in boxes)
    y2 = max(b.y2 for b in boxes)
    return BoundingBox(x1, y1, x2 - x1, y2 - y1)
