"""Axis-aligned boxes and region proposals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import math

import numpy as np

from vild import kernels
from vild.errors import DataFormatError


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with x1 < x2 and y1 < y2."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise DataFormatError(f"box coordinate {name} is not finite: {v}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise DataFormatError(
                f"degenerate box: ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def to_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    @classmethod
    def from_sequence(cls, coords: Sequence[float]) -> Box:
        vals = list(coords)
        if len(vals) != 4:
            raise DataFormatError(f"box needs 4 coordinates, got {len(vals)}")
        return cls(*(float(v) for v in vals))


@dataclass(frozen=True, eq=False)
class Proposal:
    """Region proposal: box, objectness, backbone feature, and optionally
    the teacher embedding of its crop."""

    box: Box
    objectness: float
    feature: np.ndarray
    teacher: np.ndarray | None = None

    def __post_init__(self):
        if not (0.0 <= self.objectness <= 1.0):
            raise DataFormatError(
                f"objectness must lie in [0, 1], got {self.objectness}"
            )


def boxes_to_array(boxes: Sequence[Box]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.stack([b.to_array() for b in boxes])


def iou(a: Box, b: Box) -> float:
    """IoU of two boxes."""
    m = kernels.iou_matrix(a.to_array()[None, :], b.to_array()[None, :])
    return float(m[0, 0])


def iou_matrix(boxes_a: Sequence[Box], boxes_b: Sequence[Box]) -> np.ndarray:
    """Pairwise IoU matrix of two box sequences."""
    return kernels.iou_matrix(boxes_to_array(boxes_a), boxes_to_array(boxes_b))
