"""Core domain types shared across the toolkit.

All boxes are stored in normalized center format (cx, cy, w, h), expressed as
fractions of image width/height. Every other format (YOLO text, Label Studio
percent rectangles, pixel rectangles) converts at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

CLASS_NAMES = (
    "capacitor",
    "electrolytic_capacitor",
    "diode",
    "ic",
    "transistor",
    "resistor",
    "coil",
    "transformer",
)

SPLITS = ("train", "val")


@dataclass(frozen=True)
class ClassLabel:
    """One of the eight fixed component classes; id and name must correspond."""

    id: int
    name: str

    def __post_init__(self) -> None:
        if not 0 <= self.id < len(CLASS_NAMES):
            raise ValueError(f"class id {self.id} out of range 0..{len(CLASS_NAMES) - 1}")
        if CLASS_NAMES[self.id] != self.name:
            raise ValueError(
                f"class id {self.id} is {CLASS_NAMES[self.id]!r}, not {self.name!r}"
            )


def default_class_table() -> tuple[ClassLabel, ...]:
    return tuple(ClassLabel(i, name) for i, name in enumerate(CLASS_NAMES))


def class_by_id(table: tuple[ClassLabel, ...], class_id: int) -> ClassLabel:
    for label in table:
        if label.id == class_id:
            return label
    raise ValueError(f"unknown class id {class_id}")


def class_by_name(table: tuple[ClassLabel, ...], name: str) -> ClassLabel:
    for label in table:
        if label.name == name:
            return label
    raise ValueError(f"unknown class name {name!r}")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in normalized center format.

    Center must lie in [0, 1]; w and h in [0, 1]. Edges (cx +/- w/2, cy +/- h/2)
    may fall outside the unit square and are clamped only by explicit operations,
    never here. Zero-size boxes are representable so validators can report them;
    parsers reject them.
    """

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        for name, value in (("cx", self.cx), ("cy", self.cy), ("w", self.w), ("h", self.h)):
            if not math.isfinite(value):
                raise ValueError(f"box field {name} is not finite: {value!r}")
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"box center ({self.cx}, {self.cy}) outside [0, 1]")
        if not (0.0 <= self.w <= 1.0 and 0.0 <= self.h <= 1.0):
            raise ValueError(f"box size ({self.w}, {self.h}) outside [0, 1]")

    @property
    def is_degenerate(self) -> bool:
        return self.w == 0.0 or self.h == 0.0

    def corners(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) in normalized units; may extend past [0, 1]."""
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Annotation:
    """Ground-truth labeled box."""

    label: ClassLabel
    box: BoundingBox


@dataclass(frozen=True)
class Detection:
    """Model-predicted box with a confidence score in [0, 1]."""

    label: ClassLabel
    box: BoundingBox
    confidence: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.confidence) and 0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence!r} outside [0, 1]")


@dataclass(frozen=True)
class ImageRecord:
    image_path: str
    width: int
    height: int
    split: str
    annotations: tuple[Annotation, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image {self.image_path!r}: non-positive dimensions")
        if self.split not in SPLITS:
            raise ValueError(f"image {self.image_path!r}: unknown split {self.split!r}")


@dataclass(frozen=True)
class DatasetManifest:
    """All images of a dataset with their splits, annotations, and class table."""

    records: tuple[ImageRecord, ...] = field(default_factory=tuple)
    class_table: tuple[ClassLabel, ...] = field(default_factory=default_class_table)
