"""Parsers and writers for the on-disk interchange formats.

Formats handled here:

* YOLO label file: one annotation per line, ``class_id cx cy w h``, values
  normalized to image dimensions, LF line endings.
* Detection file: same convention with a confidence column,
  ``class_id confidence cx cy w h``.
* Label Studio JSON export with percent-unit rectangle annotations.
* Dataset manifest: a single JSON document listing records, splits, and the
  class table.

Parsing is strict by default; ``lenient=True`` clamps out-of-range values into
their legal interval and logs a warning instead of raising. Degenerate sizes
(w or h <= 0) are rejected in both modes.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

from .types import (
    Annotation,
    BoundingBox,
    ClassLabel,
    DatasetManifest,
    Detection,
    ImageRecord,
    SPLITS,
    class_by_id,
    default_class_table,
)

logger = logging.getLogger(__name__)


class LabelParseError(ValueError):
    """Raised on malformed label/detection/export content; carries a line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _clamp(value: float, lo: float, hi: float) -> float:
    return min(max(value, lo), hi)


def _parse_float(token: str, what: str, line: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise LabelParseError(f"non-numeric {what} {token!r}", line) from None
    if not math.isfinite(value):
        raise LabelParseError(f"non-finite {what} {token!r}", line)
    return value


def _parse_class(token: str, classes: Sequence[ClassLabel], line: int) -> ClassLabel:
    try:
        class_id = int(token)
    except ValueError:
        raise LabelParseError(f"non-integer class id {token!r}", line) from None
    try:
        return class_by_id(tuple(classes), class_id)
    except ValueError:
        raise LabelParseError(f"class id {class_id} out of range", line) from None


def _parse_box(fields: Sequence[str], line: int, lenient: bool) -> BoundingBox:
    cx, cy, w, h = (
        _parse_float(fields[0], "cx", line),
        _parse_float(fields[1], "cy", line),
        _parse_float(fields[2], "w", line),
        _parse_float(fields[3], "h", line),
    )
    if w <= 0 or h <= 0:
        raise LabelParseError(f"degenerate box size {w} x {h}", line)
    if lenient:
        clamped = (_clamp(cx, 0, 1), _clamp(cy, 0, 1), min(w, 1.0), min(h, 1.0))
        if clamped != (cx, cy, w, h):
            logger.warning("line %d: box (%g, %g, %g, %g) clamped into range", line, cx, cy, w, h)
        cx, cy, w, h = clamped
    try:
        return BoundingBox(cx, cy, w, h)
    except ValueError as exc:
        raise LabelParseError(str(exc), line) from None


def parse_yolo_labels(
    text: str,
    classes: Sequence[ClassLabel] | None = None,
    lenient: bool = False,
) -> list[Annotation]:
    """Parse YOLO-format label text into annotations, preserving line order."""
    classes = tuple(classes) if classes is not None else default_class_table()
    annotations: list[Annotation] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 5:
            raise LabelParseError(f"expected 5 fields, got {len(fields)}", lineno)
        label = _parse_class(fields[0], classes, lineno)
        box = _parse_box(fields[1:], lineno, lenient)
        annotations.append(Annotation(label, box))
    return annotations


def write_yolo_labels(annotations: Iterable[Annotation]) -> str:
    """Format annotations as YOLO label text with fixed 6-digit fractions."""
    lines = []
    for ann in annotations:
        b = ann.box
        lines.append(f"{ann.label.id} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}\n")
    return "".join(lines)


def parse_detections(
    text: str,
    classes: Sequence[ClassLabel] | None = None,
    lenient: bool = False,
) -> list[Detection]:
    """Parse detection text (``class_id confidence cx cy w h`` per line)."""
    classes = tuple(classes) if classes is not None else default_class_table()
    detections: list[Detection] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 6:
            raise LabelParseError(f"expected 6 fields, got {len(fields)}", lineno)
        label = _parse_class(fields[0], classes, lineno)
        confidence = _parse_float(fields[1], "confidence", lineno)
        if not 0.0 <= confidence <= 1.0:
            if not lenient:
                raise LabelParseError(f"confidence {confidence} out of range [0, 1]", lineno)
            logger.warning("line %d: confidence %g clamped into [0, 1]", lineno, confidence)
            confidence = _clamp(confidence, 0, 1)
        box = _parse_box(fields[2:], lineno, lenient)
        detections.append(Detection(label, box, confidence))
    return detections


def write_detections(detections: Iterable[Detection]) -> str:
    lines = []
    for det in detections:
        b = det.box
        lines.append(
            f"{det.label.id} {det.confidence:.6f} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}\n"
        )
    return "".join(lines)


def normalize_class_name(name: str) -> str:
    """Lowercase and collapse spaces/hyphens to underscores for name matching."""
    return re.sub(r"[\s\-]+", "_", name.strip().lower())


def _task_image_name(task: dict[str, Any], index: int) -> str:
    data = task.get("data")
    if isinstance(data, dict):
        image = data.get("image")
        if image is None:
            image = next((v for v in data.values() if isinstance(v, str)), None)
        if isinstance(image, str) and image:
            return Path(image).name
    raise LabelParseError(f"task {index}: no image reference in task data")


def parse_labelstudio_export(
    json_text: str,
    classes: Sequence[ClassLabel] | None = None,
    lenient: bool = False,
) -> DatasetManifest:
    """Convert a Label Studio JSON export into a manifest fragment.

    Rectangle values use percent units with (x, y) at the top-left corner;
    they convert to normalized center form as cx = (x + width/2) / 100 and so
    on. Class names are matched case-insensitively against the class table
    with spaces and hyphens normalized to underscores. Every record lands in
    the train split; callers reassign splits afterwards.
    """
    classes = tuple(classes) if classes is not None else default_class_table()
    by_name = {label.name: label for label in classes}
    try:
        tasks = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise LabelParseError(f"invalid JSON: {exc}") from None
    if not isinstance(tasks, list):
        raise LabelParseError("export root must be a list of tasks")

    records: list[ImageRecord] = []
    for index, task in enumerate(tasks):
        image_name = _task_image_name(task, index)
        width = height = None
        annotations: list[Annotation] = []
        for annotation_obj in task.get("annotations") or task.get("completions") or []:
            for result in annotation_obj.get("result", []):
                value = result.get("value", {})
                if "rectanglelabels" not in value:
                    continue
                if result.get("original_width") and result.get("original_height"):
                    width = int(result["original_width"])
                    height = int(result["original_height"])
                rotation = float(value.get("rotation", 0.0))
                if abs(rotation) > 1e-9:
                    raise LabelParseError(
                        f"task {index} ({image_name}): rotated rectangles are not supported"
                    )
                names = value.get("rectanglelabels") or []
                if not names:
                    raise LabelParseError(f"task {index} ({image_name}): rectangle without class")
                label = by_name.get(normalize_class_name(str(names[0])))
                if label is None:
                    raise LabelParseError(
                        f"task {index} ({image_name}): unknown class name {names[0]!r}"
                    )
                annotations.append(
                    Annotation(label, _percent_rect_to_box(value, image_name, index, lenient))
                )
        if width is None or height is None:
            if lenient and not annotations:
                logger.warning(
                    "task %d (%s): unannotated task without image dimensions skipped",
                    index,
                    image_name,
                )
                continue
            raise LabelParseError(f"task {index} ({image_name}): missing original width/height")
        records.append(ImageRecord(image_name, width, height, "train", tuple(annotations)))
    return DatasetManifest(tuple(records), classes)


def _percent_rect_to_box(
    value: dict[str, Any], image_name: str, index: int, lenient: bool
) -> BoundingBox:
    try:
        x = float(value["x"])
        y = float(value["y"])
        w = float(value["width"])
        h = float(value["height"])
    except (KeyError, TypeError, ValueError):
        raise LabelParseError(f"task {index} ({image_name}): malformed rectangle value") from None
    if w <= 0 or h <= 0:
        raise LabelParseError(f"task {index} ({image_name}): degenerate rectangle {w} x {h}")
    out_of_range = not (0 <= x and 0 <= y and x + w <= 100 and y + h <= 100)
    if out_of_range:
        if not lenient:
            raise LabelParseError(
                f"task {index} ({image_name}): rectangle outside [0, 100] percent range"
            )
        logger.warning(
            "task %d (%s): rectangle (%g, %g, %g, %g) clamped into percent range",
            index, image_name, x, y, w, h,
        )
        x0, y0 = _clamp(x, 0, 100), _clamp(y, 0, 100)
        x1, y1 = _clamp(x + w, 0, 100), _clamp(y + h, 0, 100)
        if x1 <= x0 or y1 <= y0:
            raise LabelParseError(
                f"task {index} ({image_name}): rectangle entirely outside percent range"
            )
        x, y, w, h = x0, y0, x1 - x0, y1 - y0
    return BoundingBox((x + w / 2) / 100, (y + h / 2) / 100, w / 100, h / 100)


@dataclass(frozen=True)
class Finding:
    """One manifest validation problem."""

    severity: str  # "error" | "warning"
    code: str
    message: str


def validate_manifest(manifest: DatasetManifest) -> list[Finding]:
    """Collect every violation in the manifest; empty list means valid."""
    findings: list[Finding] = []
    seen: set[str] = set()
    table = set(manifest.class_table)
    for record in manifest.records:
        if record.image_path in seen:
            findings.append(
                Finding("error", "duplicate_path", f"duplicate image path {record.image_path!r}")
            )
        seen.add(record.image_path)
        for i, ann in enumerate(record.annotations):
            if ann.label not in table:
                findings.append(
                    Finding(
                        "error",
                        "unknown_class",
                        f"{record.image_path}: annotation {i} uses class "
                        f"{ann.label.name!r} absent from the class table",
                    )
                )
            if ann.box.is_degenerate:
                findings.append(
                    Finding(
                        "error",
                        "degenerate_box",
                        f"{record.image_path}: annotation {i} has zero-size box",
                    )
                )
    populated = {record.split for record in manifest.records}
    for split in SPLITS:
        if split not in populated:
            findings.append(Finding("warning", "empty_split", f"split {split!r} has no images"))
    return findings


def manifest_to_dict(manifest: DatasetManifest) -> dict[str, Any]:
    return {
        "class_table": [{"id": c.id, "name": c.name} for c in manifest.class_table],
        "records": [
            {
                "image_path": r.image_path,
                "width": r.width,
                "height": r.height,
                "split": r.split,
                "annotations": [
                    {
                        "class_id": a.label.id,
                        "cx": a.box.cx,
                        "cy": a.box.cy,
                        "w": a.box.w,
                        "h": a.box.h,
                    }
                    for a in r.annotations
                ],
            }
            for r in manifest.records
        ],
    }


def manifest_from_dict(data: dict[str, Any]) -> DatasetManifest:
    table = tuple(ClassLabel(c["id"], c["name"]) for c in data.get("class_table", []))
    if not table:
        table = default_class_table()
    records = []
    for r in data.get("records", []):
        annotations = tuple(
            Annotation(
                class_by_id(table, a["class_id"]),
                BoundingBox(a["cx"], a["cy"], a["w"], a["h"]),
            )
            for a in r.get("annotations", [])
        )
        records.append(
            ImageRecord(r["image_path"], r["width"], r["height"], r["split"], annotations)
        )
    return DatasetManifest(tuple(records), table)


def manifest_to_json(manifest: DatasetManifest) -> str:
    return json.dumps(manifest_to_dict(manifest), indent=2) + "\n"


def load_manifest(path: str | Path) -> DatasetManifest:
    return manifest_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    Path(path).write_text(manifest_to_json(manifest), encoding="utf-8")
