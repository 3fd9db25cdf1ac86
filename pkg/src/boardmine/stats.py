"""Dataset analytics: class balance, split accounting, augmentation planning.

The planner is the bridge between analytics and the geometric augmentation
ops: it decides which train images to flip or rotate so underrepresented
classes reach a target instance count, without inventing data for classes
that are absent entirely.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

from .preprocess import DEFAULT_AUGMENT_OPS, AugmentOp
from .types import SPLITS, DatasetManifest, ImageRecord


@dataclass(frozen=True)
class ClassHistogram:
    """Per-split, per-class annotation instance counts (zero-filled)."""

    class_names: tuple[str, ...]
    counts: dict[str, dict[str, int]]

    def split_total(self, split: str) -> int:
        return sum(self.counts[split].values())

    def class_total(self, class_name: str) -> int:
        return sum(self.counts[split][class_name] for split in self.counts)


def _zero_counts(class_names: Sequence[str]) -> dict[str, dict[str, int]]:
    return {split: {name: 0 for name in class_names} for split in SPLITS}


def class_histogram(manifest: DatasetManifest) -> ClassHistogram:
    """Count annotation instances per split and class."""
    names = tuple(c.name for c in manifest.class_table)
    counts = _zero_counts(names)
    for record in manifest.records:
        for ann in record.annotations:
            counts[record.split][ann.label.name] += 1
    return ClassHistogram(class_names=names, counts=counts)


@dataclass(frozen=True)
class SplitSummary:
    """Image counts per split plus hygiene flags."""

    image_counts: dict[str, int]
    unannotated_images: tuple[str, ...]
    empty_splits: tuple[str, ...]


def split_summary(manifest: DatasetManifest) -> SplitSummary:
    """Per-split image counts; flags unannotated images and empty splits."""
    image_counts = {split: 0 for split in SPLITS}
    unannotated: list[str] = []
    for record in manifest.records:
        image_counts[record.split] += 1
        if not record.annotations:
            unannotated.append(record.image_path)
    empty = tuple(split for split in SPLITS if image_counts[split] == 0)
    return SplitSummary(
        image_counts=image_counts,
        unannotated_images=tuple(unannotated),
        empty_splits=empty,
    )


@dataclass(frozen=True)
class AugmentPlan:
    """Which ops to run on which train images, and the projected outcome."""

    target_min: int
    ops_by_image: dict[str, tuple[AugmentOp, ...]]
    projected: ClassHistogram
    shortfall: dict[str, int]

    @property
    def total_ops(self) -> int:
        return sum(len(ops) for ops in self.ops_by_image.values())


def _record_class_counts(record: ImageRecord) -> dict[str, int]:
    out: dict[str, int] = {}
    for ann in record.annotations:
        out[ann.label.name] = out.get(ann.label.name, 0) + 1
    return out


def plan_augmentation(
    manifest: DatasetManifest,
    target_min: int,
    ops: Sequence[AugmentOp] = DEFAULT_AUGMENT_OPS,
) -> AugmentPlan:
    """Greedy deficit-first plan lifting every train class to ``target_min``.

    Repeatedly picks the train image with the most instances of
    still-deficient classes (manifest order breaks ties) and schedules the
    first op not yet used on that image, in the fixed op order. Each op
    duplicates every annotation on its image, so contributions are exact.
    Classes that cannot reach the target are reported as shortfall rather
    than padded with invented data.
    """
    if target_min < 0:
        raise ValueError(f"target_min must be >= 0, got {target_min}")
    if not ops:
        raise ValueError("no augmentation ops available")
    seen: set[AugmentOp] = set()
    for op in ops:
        if op in seen:
            raise ValueError(f"duplicate op {op.value} in available ops")
        seen.add(op)

    base = class_histogram(manifest)
    projected_train = dict(base.counts["train"])
    train_records = [r for r in manifest.records if r.split == "train"]
    per_image = [(r.image_path, _record_class_counts(r)) for r in train_records]
    used_ops: dict[str, list[AugmentOp]] = {}

    def deficits() -> dict[str, int]:
        return {
            name: target_min - projected_train[name]
            for name in base.class_names
            if projected_train[name] < target_min
        }

    while True:
        deficit = deficits()
        if not deficit:
            break
        best_index = -1
        best_score = 0
        for index, (path, counts) in enumerate(per_image):
            if len(used_ops.get(path, [])) >= len(ops):
                continue
            score = sum(counts.get(name, 0) for name in deficit)
            if score > best_score:
                best_score = score
                best_index = index
        if best_index < 0:
            break
        path, counts = per_image[best_index]
        assigned = used_ops.setdefault(path, [])
        next_op = next(op for op in ops if op not in assigned)
        assigned.append(next_op)
        for name, count in counts.items():
            projected_train[name] += count

    projected_counts = {split: dict(base.counts[split]) for split in base.counts}
    projected_counts["train"] = projected_train
    remaining = deficits()
    return AugmentPlan(
        target_min=target_min,
        ops_by_image={path: tuple(assigned) for path, assigned in used_ops.items()},
        projected=ClassHistogram(class_names=base.class_names, counts=projected_counts),
        shortfall=dict(sorted(remaining.items())),
    )


def histogram_to_dict(hist: ClassHistogram) -> dict[str, Any]:
    return {
        "classes": list(hist.class_names),
        "counts": {split: dict(hist.counts[split]) for split in hist.counts},
        "totals": {split: hist.split_total(split) for split in hist.counts},
    }


def split_summary_to_dict(summary: SplitSummary) -> dict[str, Any]:
    return {
        "image_counts": dict(summary.image_counts),
        "total_images": sum(summary.image_counts.values()),
        "unannotated_images": list(summary.unannotated_images),
        "empty_splits": list(summary.empty_splits),
    }


def plan_to_dict(plan: AugmentPlan) -> dict[str, Any]:
    return {
        "target_min": plan.target_min,
        "ops_by_image": {
            path: [op.value for op in ops] for path, ops in sorted(plan.ops_by_image.items())
        },
        "total_ops": plan.total_ops,
        "projected": histogram_to_dict(plan.projected),
        "shortfall": dict(plan.shortfall),
    }


def histogram_table(hist: ClassHistogram) -> str:
    """Aligned text table of instance counts, one row per class plus totals."""
    splits = list(hist.counts)
    header = ["class"] + splits + ["total"]
    rows = [
        [name]
        + [str(hist.counts[split][name]) for split in splits]
        + [str(hist.class_total(name))]
        for name in hist.class_names
    ]
    totals_row = (
        ["total"]
        + [str(hist.split_total(split)) for split in splits]
        + [str(sum(hist.split_total(split) for split in splits))]
    )
    rows.append(totals_row)
    widths = [
        max(len(header[col]), *(len(row[col]) for row in rows)) for col in range(len(header))
    ]
    lines = [
        "  ".join(header[0].ljust(widths[0]) if col == 0 else header[col].rjust(widths[col]) for col in range(len(header)))
    ]
    for row in rows:
        lines.append(
            "  ".join(row[0].ljust(widths[0]) if col == 0 else row[col].rjust(widths[col]) for col in range(len(header)))
        )
    return "\n".join(lines) + "\n"
