"""Detection evaluation: IoU, greedy matching, PR curves, AP, and mAP reports.

Conventions (all recorded in the emitted report):

* Matching is greedy in descending confidence order with single assignment and
  no cross-class matches; confidence ties break by input order.
* AP uses all-point interpolation (area under the precision envelope).
* The scalar precision/recall pair is taken at the confidence cutoff that
  maximizes F1 at IoU 0.5.
* mAP averages per-class AP over classes with at least one ground-truth
  instance; the averaged metric uses the configured IoU threshold grid.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .types import Annotation, BoundingBox, ClassLabel, Detection

DEFAULT_IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union in normalized coordinates; 0.0 when disjoint."""
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


@dataclass(frozen=True)
class MatchResult:
    """TP/FP flags per detection and matched flags per GT at one IoU threshold."""

    detection_is_tp: tuple[bool, ...]
    gt_matched: tuple[bool, ...]
    iou_threshold: float

    @property
    def tp(self) -> int:
        return sum(self.detection_is_tp)

    @property
    def fp(self) -> int:
        return len(self.detection_is_tp) - self.tp

    @property
    def fn(self) -> int:
        return len(self.gt_matched) - sum(self.gt_matched)


def match_detections(
    gt: Sequence[Annotation],
    detections: Sequence[Detection],
    iou_threshold: float,
) -> MatchResult:
    """Greedily match detections of one image against ground truth.

    Detections are visited in descending confidence (ties by input order); each
    claims the unmatched same-class GT with the highest IoU, provided that IoU
    reaches the threshold. Equal-IoU candidates resolve to the earliest GT.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"IoU threshold {iou_threshold} outside (0, 1)")
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].confidence, i))
    gt_matched = [False] * len(gt)
    det_tp = [False] * len(detections)
    for i in order:
        det = detections[i]
        best_iou = 0.0
        best_j = -1
        for j, ann in enumerate(gt):
            if gt_matched[j] or ann.label != det.label:
                continue
            overlap = iou(det.box, ann.box)
            if overlap > best_iou:
                best_iou, best_j = overlap, j
        if best_j >= 0 and best_iou >= iou_threshold:
            gt_matched[best_j] = True
            det_tp[i] = True
    return MatchResult(tuple(det_tp), tuple(gt_matched), iou_threshold)


@dataclass(frozen=True)
class PrCurve:
    """(recall, precision) after each detection of a confidence-ranked sweep."""

    points: tuple[tuple[float, float], ...]
    n_gt: int
    tp_flags: tuple[bool, ...]


def pr_curve(tp_flags: Sequence[bool], n_gt: int) -> PrCurve:
    """Cumulative precision/recall over a ranked TP/FP flag sequence."""
    if n_gt < 1:
        raise ValueError("PR curve requires at least one ground-truth instance")
    points = []
    cum_tp = 0
    for rank, flag in enumerate(tp_flags, start=1):
        cum_tp += bool(flag)
        points.append((cum_tp / n_gt, cum_tp / rank))
    return PrCurve(tuple(points), n_gt, tuple(bool(f) for f in tp_flags))


def average_precision(curve: PrCurve) -> float:
    """Area under the precision envelope, integrated over all recall points.

    Computed in exact rational arithmetic from the ranked TP flags, so results
    like 5/6 come out as the correctly rounded float.
    """
    if not curve.tp_flags:
        return 0.0
    recalls: list[Fraction] = []
    envelope: list[Fraction] = []
    cum_tp = 0
    for rank, flag in enumerate(curve.tp_flags, start=1):
        cum_tp += flag
        recalls.append(Fraction(cum_tp, curve.n_gt))
        envelope.append(Fraction(cum_tp, rank))
    for i in range(len(envelope) - 2, -1, -1):
        envelope[i] = max(envelope[i], envelope[i + 1])
    area = Fraction(0)
    prev = Fraction(0)
    for recall, env in zip(recalls, envelope):
        if recall > prev:
            area += (recall - prev) * env
            prev = recall
    return float(area)


@dataclass(frozen=True)
class ClassMetrics:
    label: ClassLabel
    n_gt: int
    n_det: int
    ap_by_threshold: tuple[float, ...] | None  # aligned with report thresholds
    ap_50: float | None
    ap_mean: float | None


@dataclass(frozen=True)
class OperatingPoint:
    """Scalar P/R at the max-F1 confidence cutoff (IoU 0.5)."""

    confidence_cutoff: float | None
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    precision_defined: bool


@dataclass(frozen=True)
class EvalReport:
    thresholds: tuple[float, ...]
    per_class: tuple[ClassMetrics, ...]
    map_50: float
    map_50_95: float
    operating_point: OperatingPoint
    tp: int  # totals at IoU 0.5 with every detection considered
    fp: int
    fn: int
    excluded_classes: tuple[str, ...]
    n_images: int
    interpolation: str = "all_point"
    operating_rule: str = "max_f1"

    @property
    def precision(self) -> float:
        return self.operating_point.precision

    @property
    def recall(self) -> float:
        return self.operating_point.recall


def _rank_key(entry: tuple[float, str, int]) -> tuple[float, str, int]:
    confidence, image_id, index = entry
    return (-confidence, image_id, index)


def evaluate(
    gt_by_image: Mapping[str, Sequence[Annotation]],
    det_by_image: Mapping[str, Sequence[Detection]],
    thresholds: Sequence[float] = DEFAULT_IOU_THRESHOLDS,
    jobs: int = 1,
) -> EvalReport:
    """Evaluate detections against ground truth across a set of images.

    ``det_by_image`` may omit images (treated as zero detections) but must not
    name images absent from ``gt_by_image``. The result is independent of image
    ordering and of the parallelism degree.
    """
    thresholds = tuple(sorted(set(thresholds)))
    if not thresholds:
        raise ValueError("no IoU thresholds given")
    for t in thresholds:
        if not 0.0 < t < 1.0:
            raise ValueError(f"IoU threshold {t} outside (0, 1)")
    if 0.5 not in thresholds:
        raise ValueError("threshold grid must include 0.5 for the headline metrics")
    if jobs < 1:
        raise ValueError("jobs must be >= 1")

    image_ids = sorted(gt_by_image)
    unknown = sorted(set(det_by_image) - set(gt_by_image))
    if unknown:
        raise ValueError(f"detections reference images without ground truth: {unknown}")

    def flags_for(image_id: str) -> dict[float, tuple[bool, ...]]:
        gt = gt_by_image[image_id]
        det = det_by_image.get(image_id, ())
        return {t: match_detections(gt, det, t).detection_is_tp for t in thresholds}

    if jobs > 1 and len(image_ids) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            flag_list = list(pool.map(flags_for, image_ids))
    else:
        flag_list = [flags_for(image_id) for image_id in image_ids]
    tp_flags = dict(zip(image_ids, flag_list))

    gt_count: dict[int, int] = {}
    det_count: dict[int, int] = {}
    labels: dict[int, ClassLabel] = {}
    for image_id in image_ids:
        for ann in gt_by_image[image_id]:
            labels[ann.label.id] = ann.label
            gt_count[ann.label.id] = gt_count.get(ann.label.id, 0) + 1
        for det in det_by_image.get(image_id, ()):
            labels[det.label.id] = det.label
            det_count[det.label.id] = det_count.get(det.label.id, 0) + 1

    per_class: list[ClassMetrics] = []
    for class_id in sorted(labels):
        label = labels[class_id]
        n_gt = gt_count.get(class_id, 0)
        n_det = det_count.get(class_id, 0)
        if n_gt == 0:
            per_class.append(ClassMetrics(label, 0, n_det, None, None, None))
            continue
        ranked = sorted(
            (
                (det.confidence, image_id, index)
                for image_id in image_ids
                for index, det in enumerate(det_by_image.get(image_id, ()))
                if det.label.id == class_id
            ),
            key=_rank_key,
        )
        aps = []
        for t in thresholds:
            flags = [tp_flags[image_id][t][index] for _, image_id, index in ranked]
            aps.append(average_precision(pr_curve(flags, n_gt)) if flags else 0.0)
        ap_50 = aps[thresholds.index(0.5)]
        per_class.append(
            ClassMetrics(label, n_gt, n_det, tuple(aps), ap_50, sum(aps) / len(aps))
        )

    evaluated = [m for m in per_class if m.n_gt > 0]
    map_50 = sum(m.ap_50 for m in evaluated) / len(evaluated) if evaluated else 0.0
    map_mean = sum(m.ap_mean for m in evaluated) / len(evaluated) if evaluated else 0.0

    total_gt = sum(gt_count.values())
    pooled = sorted(
        (
            (det.confidence, image_id, index)
            for image_id in image_ids
            for index, det in enumerate(det_by_image.get(image_id, ()))
        ),
        key=_rank_key,
    )
    pooled_flags = [tp_flags[image_id][0.5][index] for _, image_id, index in pooled]
    total_tp = sum(pooled_flags)
    operating = _max_f1_point(pooled, pooled_flags, total_gt)

    return EvalReport(
        thresholds=thresholds,
        per_class=tuple(per_class),
        map_50=map_50,
        map_50_95=map_mean,
        operating_point=operating,
        tp=total_tp,
        fp=len(pooled_flags) - total_tp,
        fn=total_gt - total_tp,
        excluded_classes=tuple(m.label.name for m in per_class if m.n_gt == 0),
        n_images=len(image_ids),
    )


def _max_f1_point(
    pooled: list[tuple[float, str, int]],
    pooled_flags: list[bool],
    total_gt: int,
) -> OperatingPoint:
    if not pooled:
        return OperatingPoint(None, 0.0, 0.0, 0.0, 0, 0, total_gt, False)
    best = None
    cum_tp = 0
    for k, flag in enumerate(pooled_flags, start=1):
        cum_tp += flag
        precision = cum_tp / k
        recall = cum_tp / total_gt if total_gt else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        if best is None or f1 > best[0]:
            best = (f1, k, precision, recall, cum_tp)
    f1, k, precision, recall, cum_tp = best
    return OperatingPoint(
        confidence_cutoff=pooled[k - 1][0],
        precision=precision,
        recall=recall,
        f1=f1,
        tp=cum_tp,
        fp=k - cum_tp,
        fn=total_gt - cum_tp,
        precision_defined=True,
    )


def report_to_dict(report: EvalReport) -> dict:
    op = report.operating_point
    return {
        "precision": op.precision,
        "recall": op.recall,
        "map_50": report.map_50,
        "map_50_95": report.map_50_95,
        "f1": op.f1,
        "confidence_cutoff": op.confidence_cutoff,
        "precision_defined": op.precision_defined,
        "operating_rule": report.operating_rule,
        "interpolation": report.interpolation,
        "iou_thresholds": list(report.thresholds),
        "n_images": report.n_images,
        "counts_at_50": {"tp": report.tp, "fp": report.fp, "fn": report.fn},
        "counts_at_cutoff": {"tp": op.tp, "fp": op.fp, "fn": op.fn},
        "excluded_classes": list(report.excluded_classes),
        "per_class": [
            {
                "class_id": m.label.id,
                "name": m.label.name,
                "gt": m.n_gt,
                "detections": m.n_det,
                "ap_50": m.ap_50,
                "ap_50_95": m.ap_mean,
                "ap_by_threshold": (
                    None
                    if m.ap_by_threshold is None
                    else {f"{t:.2f}": ap for t, ap in zip(report.thresholds, m.ap_by_threshold)}
                ),
            }
            for m in report.per_class
        ],
    }


def report_to_json(report: EvalReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"


def report_to_markdown(report: EvalReport) -> str:
    """Markdown report: headline metric table plus a per-class breakdown."""
    op = report.operating_point
    lines = [
        "| Precision | Recall | mAP | mAP-95 |",
        "| --- | --- | --- | --- |",
        f"| {op.precision:.4f} | {op.recall:.4f} | {report.map_50:.4f} | {report.map_50_95:.4f} |",
        "",
        f"Operating point: max-F1 confidence cutoff "
        f"{'n/a' if op.confidence_cutoff is None else f'{op.confidence_cutoff:.4f}'} "
        f"(F1 {op.f1:.4f}); AP interpolation: {report.interpolation}.",
        "",
        "| Class | GT | Detections | AP@0.5 | AP@0.5:0.95 |",
        "| --- | --- | --- | --- | --- |",
    ]
    for m in report.per_class:
        ap_50 = "n/a" if m.ap_50 is None else f"{m.ap_50:.4f}"
        ap_mean = "n/a" if m.ap_mean is None else f"{m.ap_mean:.4f}"
        lines.append(f"| {m.label.name} | {m.n_gt} | {m.n_det} | {ap_50} | {ap_mean} |")
    if report.excluded_classes:
        lines += ["", "Classes without ground truth (excluded from mAP): "
                  + ", ".join(report.excluded_classes) + "."]
    return "\n".join(lines) + "\n"


def summary_line(report: EvalReport) -> str:
    op = report.operating_point
    return (
        f"P={op.precision:.4f} R={op.recall:.4f} "
        f"mAP@.5={report.map_50:.4f} mAP@.5:.95={report.map_50_95:.4f}"
    )
