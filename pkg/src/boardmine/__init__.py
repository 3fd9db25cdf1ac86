"""Toolkit for component-level PCB recycling datasets.

Covers annotation parsing and conversion, board-region preprocessing,
flip/rotate augmentation, detector evaluation, dataset statistics, and
critical-raw-material inventories, plus a batch command line.
"""

from __future__ import annotations

from .crm import (
    CRM_ELEMENTS,
    CrmInventory,
    CrmMapping,
    MappingError,
    aggregate,
    default_mapping,
    inventory,
    load_mapping,
)
from .dataset_io import (
    Finding,
    LabelParseError,
    load_manifest,
    parse_detections,
    parse_labelstudio_export,
    parse_yolo_labels,
    save_manifest,
    validate_manifest,
    write_detections,
    write_yolo_labels,
)
from .evaluation import (
    DEFAULT_IOU_THRESHOLDS,
    EvalReport,
    average_precision,
    evaluate,
    iou,
    match_detections,
    pr_curve,
)
from .preprocess import (
    AugmentOp,
    BoardNotFoundError,
    RoiRect,
    augment,
    augment_box,
    contrast_stretch,
    crop_and_remap,
    otsu_threshold,
    segment_board_roi,
    to_grayscale,
)
from .stats import (
    AugmentPlan,
    ClassHistogram,
    SplitSummary,
    class_histogram,
    plan_augmentation,
    split_summary,
)
from .types import (
    CLASS_NAMES,
    Annotation,
    BoundingBox,
    ClassLabel,
    DatasetManifest,
    Detection,
    ImageRecord,
    class_by_id,
    class_by_name,
    default_class_table,
)

__version__ = "0.1.0"

__all__ = [
    "CLASS_NAMES",
    "CRM_ELEMENTS",
    "DEFAULT_IOU_THRESHOLDS",
    "Annotation",
    "AugmentOp",
    "AugmentPlan",
    "BoardNotFoundError",
    "BoundingBox",
    "ClassHistogram",
    "ClassLabel",
    "CrmInventory",
    "CrmMapping",
    "DatasetManifest",
    "Detection",
    "EvalReport",
    "Finding",
    "ImageRecord",
    "LabelParseError",
    "MappingError",
    "RoiRect",
    "SplitSummary",
    "aggregate",
    "augment",
    "augment_box",
    "average_precision",
    "class_by_id",
    "class_by_name",
    "class_histogram",
    "contrast_stretch",
    "crop_and_remap",
    "default_class_table",
    "default_mapping",
    "evaluate",
    "inventory",
    "iou",
    "load_manifest",
    "load_mapping",
    "match_detections",
    "otsu_threshold",
    "parse_detections",
    "parse_labelstudio_export",
    "parse_yolo_labels",
    "plan_augmentation",
    "pr_curve",
    "save_manifest",
    "segment_board_roi",
    "split_summary",
    "to_grayscale",
    "validate_manifest",
    "write_detections",
    "write_yolo_labels",
]
