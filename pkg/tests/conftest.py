"""Shared fixtures and synthetic-data helpers for the test suite."""

from __future__ import annotations

import json
import random

import numpy as np
import pytest

from boardmine.types import (
    Annotation,
    BoundingBox,
    DatasetManifest,
    ImageRecord,
    class_by_id,
    default_class_table,
)

CLASS_TABLE = default_class_table()


@pytest.fixture
def class_table():
    return CLASS_TABLE


def make_board_image(
    width: int,
    height: int,
    rect: tuple[int, int, int, int],
    rng: random.Random | None = None,
    background: int = 10,
) -> np.ndarray:
    """Dark background with one bright textured rectangle (x0, y0, x1, y1)."""
    x0, y0, x1, y1 = rect
    image = np.full((height, width, 3), background, np.uint8)
    if rng is None:
        image[y0:y1, x0:x1] = 200
    else:
        np_rng = np.random.default_rng(rng.randrange(2**32))
        image[y0:y1, x0:x1] = np_rng.integers(140, 255, (y1 - y0, x1 - x0, 3), np.uint8)
    return image


def dyadic(rng: random.Random, lo: float = 0.0, hi: float = 1.0, denom: int = 1024) -> float:
    """Random multiple of 1/denom inside [lo, hi]; exact under reflection."""
    lo_k = int(np.ceil(lo * denom))
    hi_k = int(np.floor(hi * denom))
    return rng.randint(lo_k, hi_k) / denom


def dyadic_box(rng: random.Random) -> BoundingBox:
    w = dyadic(rng, 1 / 64, 0.5)
    h = dyadic(rng, 1 / 64, 0.5)
    cx = dyadic(rng, w / 2, 1 - w / 2)
    cy = dyadic(rng, h / 2, 1 - h / 2)
    return BoundingBox(cx, cy, w, h)


def random_annotations(rng: random.Random, count: int) -> list[Annotation]:
    return [
        Annotation(class_by_id(CLASS_TABLE, rng.randrange(8)), dyadic_box(rng))
        for _ in range(count)
    ]


def make_manifest(per_split: dict[str, list[list[Annotation]]]) -> DatasetManifest:
    """Manifest from lists of per-image annotation lists keyed by split."""
    records = []
    counter = 0
    for split, images in per_split.items():
        for annotations in images:
            records.append(
                ImageRecord(f"img{counter:04d}.png", 640, 480, split, tuple(annotations))
            )
            counter += 1
    return DatasetManifest(tuple(records), CLASS_TABLE)


def labelstudio_task(image: str, rects: list[dict], width: int = 200, height: int = 160) -> dict:
    """One export task; each rect needs x, y, width, height, label keys."""
    results = [
        {
            "original_width": width,
            "original_height": height,
            "value": {
                "x": r["x"],
                "y": r["y"],
                "width": r["width"],
                "height": r["height"],
                "rotation": r.get("rotation", 0),
                "rectanglelabels": [r["label"]],
            },
        }
        for r in rects
    ]
    return {"data": {"image": f"/data/upload/{image}"}, "annotations": [{"result": results}]}


def write_export(path, tasks: list[dict]) -> None:
    path.write_text(json.dumps(tasks), encoding="utf-8")
