"""Board image preparation: ROI segmentation, cropping, contrast, augmentation.

Images are RGB uint8 numpy arrays of shape (height, width, 3). All transforms
are pure: they return new arrays and new annotation lists.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .types import Annotation, BoundingBox

logger = logging.getLogger(__name__)

# RGB -> luma weights for grayscale conversion.
GRAY_WEIGHTS = (0.299, 0.587, 0.114)

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

# Fraction of a clipped box's original area that must survive the crop.
MIN_KEPT_AREA_FRACTION = 0.5


class BoardNotFoundError(ValueError):
    """Raised when ROI segmentation finds no foreground pixels."""


class AugmentOp(str, Enum):
    HFLIP = "hflip"
    VFLIP = "vflip"
    ROT90 = "rot90"
    ROT180 = "rot180"
    ROT270 = "rot270"


# Fixed order used by augmentation planning.
DEFAULT_AUGMENT_OPS = (
    AugmentOp.HFLIP,
    AugmentOp.VFLIP,
    AugmentOp.ROT90,
    AugmentOp.ROT180,
    AugmentOp.ROT270,
)

AUGMENT_INVERSE = {
    AugmentOp.HFLIP: AugmentOp.HFLIP,
    AugmentOp.VFLIP: AugmentOp.VFLIP,
    AugmentOp.ROT90: AugmentOp.ROT270,
    AugmentOp.ROT180: AugmentOp.ROT180,
    AugmentOp.ROT270: AugmentOp.ROT90,
}


@dataclass(frozen=True)
class RoiRect:
    """Pixel rectangle, inclusive-exclusive."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self) -> None:
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"empty ROI rectangle {self}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"negative ROI origin {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


def require_rgb_image(image: np.ndarray) -> np.ndarray:
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8 image, got {image.shape} {image.dtype}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError("empty image")
    return image


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Luma grayscale as uint8, rounded to nearest."""
    require_rgb_image(image)
    luma = image.astype(np.float64) @ np.array(GRAY_WEIGHTS)
    return np.clip(np.rint(luma), 0, 255).astype(np.uint8)


def otsu_threshold(gray: np.ndarray) -> int:
    """Threshold maximizing between-class variance (smallest maximizer)."""
    hist = np.bincount(gray.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    prob = hist / total
    omega = np.cumsum(prob)                    # weight of class [0..t]
    mu = np.cumsum(prob * np.arange(256))      # first moment of class [0..t]
    mu_total = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_b = (mu_total * omega - mu) ** 2 / (omega * (1.0 - omega))
    sigma_b[~np.isfinite(sigma_b)] = 0.0
    return int(np.argmax(sigma_b))


def segment_board_roi(image: np.ndarray, margin: int = 0) -> RoiRect:
    """Locate the board as the largest bright connected region.

    Grayscale -> Otsu threshold -> largest 4-connected component above the
    threshold -> bounding rectangle expanded by ``margin`` and clamped to the
    image bounds. Raises BoardNotFoundError when nothing is above threshold.
    """
    require_rgb_image(image)
    if margin < 0:
        raise ValueError("margin must be >= 0")
    gray = to_grayscale(image)
    threshold = otsu_threshold(gray)
    foreground = gray > threshold
    if not foreground.any():
        raise BoardNotFoundError("no board found")
    labels, count = ndimage.label(foreground, structure=FOUR_CONNECTED)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    largest = int(np.argmax(sizes))
    ys, xs = np.nonzero(labels == largest)
    height, width = gray.shape
    return RoiRect(
        max(int(xs.min()) - margin, 0),
        max(int(ys.min()) - margin, 0),
        min(int(xs.max()) + 1 + margin, width),
        min(int(ys.max()) + 1 + margin, height),
    )


def crop_and_remap(
    image: np.ndarray,
    roi: RoiRect,
    annotations: Sequence[Annotation] = (),
) -> tuple[np.ndarray, list[Annotation]]:
    """Crop to the ROI and re-express annotations in crop-relative coordinates.

    Boxes fully outside the ROI are dropped; boxes straddling the ROI edge are
    clipped and kept only if at least half of their original area remains.
    """
    require_rgb_image(image)
    height, width = image.shape[:2]
    if roi.x1 > width or roi.y1 > height:
        raise ValueError(f"ROI {roi} exceeds image bounds {width}x{height}")
    crop = image[roi.y0 : roi.y1, roi.x0 : roi.x1].copy()
    if roi.x0 == 0 and roi.y0 == 0 and roi.x1 == width and roi.y1 == height:
        return crop, list(annotations)

    kept: list[Annotation] = []
    dropped = 0
    for ann in annotations:
        nx0, ny0, nx1, ny1 = ann.box.corners()
        ax0, ay0 = nx0 * width, ny0 * height
        ax1, ay1 = nx1 * width, ny1 * height
        cx0, cy0 = max(ax0, roi.x0), max(ay0, roi.y0)
        cx1, cy1 = min(ax1, roi.x1), min(ay1, roi.y1)
        if cx1 <= cx0 or cy1 <= cy0:
            dropped += 1
            continue
        original_area = (ax1 - ax0) * (ay1 - ay0)
        if (cx1 - cx0) * (cy1 - cy0) < MIN_KEPT_AREA_FRACTION * original_area:
            dropped += 1
            continue
        kept.append(
            Annotation(
                ann.label,
                BoundingBox(
                    ((cx0 + cx1) / 2 - roi.x0) / roi.width,
                    ((cy0 + cy1) / 2 - roi.y0) / roi.height,
                    (cx1 - cx0) / roi.width,
                    (cy1 - cy0) / roi.height,
                ),
            )
        )
    if dropped:
        logger.warning("crop dropped %d annotation(s) outside or mostly outside the ROI", dropped)
    return crop, kept


def contrast_stretch(image: np.ndarray, low_pct: float, high_pct: float) -> np.ndarray:
    """Per-channel linear stretch of the [low, high] percentile range to [0, 255].

    A constant-intensity channel is returned unchanged.
    """
    require_rgb_image(image)
    if not 0 <= low_pct < high_pct <= 100:
        raise ValueError(f"bad percentile range ({low_pct}, {high_pct})")
    out = image.copy()
    for channel in range(3):
        values = image[:, :, channel]
        lo, hi = np.percentile(values, [low_pct, high_pct])
        if hi <= lo:
            continue
        stretched = (values.astype(np.float64) - lo) * (255.0 / (hi - lo))
        out[:, :, channel] = np.clip(np.rint(stretched), 0, 255).astype(np.uint8)
    return out


def augment_box(box: BoundingBox, op: AugmentOp) -> BoundingBox:
    """Exact normalized-coordinate transform matching the pixel transform."""
    cx, cy, w, h = box.cx, box.cy, box.w, box.h
    if op is AugmentOp.HFLIP:
        return BoundingBox(1.0 - cx, cy, w, h)
    if op is AugmentOp.VFLIP:
        return BoundingBox(cx, 1.0 - cy, w, h)
    if op is AugmentOp.ROT90:  # clockwise
        return BoundingBox(1.0 - cy, cx, h, w)
    if op is AugmentOp.ROT180:
        return BoundingBox(1.0 - cx, 1.0 - cy, w, h)
    if op is AugmentOp.ROT270:
        return BoundingBox(cy, 1.0 - cx, h, w)
    raise ValueError(f"unknown augment op {op!r}")


def augment(
    image: np.ndarray,
    annotations: Sequence[Annotation],
    op: AugmentOp,
) -> tuple[np.ndarray, list[Annotation]]:
    """Apply one flip/rotation to pixels and annotations together."""
    require_rgb_image(image)
    if op is AugmentOp.HFLIP:
        pixels = image[:, ::-1]
    elif op is AugmentOp.VFLIP:
        pixels = image[::-1, :]
    elif op is AugmentOp.ROT90:
        pixels = np.rot90(image, k=-1)
    elif op is AugmentOp.ROT180:
        pixels = np.rot90(image, k=2)
    elif op is AugmentOp.ROT270:
        pixels = np.rot90(image, k=1)
    else:
        raise ValueError(f"unknown augment op {op!r}")
    remapped = [Annotation(a.label, augment_box(a.box, op)) for a in annotations]
    return np.ascontiguousarray(pixels), remapped


def augmented_name(image_name: str, op: AugmentOp) -> str:
    path = Path(image_name)
    return f"{path.stem}__{op.value}{path.suffix}"


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def save_image(path: str | Path, image: np.ndarray) -> None:
    require_rgb_image(image)
    Image.fromarray(image).save(path)
