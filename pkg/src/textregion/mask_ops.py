"""Geometry over soft region masks: resampling, merging, boxes, IoU."""

from dataclasses import dataclass

import numpy as np

from . import kernels


class MaskDimensionError(ValueError):
    """Masks with incompatible dimensions were combined."""


class EmptyRegionError(ValueError):
    """A mask had no pixel above the binarization threshold."""


@dataclass
class SoftMask:
    """Per-pixel region membership confidence at image resolution."""

    region_id: int
    values: np.ndarray  # (H, W), entries in [0, 1]

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise MaskDimensionError(
                f"soft mask must be 2-D, got shape {self.values.shape}"
            )
        lo = float(self.values.min(initial=0.0))
        hi = float(self.values.max(initial=0.0))
        if lo < 0.0 or hi > 1.0:
            raise ValueError(
                f"soft mask values outside [0, 1]: min={lo}, max={hi}"
            )

    @property
    def shape(self):
        return self.values.shape

    def support(self, bin_threshold: float = 0.5) -> np.ndarray:
        return self.values >= bin_threshold


@dataclass
class PatchMask:
    """Region membership downsampled to the patch grid."""

    region_id: int
    values: np.ndarray  # (h, w), entries in [0, 1]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise MaskDimensionError(
                f"patch mask must be 2-D, got shape {self.values.shape}"
            )

    @property
    def grid(self):
        return self.values.shape

    def flat(self) -> np.ndarray:
        """Row-major flattened weights of length h*w."""
        return self.values.reshape(-1)


@dataclass(frozen=True)
class Box:
    """Inclusive pixel-coordinate box; area is (x1-x0+1)*(y1-y0+1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> int:
        return (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)


def downsample_mask(mask: SoftMask, grid) -> PatchMask:
    """Bilinearly resample a soft mask to the patch grid.

    Half-pixel-center convention: output sample (i, j) reads input
    coordinate ((i+0.5)*H/h - 0.5, (j+0.5)*W/w - 0.5), edge-clamped.
    Outputs stay in [0, 1] (convex combination of inputs).
    """
    h, w = int(grid[0]), int(grid[1])
    if h <= 0 or w <= 0:
        raise ValueError(f"zero-sized patch grid ({h}, {w})")
    out = kernels.resize_bilinear(mask.values, h, w)
    return PatchMask(region_id=mask.region_id, values=out)


def merge_masks(masks, iou_threshold: float):
    """Greedy overlap merging in input order.

    Each mask is compared by binary IoU (support threshold 0.5) against
    every already-kept mask; the first kept mask exceeding
    ``iou_threshold`` absorbs it via element-wise maximum, otherwise the
    mask is kept as a new entry.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    kept: list[SoftMask] = []
    for mask in masks:
        target = None
        for k, other in enumerate(kept):
            if mask_iou(other, mask) > iou_threshold:
                target = k
                break
        if target is None:
            kept.append(SoftMask(mask.region_id, mask.values.copy()))
        else:
            merged = np.maximum(kept[target].values, mask.values)
            kept[target] = SoftMask(kept[target].region_id, merged)
    return kept


def mask_to_box(mask: SoftMask, bin_threshold: float = 0.5) -> Box:
    """Tight axis-aligned box over pixels with value >= bin_threshold."""
    ys, xs = np.nonzero(mask.values >= bin_threshold)
    if ys.size == 0:
        raise EmptyRegionError(
            f"region {mask.region_id} has no pixel >= {bin_threshold}"
        )
    return Box(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def box_iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two inclusive pixel boxes."""
    ix = min(a.x1, b.x1) - max(a.x0, b.x0) + 1
    iy = min(a.y1, b.y1) - max(a.y0, b.y0) + 1
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def mask_iou(a: SoftMask, b: SoftMask, bin_threshold: float = 0.5) -> float:
    """Binary IoU over thresholded supports.

    Both supports empty yields 1.0, exactly one empty yields 0.0.
    """
    if a.values.shape != b.values.shape:
        raise MaskDimensionError(
            f"mask shapes differ: {a.values.shape} vs {b.values.shape}"
        )
    sa = a.values >= bin_threshold
    sb = b.values >= bin_threshold
    union = int(np.count_nonzero(sa | sb))
    if union == 0:
        return 1.0
    inter = int(np.count_nonzero(sa & sb))
    return inter / union
