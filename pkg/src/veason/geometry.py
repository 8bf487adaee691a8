"""Mask and box primitives.

Masks are plain ``numpy`` boolean arrays of shape ``(height, width)``.
Boxes use continuous pixel coordinates with the origin at the top-left
corner; rasterization treats them as half-open ``[x1, x2) x [y1, y2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise GeometryError(f"non-finite box coordinates {coords}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise GeometryError(f"inverted box {coords}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return float(inter / union)


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise GeometryError(f"mask shape mismatch: {a.shape} vs {b.shape}")


def mask_area(m: np.ndarray) -> int:
    return int(np.count_nonzero(m))


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """IoU of two binary masks; two empty masks count as a perfect match."""
    _check_same_shape(a, b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(a & b) / union)


def empty_mask(width: int, height: int) -> np.ndarray:
    return np.zeros((height, width), dtype=bool)


def box_to_mask(b: BoundingBox, width: int, height: int) -> np.ndarray:
    """Rasterize a box: pixel (x, y) is set iff x1 <= x < x2 and y1 <= y < y2."""
    if width <= 0 or height <= 0:
        raise GeometryError("raster dimensions must be positive")
    m = np.zeros((height, width), dtype=bool)
    # first integer >= x1 up to first integer >= x2, clamped to the raster
    x0 = min(max(math.ceil(b.x1), 0), width)
    x1 = min(max(math.ceil(b.x2), 0), width)
    y0 = min(max(math.ceil(b.y1), 0), height)
    y1 = min(max(math.ceil(b.y2), 0), height)
    m[y0:y1, x0:x1] = True
    return m


def tight_box(m: np.ndarray) -> BoundingBox | None:
    """Smallest box whose rasterization covers the mask, or None when empty."""
    ys, xs = np.nonzero(m)
    if len(xs) == 0:
        return None
    return BoundingBox(float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))


def mask_boundary(m: np.ndarray) -> np.ndarray:
    """Foreground pixels 4-adjacent to background or to the image edge."""
    m = np.asarray(m, dtype=bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return m & ~interior


def default_boundary_tolerance(width: int, height: int) -> int:
    return int(round(0.008 * math.hypot(width, height)))


def boundary_fscore(pred: np.ndarray, gt: np.ndarray, tol: int | None = None) -> float:
    """Boundary F-measure with a Chebyshev matching radius of ``tol`` pixels."""
    _check_same_shape(pred, gt)
    if tol is None:
        tol = default_boundary_tolerance(pred.shape[1], pred.shape[0])
    if tol < 0:
        raise GeometryError("boundary tolerance must be >= 0")
    pb = mask_boundary(pred)
    gb = mask_boundary(gt)
    n_pred, n_gt = np.count_nonzero(pb), np.count_nonzero(gb)
    if n_pred == 0 and n_gt == 0:
        return 1.0
    if n_pred == 0 or n_gt == 0:
        return 0.0
    if tol > 0:
        square = np.ones((2 * tol + 1, 2 * tol + 1), dtype=bool)
        gb_dil = ndimage.binary_dilation(gb, structure=square)
        pb_dil = ndimage.binary_dilation(pb, structure=square)
    else:
        gb_dil, pb_dil = gb, pb
    precision = np.count_nonzero(pb & gb_dil) / n_pred
    recall = np.count_nonzero(gb & pb_dil) / n_gt
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


@dataclass(frozen=True)
class RleMask:
    """Row-major run lengths, starting with a background run."""

    w: int
    h: int
    counts: tuple[int, ...]

    def to_json(self) -> dict:
        return {"w": self.w, "h": self.h, "counts": list(self.counts)}

    @classmethod
    def from_json(cls, obj: dict) -> "RleMask":
        if not isinstance(obj, dict) or set(obj) != {"w", "h", "counts"}:
            raise GeometryError(f"RLE object must have exactly keys w, h, counts: {obj!r}")
        w, h, counts = obj["w"], obj["h"], obj["counts"]
        if not _is_int(w) or not _is_int(h) or w <= 0 or h <= 0:
            raise GeometryError("RLE dimensions must be positive integers")
        if not isinstance(counts, list) or not all(_is_int(c) and c >= 0 for c in counts):
            raise GeometryError("RLE counts must be a list of non-negative integers")
        return cls(w, h, tuple(counts))


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def rle_encode(m: np.ndarray) -> RleMask:
    m = np.asarray(m, dtype=bool)
    h, w = m.shape
    flat = m.ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs.insert(0, 0)
    return RleMask(w, h, tuple(int(r) for r in runs))


def rle_decode(r: RleMask) -> np.ndarray:
    counts = r.counts
    if sum(counts) != r.w * r.h:
        raise GeometryError(f"RLE counts sum to {sum(counts)}, expected {r.w * r.h}")
    # canonical form: only the first run may be zero-length
    if any(c == 0 for c in counts[1:]):
        raise GeometryError("RLE has a zero-length interior or trailing run")
    values = np.arange(len(counts)) % 2 == 1
    flat = np.repeat(values, counts)
    return flat.reshape(r.h, r.w)


def masks_union(masks: Sequence[np.ndarray], width: int, height: int) -> np.ndarray:
    out = empty_mask(width, height)
    for m in masks:
        out |= m
    return out
