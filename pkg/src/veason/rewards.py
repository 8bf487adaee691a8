"""The four-part reward policy: format, temporal, spatial and unified consistency."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .geometry import BoundingBox, box_iou, box_to_mask, mask_iou, tight_box
from .hungarian import Assignment, hungarian
from .response import StructuredResponse, parse_response, snap_timestamp

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RewardWeights:
    alpha_f: float = 1.0
    alpha_k: float = 1.0
    alpha_s: float = 1.0
    alpha_u: float = 1.0

    def __post_init__(self):
        for name in ("alpha_f", "alpha_k", "alpha_s", "alpha_u"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    @property
    def max_total(self) -> float:
        return self.alpha_f + self.alpha_k + self.alpha_s + self.alpha_u


@dataclass(frozen=True)
class RewardBreakdown:
    r_format: float
    r_temporal: float
    r_spatial: float
    r_unified: float
    r_total: float
    diag: str | None = None

    def to_json(self, sample_id: str) -> dict:
        out = {
            "sample_id": sample_id,
            "r_f": self.r_format,
            "r_k": self.r_temporal,
            "r_s": self.r_spatial,
            "r_u": self.r_unified,
            "r_total": self.r_total,
        }
        if self.diag is not None:
            out["diag"] = self.diag
        return out


@dataclass
class GroundTruthSample:
    """Per-frame, per-object ground truth over the sampled frames.

    ``masks`` has shape ``(T, n_objects, H, W)``; ``boxes[t][o]`` is the tight
    box of ``masks[t, o]`` or None when the object is not visible.
    """

    sampled_times: tuple[float, ...]
    masks: np.ndarray
    boxes: list[list[BoundingBox | None]] = field(default=None)

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=bool)
        if self.masks.ndim != 4:
            raise ValueError("masks must have shape (T, n_objects, H, W)")
        if self.masks.shape[0] != len(self.sampled_times):
            raise ValueError("masks and sampled_times disagree on the frame count")
        if self.boxes is None:
            self.boxes = [[tight_box(m) for m in frame] for frame in self.masks]
        self.merged = self.masks.any(axis=1)
        self.areas = self.merged.reshape(self.n_frames, -1).sum(axis=1)

    @property
    def n_frames(self) -> int:
        return self.masks.shape[0]

    @property
    def n_objects(self) -> int:
        return self.masks.shape[1]

    @property
    def height(self) -> int:
        return self.masks.shape[2]

    @property
    def width(self) -> int:
        return self.masks.shape[3]

    @property
    def is_negative(self) -> bool:
        return not self.merged.any()

    def visible_boxes(self, t: int) -> list[tuple[int, BoundingBox]]:
        return [(o, b) for o, b in enumerate(self.boxes[t]) if b is not None]


@dataclass
class SceneFrames:
    """What a propagator may look at: the ground truth and, for synthetic
    scenes, per-frame instance label maps (0 = background)."""

    gt: GroundTruthSample
    label_maps: np.ndarray | None = None


class PropagationError(RuntimeError):
    pass


class MaskPropagator(Protocol):
    def propagate(
        self, boxes: Sequence[BoundingBox], frames: SceneFrames, keyframe_index: int
    ) -> np.ndarray:
        """Return a merged ``(T, H, W)`` mask sequence."""
        ...


class OraclePropagator:
    """Emits the GT masks of the object best overlapping each box at the keyframe."""

    name = "oracle"

    def propagate(self, boxes, frames, keyframe_index):
        gt = frames.gt
        out = np.zeros((gt.n_frames, gt.height, gt.width), dtype=bool)
        candidates = gt.visible_boxes(keyframe_index)
        for box in boxes:
            best_obj, best_iou = None, 0.0
            for obj, gt_box in candidates:
                iou = box_iou(box, gt_box)
                if iou > best_iou:
                    best_obj, best_iou = obj, iou
            # a box overlapping no GT object tracks nothing
            if best_obj is not None:
                out |= gt.masks[:, best_obj]
        return out


class LabelMapPropagator:
    """Follows the instance label occupying most of each box at the keyframe."""

    name = "labelmap"

    def propagate(self, boxes, frames, keyframe_index):
        if frames.label_maps is None:
            raise PropagationError("scene carries no instance label maps")
        labels = frames.label_maps
        n_frames, h, w = labels.shape
        out = np.zeros((n_frames, h, w), dtype=bool)
        key = labels[keyframe_index]
        for box in boxes:
            inside = key[box_to_mask(box, w, h)]
            inside = inside[inside > 0]
            if inside.size == 0:
                continue
            label = int(np.argmax(np.bincount(inside)))
            out |= labels == label
        return out


PROPAGATORS = {"oracle": OraclePropagator, "labelmap": LabelMapPropagator}


def make_propagator(name: str) -> MaskPropagator:
    try:
        return PROPAGATORS[name]()
    except KeyError:
        raise ValueError(f"unknown propagator {name!r}; choose from {sorted(PROPAGATORS)}") from None


def format_reward(text) -> float:
    return 1.0 if isinstance(parse_response(text), StructuredResponse) else 0.0


def temporal_reward(
    keyframe_index: int, gt: GroundTruthSample, pred_boxes: Sequence[BoundingBox] = ()
) -> float:
    """Area of the merged target at the keyframe over the largest area in any frame."""
    if not 0 <= keyframe_index < gt.n_frames:
        raise IndexError(f"keyframe index {keyframe_index} outside [0, {gt.n_frames})")
    peak = int(gt.areas.max())
    if peak == 0:
        return 1.0 if len(pred_boxes) == 0 else 0.0
    return float(gt.areas[keyframe_index] / peak)


def match_boxes(pred_boxes: Sequence[BoundingBox], gt_boxes: Sequence[BoundingBox]) -> Assignment:
    cost = np.array(
        [[1.0 - box_iou(p, g) for g in gt_boxes] for p in pred_boxes], dtype=float
    ).reshape(len(pred_boxes), len(gt_boxes))
    return hungarian(cost)


def spatial_reward(pred_boxes: Sequence[BoundingBox], gt_boxes: Sequence[BoundingBox]) -> float:
    """Sum of Hungarian-matched IoUs over max(#pred, #gt)."""
    if not pred_boxes and not gt_boxes:
        return 1.0
    if not pred_boxes or not gt_boxes:
        return 0.0
    assignment = match_boxes(pred_boxes, gt_boxes)
    matched = sum(box_iou(pred_boxes[i], gt_boxes[j]) for i, j in assignment.matched_pairs)
    return float(matched / max(len(pred_boxes), len(gt_boxes)))


def _unified(pred_boxes, keyframe_index, frames: SceneFrames, propagator) -> tuple[float, str | None]:
    gt = frames.gt
    gt_at_key = [b for _, b in gt.visible_boxes(keyframe_index)]
    matched: list[BoundingBox] = []
    if pred_boxes and gt_at_key:
        assignment = match_boxes(pred_boxes, gt_at_key)
        matched = [pred_boxes[i] for i, _ in assignment.matched_pairs]
    if not matched:
        return (1.0 if gt.is_negative else 0.0), None
    try:
        masks = np.asarray(propagator.propagate(matched, frames, keyframe_index), dtype=bool)
        if masks.shape != gt.merged.shape:
            raise PropagationError(f"propagator returned shape {masks.shape}, expected {gt.merged.shape}")
    except Exception as exc:
        log.warning("propagation failed: %s", exc)
        return 0.0, f"propagator failed: {exc}"
    ious = [mask_iou(masks[t], gt.merged[t]) for t in range(gt.n_frames)]
    return float(np.mean(ious)), None


def unified_reward(
    pred_boxes: Sequence[BoundingBox],
    keyframe_index: int,
    frames: SceneFrames | GroundTruthSample,
    propagator: MaskPropagator,
) -> float:
    """Mean per-frame IoU between propagated matched boxes and the merged GT."""
    if isinstance(frames, GroundTruthSample):
        frames = SceneFrames(frames)
    if not 0 <= keyframe_index < frames.gt.n_frames:
        raise IndexError(f"keyframe index {keyframe_index} outside [0, {frames.gt.n_frames})")
    return _unified(list(pred_boxes), keyframe_index, frames, propagator)[0]


def total_reward(
    text,
    frames: SceneFrames | GroundTruthSample,
    weights: RewardWeights = RewardWeights(),
    propagator: MaskPropagator | None = None,
) -> RewardBreakdown:
    if isinstance(frames, GroundTruthSample):
        frames = SceneFrames(frames)
    if propagator is None:
        propagator = OraclePropagator()
    parsed = parse_response(text)
    if not isinstance(parsed, StructuredResponse):
        # unparseable answers cannot be scored on any other axis
        return RewardBreakdown(0.0, 0.0, 0.0, 0.0, 0.0, diag=parsed.failure_reason.value)
    gt = frames.gt
    boxes = list(parsed.boxes)
    k = snap_timestamp(parsed.keyframe_timestamp, gt.sampled_times)
    r_f = 1.0
    r_k = temporal_reward(k, gt, boxes)
    r_s = spatial_reward(boxes, [b for _, b in gt.visible_boxes(k)])
    r_u, diag = _unified(boxes, k, frames, propagator)
    total = (
        weights.alpha_f * r_f
        + weights.alpha_k * r_k
        + weights.alpha_s * r_s
        + weights.alpha_u * r_u
    )
    return RewardBreakdown(r_f, r_k, r_s, r_u, total, diag)


def reference_response(gt: GroundTruthSample, think_text: str = "Reference answer.") -> StructuredResponse:
    """The answer a perfect model gives: the earliest peak-area frame and
    every visible GT box there. On a negative sample: frame 0, no boxes."""
    k = int(np.argmax(gt.areas))
    return StructuredResponse(think_text, float(gt.sampled_times[k]),
                              tuple(b for _, b in gt.visible_boxes(k)))
