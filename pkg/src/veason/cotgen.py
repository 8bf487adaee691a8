"""Chain-of-thought SFT records built from synthetic ground truth.

A language model is not needed here: the reasoning text is filled into one
of three templates from scene metadata, and the answer block carries the
pseudo-keyframe and the ground-truth boxes at that frame.
"""
from __future__ import annotations

import json
import math
import string
from dataclasses import dataclass

import numpy as np

from .env import PALETTE, Sample
from .response import TAGS, StructuredResponse, serialize_response

SLOTS = ("scene_summary", "keyframe_justification", "localization_description")
TOP_K = 5

TEMPLATES = {
    1: (
        "First, an overview of the clip. {scene_summary} "
        "Next, why this frame fits the question. {keyframe_justification} "
        "Finally, where the target is. {localization_description}"
    ),
    2: (
        "{scene_summary} Looking for the frame that best answers the question, "
        "{keyframe_justification} Now I can pin the target down: "
        "{localization_description}"
    ),
    3: (
        "Let me reason step by step. Scene: {scene_summary} "
        "Relevance of the chosen frame: {keyframe_justification} "
        "Localization: {localization_description} That settles the answer."
    ),
}

QUESTION_TEMPLATE = (
    "You are given {n_frames} frames sampled from a video, each preceded by its "
    "timestamp: {frames}\n"
    "Question: {query}\n"
    "Think step by step inside <think> </think> tags. Then, inside <answer> </answer> "
    "tags, give a JSON object with the keyframe_timestamp where the referred objects "
    "are most visible and the bbox_2d_list of their boxes in that frame as "
    "[x1, y1, x2, y2] pixel coordinates."
)

_ORDINALS = ("largest", "second largest", "third largest", "fourth largest", "fifth largest")


def _check_templates() -> None:
    for tid, text in TEMPLATES.items():
        fields = [f for _, f, _, _ in string.Formatter().parse(text) if f]
        if sorted(fields) != sorted(SLOTS):
            raise AssertionError(f"template {tid} must use each slot exactly once")


_check_templates()


@dataclass(frozen=True)
class CotRecord:
    sample_id: str
    prompt_text: str
    target_text: str
    template_id: int
    keyframe_index: int

    def to_json(self) -> dict:
        return {"sample_id": self.sample_id, "prompt": self.prompt_text, "target": self.target_text}


class CotError(ValueError):
    pass


def top_area_frames(areas, k: int = TOP_K) -> list[int]:
    """Up to ``k`` nonzero-area frames by decreasing area, earlier frame first on ties."""
    ranked = sorted((i for i, a in enumerate(areas) if a > 0), key=lambda i: (-areas[i], i))
    return ranked[:k]


def sample_pseudo_keyframe(gt, rng: np.random.Generator) -> int:
    candidates = top_area_frames([int(a) for a in gt.areas])
    if not candidates:
        raise CotError("target is absent from every frame; negative samples get no CoT record")
    return int(candidates[int(rng.integers(len(candidates)))])


def prompt_text(sample: Sample) -> str:
    frames = " ".join(f"<{_fmt_time(t)}s><image>" for t in sample.sampled_times)
    return QUESTION_TEMPLATE.format(n_frames=len(sample.sampled_times), frames=frames,
                                    query=sample.query.expression_text)


def _fmt_time(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else repr(float(t))


def _direction(vx: float, vy: float) -> str:
    if math.hypot(vx, vy) < 0.5:
        return "barely moves"
    horiz = "right" if vx > 0 else "left"
    vert = "down" if vy > 0 else "up"
    if abs(vx) > 2 * abs(vy):
        return f"drifts {horiz}"
    if abs(vy) > 2 * abs(vx):
        return f"drifts {vert}"
    return f"drifts {vert} and to the {horiz}"


def _describe(obj) -> str:
    return f"{PALETTE[obj.color_id]} {obj.shape}"


def _position(box, width: int, height: int) -> str:
    cx = (box.x1 + box.x2) / 2 / width
    cy = (box.y1 + box.y2) / 2 / height
    row = ("upper", "middle", "lower")[min(int(cy * 3), 2)]
    col = ("left", "center", "right")[min(int(cx * 3), 2)]
    return "center" if (row, col) == ("middle", "center") else f"{row} {col}"


def _scene_summary(sample: Sample) -> str:
    video = sample.video
    parts = [f"a {_describe(o)} that {_direction(o.vx, o.vy)}" for o in video.objects]
    text = f"The clip contains {len(parts)} shapes: " + "; ".join(parts) + "."
    if video.occluders:
        text += f" A {video.occluders[0].orientation} bar hides part of the view."
    return text


def _keyframe_justification(sample: Sample, k: int) -> str:
    ranked = top_area_frames([int(a) for a in sample.gt.areas], k=len(sample.gt.areas))
    rank = ranked.index(k)
    t = _fmt_time(sample.sampled_times[k])
    names = " and ".join(_describe(sample.video.objects[i]) for i in sample.object_indices)
    what = "the target" if len(sample.object_indices) == 1 else "the targets"
    return (f"The question points to the {names}. At {t}s {what} covers "
            f"{int(sample.gt.areas[k])} pixels, the {_ORDINALS[rank] if rank < len(_ORDINALS) else 'a smaller'} "
            f"view among the sampled frames, so it is clearly visible there.")


def _localization(sample: Sample, k: int) -> str:
    gt = sample.gt
    pieces = []
    for o, box in gt.visible_boxes(k):
        obj = sample.video.objects[sample.object_indices[o]]
        pieces.append(
            f"the {_describe(obj)} sits in the {_position(box, gt.width, gt.height)} of the frame, "
            f"spanning x from {box.x1:g} to {box.x2:g} and y from {box.y1:g} to {box.y2:g}"
        )
    return "; ".join(pieces).capitalize() + "."


def build_record(sample: Sample, pseudo_keyframe: int, rng: np.random.Generator) -> CotRecord:
    if sample.gt.areas[pseudo_keyframe] == 0:
        raise CotError(f"{sample.sample_id}: keyframe {pseudo_keyframe} shows no target")
    template_id = int(rng.integers(1, len(TEMPLATES) + 1))
    slots = {
        "scene_summary": _scene_summary(sample),
        "keyframe_justification": _keyframe_justification(sample, pseudo_keyframe),
        "localization_description": _localization(sample, pseudo_keyframe),
    }
    think = TEMPLATES[template_id].format(**slots)
    if any(tag in think for tag in TAGS):
        raise CotError("rendered reasoning contains a tag literal")
    answer = StructuredResponse(
        think,
        float(sample.sampled_times[pseudo_keyframe]),
        tuple(b for _, b in sample.gt.visible_boxes(pseudo_keyframe)),
    )
    return CotRecord(sample.sample_id, prompt_text(sample), serialize_response(answer),
                     template_id, pseudo_keyframe)


def build_records(samples, seed: int) -> list[CotRecord]:
    """One record per positive sample; each sample draws from its own stream."""
    records = []
    for i, s in enumerate(samples):
        if s.gt.is_negative:
            continue
        rng = np.random.default_rng([seed, 6, i])
        records.append(build_record(s, sample_pseudo_keyframe(s.gt, rng), rng))
    return records


def records_jsonl(records) -> str:
    return "".join(json.dumps(r.to_json(), ensure_ascii=False) + "\n" for r in records)
