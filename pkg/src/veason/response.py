"""Parsing and serialization of ``<think>...</think><answer>...</answer>`` outputs."""
from __future__ import annotations

import bisect
import enum
import json
import math
import re
from dataclasses import dataclass, field
from typing import Sequence

from .geometry import BoundingBox

THINK_OPEN, THINK_CLOSE = "<think>", "</think>"
ANSWER_OPEN, ANSWER_CLOSE = "<answer>", "</answer>"
TAGS = (THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE)

TIMESTAMP_KEY = "keyframe_timestamp"
BOXES_KEY = "bbox_2d_list"

_TIMESTAMP_STR = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*s?\s*$")


class FailureReason(str, enum.Enum):
    MISSING_THINK = "MissingThink"
    MISSING_ANSWER = "MissingAnswer"
    BAD_ORDER = "BadOrder"
    BAD_PAYLOAD = "BadPayload"
    BAD_BOX = "BadBox"
    BAD_TIMESTAMP = "BadTimestamp"
    EXTRA_CONTENT = "ExtraContent"


@dataclass(frozen=True)
class FormatVerdict:
    well_formed: bool
    failure_reason: FailureReason | None = None
    detail: str = ""

    def __post_init__(self):
        if self.well_formed != (self.failure_reason is None):
            raise ValueError("well_formed must hold exactly when failure_reason is absent")


@dataclass(frozen=True)
class StructuredResponse:
    think_text: str
    keyframe_timestamp: float
    boxes: tuple[BoundingBox, ...] = ()
    raw_text: str = field(default="", compare=False)

    @property
    def verdict(self) -> FormatVerdict:
        return FormatVerdict(True)


class SerializationError(ValueError):
    pass


def _fail(reason: FailureReason, detail: str = "") -> FormatVerdict:
    return FormatVerdict(False, reason, detail)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _to_float(v) -> float | None:
    try:
        f = float(v)
    except (OverflowError, ValueError):
        return None
    return f if math.isfinite(f) else None


def _parse_timestamp(v) -> float | None:
    if _is_number(v):
        t = _to_float(v)
    elif isinstance(v, str):
        m = _TIMESTAMP_STR.match(v)
        t = _to_float(m.group(1)) if m else None
    else:
        return None
    if t is None or t < 0:
        return None
    return t


def _parse_box(v) -> BoundingBox | None:
    if not isinstance(v, list) or len(v) != 4 or not all(_is_number(c) for c in v):
        return None
    coords = [_to_float(c) for c in v]
    if any(c is None for c in coords):
        return None
    x1, y1, x2, y2 = coords
    if x1 > x2 or y1 > y2:
        return None
    return BoundingBox(x1, y1, x2, y2)


def _reject_constant(name):
    raise ValueError(f"non-standard JSON constant {name}")


def _pairs_no_duplicates(pairs):
    out = dict(pairs)
    if len(out) != len(pairs):
        raise ValueError("duplicate key in answer payload")
    return out


def _parse_payload(payload: str) -> tuple[float, tuple[BoundingBox, ...]] | FormatVerdict:
    try:
        obj = json.loads(
            payload,
            object_pairs_hook=_pairs_no_duplicates,
            parse_constant=_reject_constant,
        )
    except (ValueError, RecursionError) as exc:
        return _fail(FailureReason.BAD_PAYLOAD, f"answer is not JSON: {exc}")
    if not isinstance(obj, dict):
        return _fail(FailureReason.BAD_PAYLOAD, "answer must be a JSON object")
    if set(obj) != {TIMESTAMP_KEY, BOXES_KEY}:
        return _fail(FailureReason.BAD_PAYLOAD, f"answer keys must be exactly {TIMESTAMP_KEY}, {BOXES_KEY}")
    timestamp, boxes = None, None
    # fields are validated in the order they appear in the payload
    for key, value in obj.items():
        if key == TIMESTAMP_KEY:
            timestamp = _parse_timestamp(value)
            if timestamp is None:
                return _fail(FailureReason.BAD_TIMESTAMP, f"bad timestamp {value!r}")
        else:
            if not isinstance(value, list):
                return _fail(FailureReason.BAD_PAYLOAD, f"{BOXES_KEY} must be a list")
            parsed = []
            for raw in value:
                b = _parse_box(raw)
                if b is None:
                    return _fail(FailureReason.BAD_BOX, f"bad box {raw!r}")
                parsed.append(b)
            boxes = tuple(parsed)
    return timestamp, boxes


def parse_response(text: str | bytes) -> StructuredResponse | FormatVerdict:
    """Parse a model output; never raises.

    Structural checks run first (think block, answer block, order, stray
    text), then the answer payload. The first failure found is returned.
    """
    if isinstance(text, (bytes, bytearray)):
        text = bytes(text).decode("utf-8", errors="replace")

    t_open = text.find(THINK_OPEN)
    t_close = text.find(THINK_CLOSE, t_open + len(THINK_OPEN)) if t_open >= 0 else -1
    if t_open < 0 or t_close < 0:
        return _fail(FailureReason.MISSING_THINK)
    think_end = t_close + len(THINK_CLOSE)

    a_open = text.find(ANSWER_OPEN, think_end)
    a_close = text.find(ANSWER_CLOSE, a_open + len(ANSWER_OPEN)) if a_open >= 0 else -1
    if a_open < 0 or a_close < 0:
        early = text.find(ANSWER_OPEN)
        if 0 <= early < t_open and text.find(ANSWER_CLOSE, early) >= 0:
            return _fail(FailureReason.BAD_ORDER)
        return _fail(FailureReason.MISSING_ANSWER)
    answer_end = a_close + len(ANSWER_CLOSE)

    think_text = text[t_open + len(THINK_OPEN):t_close]
    payload = text[a_open + len(ANSWER_OPEN):a_close]
    outside = (text[:t_open], text[think_end:a_open], text[answer_end:])
    if any(s.strip() for s in outside):
        return _fail(FailureReason.EXTRA_CONTENT, "text outside the think/answer blocks")
    if any(tag in think_text for tag in TAGS) or any(tag in payload for tag in TAGS):
        return _fail(FailureReason.EXTRA_CONTENT, "nested tag inside a block")

    parsed = _parse_payload(payload)
    if isinstance(parsed, FormatVerdict):
        return parsed
    timestamp, boxes = parsed
    return StructuredResponse(think_text, timestamp, boxes, raw_text=text)


def is_well_formed(text: str | bytes) -> bool:
    return isinstance(parse_response(text), StructuredResponse)


def _number(v: float):
    # integral values print without a trailing ".0"; float repr round-trips exactly
    if float(v).is_integer() and abs(v) < 2**53:
        return int(v)
    return float(v)


def serialize_response(r: StructuredResponse) -> str:
    for tag in TAGS:
        if tag in r.think_text:
            raise SerializationError(f"think text contains the tag literal {tag}")
    if not math.isfinite(r.keyframe_timestamp) or r.keyframe_timestamp < 0:
        raise SerializationError(f"invalid keyframe timestamp {r.keyframe_timestamp}")
    payload = {
        TIMESTAMP_KEY: _number(r.keyframe_timestamp),
        BOXES_KEY: [[_number(c) for c in b.as_list()] for b in r.boxes],
    }
    return f"{THINK_OPEN}{r.think_text}{THINK_CLOSE}{ANSWER_OPEN}{json.dumps(payload)}{ANSWER_CLOSE}"


def snap_timestamp(t: float, sampled_times: Sequence[float]) -> int:
    """Index of the sampled time nearest to ``t``; ties go to the earlier frame."""
    if len(sampled_times) == 0:
        raise ValueError("sampled_times must be nonempty")
    i = bisect.bisect_left(sampled_times, t)
    if i == 0:
        return 0
    if i == len(sampled_times):
        return len(sampled_times) - 1
    before, after = sampled_times[i - 1], sampled_times[i]
    return i - 1 if t - before <= after - t else i
