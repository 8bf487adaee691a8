import json
from collections import Counter

import numpy as np
import pytest

from veason.cotgen import (
    TEMPLATES, CotError, build_record, build_records, prompt_text, records_jsonl,
    sample_pseudo_keyframe, top_area_frames,
)
from veason.response import StructuredResponse, parse_response
from veason.rewards import GroundTruthSample, spatial_reward, temporal_reward


def gt_areas(areas):
    masks = np.zeros((len(areas), 1, 4, 4), bool)
    for t, a in enumerate(areas):
        masks[t, 0].flat[:a] = True
    return GroundTruthSample(tuple(float(i) for i in range(len(areas))), masks)


def test_top_frames():
    assert top_area_frames([9, 8, 7, 6, 5, 4, 3]) == [0, 1, 2, 3, 4]
    assert sorted(top_area_frames([1, 2, 3])) == [0, 1, 2]
    assert sorted(top_area_frames([5] * 6)) == [0, 1, 2, 3, 4]
    assert top_area_frames([0, 3, 0]) == [1]


def test_pseudo_keyframe_uniform_over_top_five():
    gt = gt_areas([9, 8, 7, 6, 5, 4, 3])
    rng = np.random.default_rng(0)
    n = 20000
    counts = Counter(sample_pseudo_keyframe(gt, rng) for _ in range(n))
    assert set(counts) == {0, 1, 2, 3, 4}
    sigma = np.sqrt(n * 0.2 * 0.8)
    assert all(abs(c - n * 0.2) < 4 * sigma for c in counts.values())


def test_pseudo_keyframe_rejects_absent_target():
    with pytest.raises(CotError):
        sample_pseudo_keyframe(gt_areas([0, 0]), np.random.default_rng(0))


def test_records_parse_and_are_self_consistent(small_manifest):
    recs = build_records(small_manifest.samples, seed=3)
    by_id = small_manifest.by_id()
    assert len(recs) == sum(not s.is_negative for s in small_manifest.samples)
    for r in recs:
        s = by_id[r.sample_id]
        parsed = parse_response(r.target_text)
        assert isinstance(parsed, StructuredResponse)
        k = r.keyframe_index
        assert parsed.keyframe_timestamp == s.sampled_times[k]
        assert spatial_reward(list(parsed.boxes), [b for _, b in s.gt.visible_boxes(k)]) == 1.0
        assert k in top_area_frames(s.gt.areas)
        top = top_area_frames(s.gt.areas)
        assert temporal_reward(k, s.gt) >= s.gt.areas[top[-1]] / s.gt.areas.max()
        assert "<0s><image>" in r.prompt_text
        assert s.query.expression_text in r.prompt_text


def test_single_object_record_has_one_box(small_manifest):
    s = next(s for s in small_manifest.samples if len(s.object_indices) == 1)
    r = build_record(s, int(np.argmax(s.gt.areas)), np.random.default_rng(0))
    assert len(parse_response(r.target_text).boxes) == 1


def test_determinism(small_manifest):
    a = records_jsonl(build_records(small_manifest.samples, seed=3))
    b = records_jsonl(build_records(small_manifest.samples, seed=3))
    assert a == b
    for line in a.splitlines():
        assert set(json.loads(line)) == {"sample_id", "prompt", "target"}


def test_template_choice_is_uniform(small_manifest):
    s = next(s for s in small_manifest.samples if not s.is_negative)
    k = int(np.argmax(s.gt.areas))
    rng = np.random.default_rng(8)
    n = 10000
    counts = Counter(build_record(s, k, rng).template_id for _ in range(n))
    assert set(counts) == set(TEMPLATES)
    sigma = np.sqrt(n / 3 * 2 / 3)
    assert all(abs(c - n / 3) < 3 * sigma for c in counts.values())


def test_build_record_rejects_empty_frame():
    from veason.env import ObjectTrack, Occluder, Query, SyntheticVideo, build_sample

    # hidden behind the bar at t=0, clear of it at t=1
    obj = ObjectTrack(0, "rectangle", 0, 6.0, 6.0, 10.0, 10.0, 10.0, 0.0)
    video = SyntheticVideo("v", 32, 32, (0.0, 1.0), (obj,), (Occluder("vertical", 5, 12),))
    s = build_sample("s", "train", video, Query("color", 0, "red?"))
    assert s.gt.areas[0] == 0 and s.gt.areas[1] > 0
    with pytest.raises(CotError):
        build_record(s, 0, np.random.default_rng(0))
    assert build_record(s, 1, np.random.default_rng(0)).keyframe_index == 1


def test_prompt_has_timestamps(small_manifest):
    text = prompt_text(small_manifest.samples[0])
    assert text.count("<image>") == 8
    assert "<7s><image>" in text
