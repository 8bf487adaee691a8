import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from veason.geometry import (
    BoundingBox, GeometryError, RleMask, boundary_fscore, box_iou, box_to_mask,
    default_boundary_tolerance, mask_area, mask_boundary, mask_iou, masks_union,
    rle_decode, rle_encode, tight_box,
)


def brute_box_iou(a, b, scale=4):
    """Pixel-count IoU on a raster fine enough for integer-ish boxes."""
    w = int(max(a.x2, b.x2) * scale) + 2
    h = int(max(a.y2, b.y2) * scale) + 2
    ys, xs = np.mgrid[0:h, 0:w]
    xs = (xs + 0.5) / scale
    ys = (ys + 0.5) / scale

    def inside(bx):
        return (xs > bx.x1) & (xs < bx.x2) & (ys > bx.y1) & (ys < bx.y2)

    ma, mb = inside(a), inside(b)
    union = (ma | mb).sum()
    return 0.0 if union == 0 else (ma & mb).sum() / union


class TestBoxes:
    def test_box_rejects_inverted_and_nonfinite(self):
        with pytest.raises(GeometryError):
            BoundingBox(5, 0, 1, 3)
        with pytest.raises(GeometryError):
            BoundingBox(0, 0, float("nan"), 3)

    def test_iou_examples(self):
        a = BoundingBox(0, 0, 10, 10)
        assert box_iou(a, a) == 1.0
        assert box_iou(a, BoundingBox(20, 20, 30, 30)) == 0.0
        assert box_iou(a, BoundingBox(5, 0, 15, 10)) == pytest.approx(1 / 3, abs=1e-15)

    def test_iou_matches_pixel_count(self, rng):
        for _ in range(50):
            c = rng.integers(0, 12, size=4)
            a = BoundingBox(min(c[0], c[1]), min(c[2], c[3]), max(c[0], c[1]), max(c[2], c[3]))
            d = rng.integers(0, 12, size=4)
            b = BoundingBox(min(d[0], d[1]), min(d[2], d[3]), max(d[0], d[1]), max(d[2], d[3]))
            assert box_iou(a, b) == pytest.approx(brute_box_iou(a, b), abs=1e-12)

    def test_degenerate_boxes_have_zero_iou(self):
        z = BoundingBox(3, 3, 3, 3)
        assert box_iou(z, z) == 0.0

    @given(st.lists(st.floats(0, 100), min_size=8, max_size=8))
    def test_iou_symmetric_and_bounded(self, v):
        a = BoundingBox(min(v[0], v[1]), min(v[2], v[3]), max(v[0], v[1]), max(v[2], v[3]))
        b = BoundingBox(min(v[4], v[5]), min(v[6], v[7]), max(v[4], v[5]), max(v[6], v[7]))
        assert 0.0 <= box_iou(a, b) <= 1.0
        assert box_iou(a, b) == box_iou(b, a)


class TestMasks:
    def test_mask_iou_examples(self):
        m = np.zeros((10, 10), bool)
        m[2:5, 3:7] = True
        assert mask_iou(m, m) == 1.0
        assert mask_iou(np.zeros((4, 4), bool), np.zeros((4, 4), bool)) == 1.0
        full = np.ones((10, 10), bool)
        half = full.copy()
        half[:, 5:] = False
        assert mask_iou(full, half) == 0.5

    def test_mask_iou_shape_mismatch(self):
        with pytest.raises(GeometryError):
            mask_iou(np.zeros((3, 3), bool), np.zeros((3, 4), bool))

    def test_area(self):
        assert mask_area(np.zeros((64, 64), bool)) == 0
        assert mask_area(np.ones((64, 64), bool)) == 4096
        assert mask_area(box_to_mask(BoundingBox(2, 3, 7, 7), 16, 16)) == 20

    def test_box_to_mask_examples(self):
        assert box_to_mask(BoundingBox(0, 0, 64, 64), 64, 64).all()
        m = box_to_mask(BoundingBox(-5, -5, 3, 3), 8, 8)
        assert m.sum() == 9 and m[:3, :3].all()
        assert not box_to_mask(BoundingBox(4, 4, 4, 9), 8, 8).any()

    def test_tight_box_inverts_box_to_mask(self, rng):
        for _ in range(30):
            x1, y1 = rng.integers(0, 20, 2)
            w, h = rng.integers(1, 10, 2)
            b = BoundingBox(x1, y1, x1 + w, y1 + h)
            assert tight_box(box_to_mask(b, 32, 32)) == b
        assert tight_box(np.zeros((5, 5), bool)) is None

    def test_union(self):
        a = np.zeros((3, 3), bool)
        a[0, 0] = True
        b = np.zeros((3, 3), bool)
        b[2, 2] = True
        assert masks_union([a, b], 3, 3).sum() == 2
        assert masks_union([], 3, 3).shape == (3, 3)


class TestBoundary:
    def test_identical_and_empty(self):
        m = np.zeros((12, 12), bool)
        m[2:8, 2:8] = True
        for tol in (0, 1, 3):
            assert boundary_fscore(m, m, tol) == 1.0
        assert boundary_fscore(np.zeros_like(m), m, 1) == 0.0
        assert boundary_fscore(np.zeros_like(m), np.zeros_like(m), 1) == 1.0

    def test_shift_by_one_within_tolerance(self):
        gt = np.zeros((20, 20), bool)
        gt[0:10, 0:10] = True
        pred = np.zeros_like(gt)
        pred[0:10, 1:11] = True
        assert boundary_fscore(pred, gt, 1) == 1.0
        assert boundary_fscore(pred, gt, 0) < 1.0

    def test_against_brute_force_distance(self, rng):
        for _ in range(20):
            a = rng.random((10, 10)) < 0.4
            b = rng.random((10, 10)) < 0.4
            tol = int(rng.integers(0, 3))
            ba, bb = mask_boundary(a), mask_boundary(b)
            pa, pb = np.argwhere(ba), np.argwhere(bb)
            if len(pa) == 0 or len(pb) == 0:
                continue

            def hits(src, dst):
                d = np.abs(src[:, None, :] - dst[None, :, :]).max(axis=2)
                return (d.min(axis=1) <= tol).mean()

            prec, rec = hits(pa, pb), hits(pb, pa)
            f = 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)
            assert boundary_fscore(a, b, tol) == pytest.approx(f, abs=1e-12)

    def test_default_tolerance(self):
        assert default_boundary_tolerance(64, 64) == 1
        assert default_boundary_tolerance(854, 480) == 8


class TestRle:
    def test_examples(self):
        assert rle_encode(np.zeros((2, 2), bool)).counts == (4,)
        assert rle_encode(np.ones((2, 2), bool)).counts == (0, 4)
        m = np.array([[1, 0], [0, 1]], bool)
        assert rle_encode(m).counts == (0, 1, 2, 1)

    def test_json_round_trip(self):
        m = np.array([[1, 0, 1], [1, 1, 0]], bool)
        r = rle_encode(m)
        assert r.to_json() == {"w": 3, "h": 2, "counts": [0, 1, 1, 3, 1]}
        assert np.array_equal(rle_decode(RleMask.from_json(r.to_json())), m)

    def test_decode_rejects_bad_counts(self):
        with pytest.raises(GeometryError):
            rle_decode(RleMask(2, 2, (3,)))
        with pytest.raises((GeometryError, ValueError)):
            RleMask.from_json({"w": 2, "h": 2, "counts": [4], "extra": 1})

    @settings(max_examples=200)
    @given(st.integers(1, 9), st.integers(1, 9), st.data())
    def test_round_trip_property(self, w, h, data):
        bits = data.draw(st.lists(st.booleans(), min_size=w * h, max_size=w * h))
        m = np.array(bits, bool).reshape(h, w)
        r = rle_encode(m)
        assert sum(r.counts) == w * h
        assert np.array_equal(rle_decode(r), m)
