import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import box_iou, nms_reference
from slcmask.geometry import (
    Annotation,
    AnchorSet,
    AnnotationFormatError,
    Box,
    TileSpec,
    decode_array,
    decode_deltas,
    encode_array,
    encode_deltas,
    generate_anchor_array,
    generate_anchors,
    instances_to_annotations,
    iou,
    iou_matrix,
    mask_to_box,
    nms,
    nms_indices,
    read_annotations,
    rle_decode,
    rle_encode,
    tile_image,
    write_annotations,
)


def random_boxes(rng, n, extent=100.0, tie_levels=None):
    xy = rng.uniform(0, extent, (n, 2))
    wh = rng.uniform(1, extent / 3, (n, 2))
    boxes = np.concatenate([xy, xy + wh], axis=1)
    scores = rng.integers(0, tie_levels, n).astype(float) if tie_levels else rng.uniform(size=n)
    return boxes, scores


# ------------------------------------------------------------------ boxes
@pytest.mark.parametrize("coords", [(0, 0, 0, 1), (2, 0, 1, 1), (0, 0, np.nan, 1), (0, 0, np.inf, 1)])
def test_box_rejects_degenerate(coords):
    with pytest.raises(ValueError):
        Box(*coords)


def test_iou_examples():
    a = Box(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, Box(5, 5, 6, 6)) == 0.0
    assert iou(a, Box(1, 0, 3, 2)) == pytest.approx(1 / 3, abs=1e-15)
    assert iou(a, Box(2, 0, 4, 2)) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_iou_symmetric_and_matches_oracle(seed):
    boxes, _ = random_boxes(np.random.default_rng(seed), 2)
    a, b = Box.from_array(boxes[0]), Box.from_array(boxes[1])
    assert iou(a, b) == iou(b, a)
    assert iou(a, a) == 1.0
    assert 0.0 <= iou(a, b) <= 1.0
    assert iou(a, b) == pytest.approx(box_iou(boxes[0], boxes[1]), abs=1e-12)
    assert iou_matrix(boxes, boxes)[0, 1] == pytest.approx(iou(a, b), abs=1e-15)


def test_mask_to_box():
    m = np.zeros((6, 8), bool)
    m[2:4, 3:7] = True
    assert mask_to_box(m) == Box(3, 2, 7, 4)
    assert mask_to_box(np.zeros((3, 3), bool)) is None


# ------------------------------------------------------------------ nms
def test_nms_examples():
    b = Box(0, 0, 10, 10, score=0.5)
    assert nms([b], 0.1) == [b]
    hi, lo = Box(0, 0, 10, 10, score=0.9), Box(0, 0, 10, 10, score=0.8)
    assert nms([lo, hi], 0.1) == [hi]
    assert nms([], 0.1) == []


def test_nms_requires_scores():
    with pytest.raises(ValueError):
        nms([Box(0, 0, 1, 1)], 0.5)


def test_nms_tie_keeps_lower_index():
    boxes = np.array([[0, 0, 10, 10], [1, 1, 11, 11]], float)
    assert nms_indices(boxes, np.array([0.5, 0.5]), 0.1).tolist() == [0]
    assert nms_indices(boxes[::-1], np.array([0.5, 0.5]), 0.1).tolist() == [0]


def test_nms_threshold_is_strict():
    # IoU exactly 1/3 survives a threshold of 1/3
    boxes = np.array([[0, 0, 2, 2], [1, 0, 3, 2]], float)
    assert nms_indices(boxes, np.array([1.0, 0.5]), 1 / 3 + 1e-12).tolist() == [0, 1]
    assert nms_indices(boxes, np.array([1.0, 0.5]), 0.3).tolist() == [0]


def test_nms_max_keep():
    boxes, scores = random_boxes(np.random.default_rng(0), 50, extent=1000)
    full = nms_indices(boxes, scores, 0.5)
    assert nms_indices(boxes, scores, 0.5, max_keep=3).tolist() == full[:3].tolist()


@settings(max_examples=150, deadline=None)
@given(
    seed=st.integers(0, 100_000),
    n=st.integers(0, 60),
    thr=st.sampled_from([0.0, 0.1, 0.3, 0.5, 0.7, 1.0]),
    ties=st.sampled_from([None, 2, 5]),
)
def test_nms_matches_reference(seed, n, thr, ties):
    boxes, scores = random_boxes(np.random.default_rng(seed), n, tie_levels=ties)
    assert nms_indices(boxes, scores, thr).tolist() == nms_reference(boxes.tolist(), scores.tolist(), thr)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(1, 40), thr=st.floats(0.0, 0.9))
def test_nms_kept_and_suppressed_properties(seed, n, thr):
    boxes, scores = random_boxes(np.random.default_rng(seed), n, tie_levels=4)
    keep = nms_indices(boxes, scores, thr)
    m = iou_matrix(boxes, boxes)
    kept = set(keep.tolist())
    for i in kept:
        for j in kept:
            if i != j:
                assert m[i, j] <= thr
    for s in set(range(n)) - kept:
        assert any(m[s, k] > thr and (scores[k], -k) >= (scores[s], -s) for k in kept)


def test_nms_returns_original_objects():
    boxes = [Box(0, 0, 5, 5, score=0.3), Box(20, 20, 25, 25, score=0.9)]
    out = nms(boxes, 0.1)
    assert out[0] is boxes[1] and out[1] is boxes[0]


# ------------------------------------------------------------------ deltas
def test_delta_examples():
    a = Box(0, 0, 10, 10)
    assert encode_deltas(a, a) == (0.0, 0.0, 0.0, 0.0)
    assert encode_deltas(a, Box(5, 5, 15, 15)) == (0.5, 0.5, 0.0, 0.0)
    assert decode_deltas(a, (0.5, 0.5, 0.0, 0.0)) == Box(5, 5, 15, 15)


def test_decode_clips_to_image():
    out = decode_deltas(Box(0, 0, 10, 10), (0.5, 0.5, 0.0, 0.0), image_extent=(12, 20))
    assert out == Box(5, 5, 12, 15)


def test_delta_rejects_zero_width():
    bad = np.array([[0.0, 0.0, 0.0, 5.0]])
    good = np.array([[0.0, 0.0, 5.0, 5.0]])
    with pytest.raises(ValueError, match="positive width"):
        encode_array(bad, good)
    with pytest.raises(ValueError, match="positive width"):
        encode_array(good, bad)
    with pytest.raises(ValueError, match="positive width"):
        decode_array(bad, np.zeros((1, 4)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000))
def test_delta_round_trip(seed):
    rng = np.random.default_rng(seed)
    anchors, _ = random_boxes(rng, 64, extent=500)
    gt, _ = random_boxes(rng, 64, extent=500)
    # keep size ratios inside the decode clamp of 62.5x
    ratio = (gt[:, 2:] - gt[:, :2]) / (anchors[:, 2:] - anchors[:, :2])
    ok = (ratio < 60).all(axis=1)
    back = decode_array(anchors[ok], encode_array(anchors[ok], gt[ok]))
    assert np.abs(back - gt[ok]).max(initial=0.0) <= 1e-9


def test_decode_clamps_extreme_scale():
    out = decode_deltas(Box(0, 0, 1, 1), (0.0, 0.0, 50.0, 0.0))
    assert out.width == pytest.approx(62.5)


# ------------------------------------------------------------------ anchors
def test_anchor_examples():
    spec = AnchorSet(strides=(4,), base_scales=(32,))
    anchors = generate_anchors(spec, [(2, 2)])
    assert len(anchors) == 24
    sides = sorted({(round(a.width, 6), round(a.height, 6)) for a in anchors if abs(a.width - a.height) < 1e-9})
    assert sides == [(22.624, 22.624), (32.0, 32.0)]
    small = [a for a in anchors if abs(a.width - 22.624) < 1e-9 and abs(a.height - 22.624) < 1e-9]
    assert small[0].area == pytest.approx(22.624**2, abs=1e-9)


def test_anchor_placement_and_order():
    spec = AnchorSet(strides=(8,), base_scales=(32,))
    arr = generate_anchor_array(spec, [(2, 3)])[0]
    assert arr.shape == (36, 4)
    centers = 0.5 * (arr[:, :2] + arr[:, 2:])
    expected = [(8 * (j + 0.5), 8 * (i + 0.5)) for i in range(2) for j in range(3) for _ in range(6)]
    np.testing.assert_allclose(centers, expected, atol=1e-12)
    w, h = arr[:6, 2] - arr[:6, 0], arr[:6, 3] - arr[:6, 1]
    np.testing.assert_allclose(w / h, [0.5, 0.5, 1.0, 1.0, 1.5, 1.5], rtol=1e-9)
    np.testing.assert_allclose(np.sqrt(w * h), [32, 22.624] * 3, rtol=1e-9)


def test_anchor_signatures_default_levels():
    spec = AnchorSet()
    extents = [(2, 2)] * 5
    for (stride, base), level in zip(spec.levels, generate_anchor_array(spec, extents)):
        w, h = level[:, 2] - level[:, 0], level[:, 3] - level[:, 1]
        sigs = {(round(a, 3), round(r, 6)) for a, r in zip(w * h, w / h)}
        assert len(sigs) == 6
        for area, ratio in zip(w * h, w / h):
            assert any(abs(area - (m * base) ** 2) <= 1e-6 * area for m in spec.scale_multipliers)
            assert any(abs(ratio - r) <= 1e-9 for r in spec.aspect_ratios)


def test_anchor_set_validation():
    with pytest.raises(ValueError):
        AnchorSet(strides=(4, 8), base_scales=(32,))
    with pytest.raises(ValueError):
        AnchorSet(strides=(4, 8), base_scales=(32, 48))
    with pytest.raises(ValueError):
        generate_anchor_array(AnchorSet(), [(2, 2)])


# ------------------------------------------------------------------ tiling
def test_tile_single_center():
    tiles = tile_image((16384, 16384), [(5000.0, 7000.0)])
    assert len(tiles) == 1
    t = tiles[0]
    assert (t.width, t.height) == (1024, 1024)
    assert t.center == (5000.0, 7000.0)


def test_tile_near_centers_merge():
    a = Box(4488, 4488, 5512, 5512)
    b = Box(4496, 4488, 5520, 5512)
    assert iou(a, b) == pytest.approx(0.984, abs=1e-3)
    assert len(tile_image((16384, 16384), [(5000.0, 5000.0), (5008.0, 5000.0)])) == 1


def test_tile_far_centers_kept():
    assert len(tile_image((16384, 16384), [(2000.0, 2000.0), (6096.0, 2000.0)])) == 2


def test_tile_border_translates_inward():
    (t,) = tile_image((2048, 2048), [(10.0, 2040.0)])
    assert (t.x1, t.y1, t.x2, t.y2) == (0, 1024, 1024, 2048)


def test_tile_small_image_clamps():
    (t,) = tile_image((300, 200), [(100.0, 100.0)], TileSpec(tile_size=256))
    assert (t.x1, t.y1, t.x2, t.y2) == (0, 0, 256, 200)


def test_tile_empty_and_out_of_bounds():
    assert tile_image((100, 100), []) == []
    with pytest.raises(ValueError, match="outside"):
        tile_image((100, 100), [(150.0, 10.0)])


def test_tile_prefers_denser_tile():
    # the second centre's tile holds all three centres and wins the overlap
    centers = [(200.0, 512.0), (700.0, 512.0), (900.0, 512.0)]
    tiles = tile_image((4096, 4096), centers)
    assert tiles[0].score == 3.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(1, 30))
def test_tile_properties(seed, n):
    rng = np.random.default_rng(seed)
    centers = [tuple(c) for c in rng.uniform(0, 2048, (n, 2))]
    tiles = tile_image((2048, 2048), centers, TileSpec(tile_size=512))
    arr = np.array([[t.x1, t.y1, t.x2, t.y2] for t in tiles])
    assert (arr[:, :2] >= 0).all() and (arr[:, 2:] <= 2048).all()
    assert ((arr[:, 2:] - arr[:, :2]) == 512).all()
    m = iou_matrix(arr, arr)
    np.fill_diagonal(m, 0)
    assert m.max() <= 0.1


# ------------------------------------------------------------------ annotations
@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 9), st.integers(1, 9))
def test_rle_round_trip(seed, h, w):
    mask = np.random.default_rng(seed).random((h, w)) < 0.4
    runs = rle_encode(mask)
    assert sum(runs) == h * w
    np.testing.assert_array_equal(rle_decode(runs, (h, w)), mask)


def test_rle_examples():
    assert rle_encode(np.array([[1, 1, 0]], bool)) == [0, 2, 1]
    assert rle_encode(np.array([[0, 1, 1]], bool)) == [1, 2]
    with pytest.raises(ValueError):
        rle_decode([1, 1], (2, 2))


def test_annotation_file_round_trip():
    rng = np.random.default_rng(4)
    full = np.zeros((64, 64), bool)
    full[10:20, 30:34] = rng.random((10, 4)) < 0.7
    full[10, 30] = full[19, 33] = True
    ann = Annotation.from_mask(full)
    tile = Box(16, 0, 48, 32)
    buf = io.StringIO()
    write_annotations(buf, [tile], [(0, ann)])
    buf.seek(0)
    tiles, insts = read_annotations(buf)
    assert tiles == [tile]
    (tid, cls, box, crop), = insts
    assert (tid, cls) == (0, 1)
    assert box == Box(14, 10, 18, 20)
    # remap back to the global frame
    back = instances_to_annotations([(tid, cls, box.translate(16, 0), crop)], (64, 64))
    np.testing.assert_array_equal(back[0].mask, full)


@pytest.mark.parametrize(
    "text,line",
    [
        ("tile 0 0 10 10\ninst 1 1 0 0 2 2 4\n", 2),
        ("tile 0 0 10\n", 1),
        ("# c\n\nbogus 1\n", 3),
        ("tile 0 0 10 10\ninst 0 1 0 0 2 2 3\n", 2),
        ("tile 0 0 10 10\ninst 0 1 0 0 2 x 4\n", 2),
    ],
)
def test_annotation_errors_carry_line(text, line):
    with pytest.raises(AnnotationFormatError) as err:
        read_annotations(io.StringIO(text), path="a.txt")
    assert err.value.line == line
    assert f"a.txt: line {line}" in str(err.value)
