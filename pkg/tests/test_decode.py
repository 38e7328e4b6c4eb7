import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dense_ntp.decode import (
    CategoryLogits,
    CropMapping,
    CropSpec,
    DegenerateBox,
    InvalidTemperature,
    VocabularyMismatch,
    aggregate_category_logits,
    bilinear_resize,
    crop_with_padding,
    decode_depth,
    decode_semantic,
    draw_box,
    paste_back,
    pca_rgb,
    read_soft_map,
    soft_map,
    write_soft_map,
)
from dense_ntp.densemap import DenseMap
from dense_ntp.errors import GridMismatch
from dense_ntp.loss import LogitsGrid
from dense_ntp.vocab import CategoryTokenMap, EmptyTokenSet, build_vocabulary

seeds = st.integers(0, 2**32 - 1)


def bilinear_pixel(img, oy, ox, out_h, out_w):
    """Half-pixel bilinear sample of a 2-D array at one output pixel."""
    h, w = img.shape
    sy = min(max((oy + 0.5) * h / out_h - 0.5, 0.0), h - 1)
    sx = min(max((ox + 0.5) * w / out_w - 0.5, 0.0), w - 1)
    y0, x0 = int(math.floor(sy)), int(math.floor(sx))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    fy, fx = sy - y0, sx - x0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def cl(scores, gw, gh):
    return CategoryLogits(gw, gh, np.asarray(scores, float))


# -- aggregation -------------------------------------------------------------


def test_singleton_and_pair_means():
    z = np.zeros((1, 10))
    z[0, 7], z[0, 1], z[0, 2] = 3.2, 1.0, 3.0
    m = CategoryTokenMap.from_sets(["a", "b"], [[7], [1, 2]], 10)
    out = aggregate_category_logits(LogitsGrid(1, 1, z), m)
    np.testing.assert_allclose(out.scores, [[3.2, 2.0]])


def test_overlapping_sets_average_independently():
    z = np.array([[1.0, 2.0, 6.0]])
    m = CategoryTokenMap.from_sets(["a", "b"], [[0, 1], [1, 2]], 3)
    out = aggregate_category_logits(LogitsGrid(1, 1, z), m)
    np.testing.assert_allclose(out.scores, [[1.5, 4.0]])


def test_aggregation_errors():
    m = CategoryTokenMap.from_sets(["a"], [[5]], 6)
    with pytest.raises(VocabularyMismatch):
        aggregate_category_logits(LogitsGrid(1, 1, np.zeros((1, 3))), m)
    bad = CategoryTokenMap(("a",), (frozenset({0}),), ((0,),), 3)
    object.__setattr__(bad, "token_sets", (frozenset(),))
    with pytest.raises(EmptyTokenSet):
        aggregate_category_logits(LogitsGrid(1, 1, np.zeros((1, 3))), bad)


@given(seeds)
def test_aggregation_ignores_set_order(seed):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((4, 12))
    sets = [rng.choice(12, size=int(rng.integers(1, 6)), replace=False) for _ in range(3)]
    a = aggregate_category_logits(LogitsGrid(2, 2, z), CategoryTokenMap.from_sets("abc", sets, 12))
    b = aggregate_category_logits(LogitsGrid(2, 2, z), CategoryTokenMap.from_sets("abc", [s[::-1] for s in sets], 12))
    np.testing.assert_array_equal(a.scores, b.scores)


# -- semantic decode ------------------------------------------------------------


def test_constant_field():
    out = decode_semantic(cl([[2.0, 1.0]], 1, 1), 4, 4)
    assert out.values.shape == (4, 4)
    assert np.all(out.values == 0)


def test_two_token_boundary():
    out = decode_semantic(cl([[1.0, 0.0], [0.0, 1.0]], 2, 1), 4, 2)
    np.testing.assert_array_equal(out.values, [[0, 0, 1, 1]] * 2)
    # odd width puts the centre pixel exactly on the midpoint: tie -> class 0
    mid = decode_semantic(cl([[1.0, 0.0], [0.0, 1.0]], 2, 1), 5, 1)
    np.testing.assert_array_equal(mid.values, [[0, 0, 0, 1, 1]])


def test_sigmoid_background_tie_goes_to_background():
    out = decode_semantic(cl([[0.0]], 1, 1), 2, 2, background=(0.25, 0.5))
    assert np.all(out.values == 255)
    out = decode_semantic(cl([[0.01]], 1, 1), 2, 2, background=(0.25, 0.5))
    assert np.all(out.values == 0)


def test_temperature_validation():
    with pytest.raises(InvalidTemperature):
        decode_semantic(cl([[1.0]], 1, 1), 1, 1, temperature=0.0)
    with pytest.raises(InvalidTemperature):
        soft_map(cl([[1.0]], 1, 1), 1, 1, temperature=-1.0)


def test_output_smaller_than_grid():
    with pytest.raises(GridMismatch):
        decode_semantic(cl(np.zeros((4, 2)), 2, 2), 1, 2)


@given(seeds, st.integers(1, 4), st.integers(1, 4), st.integers(1, 9), st.integers(1, 9))
def test_bilinear_matches_pixel_oracle(seed, gw, gh, fx, fy):
    rng = np.random.default_rng(seed)
    img = rng.standard_normal((2, gh, gw))
    out_h, out_w = gh + fy, gw + fx
    up = bilinear_resize(img, out_h, out_w)
    for c in range(2):
        for y in range(out_h):
            for x in range(out_w):
                assert up[c, y, x] == pytest.approx(bilinear_pixel(img[c], y, x, out_h, out_w), abs=1e-12)
    # never leaves the per-channel input range
    assert np.all(up.min(axis=(1, 2)) >= img.min(axis=(1, 2)) - 1e-12)
    assert np.all(up.max(axis=(1, 2)) <= img.max(axis=(1, 2)) + 1e-12)


@given(st.floats(-5, 5), st.integers(1, 5), st.integers(1, 5))
def test_bilinear_preserves_constants(c, h, w):
    up = bilinear_resize(np.full((1, 2, 3), c), 2 * h, 3 * w)
    assert np.all(up == c)


@given(seeds, st.floats(-50, 50), st.floats(0.01, 100))
def test_argmax_invariant_to_shift_and_scale(seed, shift, scale):
    rng = np.random.default_rng(seed)
    s = rng.standard_normal((6, 4))
    a = decode_semantic(cl(s, 3, 2), 7, 5)
    b = decode_semantic(cl(s * scale + shift, 3, 2), 7, 5)
    # a shift/scale can only create ties where scores nearly coincide; random
    # normals are far from that at double precision
    np.testing.assert_array_equal(a.values, b.values)


@given(seeds)
def test_equal_resolution_is_token_argmax(seed):
    rng = np.random.default_rng(seed)
    s = rng.integers(-2, 3, size=(12, 5)).astype(float)  # many ties
    out = decode_semantic(cl(s, 4, 3), 4, 3)
    np.testing.assert_array_equal(out.values.ravel(), np.argmax(s, axis=1))


def test_soft_map_roundtrip(tmp_path):
    probs = soft_map(cl([[2.0, 0.0], [0.0, 2.0]], 2, 1), 4, 2, temperature=0.2)
    np.testing.assert_allclose(probs.sum(axis=0), 1.0)
    write_soft_map(tmp_path / "s.f32", probs)
    back = read_soft_map(tmp_path / "s.f32")
    np.testing.assert_array_equal(back, probs.astype(np.float32))


# -- depth decode --------------------------------------------------------------


@pytest.fixture(scope="module")
def vocab():
    return build_vocabulary(["a", "b"])


def test_depth_uniform_preference(vocab):
    z = np.zeros((4, vocab.size))
    z[:, vocab.custom_id(500)] = 5.0
    out = decode_depth(LogitsGrid(2, 2, z), vocab, 8, 8)
    assert out.kind == "depth" and out.ignore_value == 0
    assert np.all(out.values == 500)


def test_depth_pre_upsample_constant_invariant(vocab):
    rng = np.random.default_rng(0)
    z = np.tile(rng.standard_normal(vocab.size), (6, 1))
    a = decode_depth(LogitsGrid(3, 2, z), vocab, 12, 8, pre_upsample=1)
    b = decode_depth(LogitsGrid(3, 2, z), vocab, 12, 8, pre_upsample=2)
    assert a == b


def test_depth_boundary_shift_at_most_one_pixel(vocab):
    z = np.zeros((2, vocab.size))
    z[0, vocab.custom_id(10)] = 1.0
    z[1, vocab.custom_id(20)] = 1.0
    z[:, vocab.custom_id(15)] = 0.6  # wins in the blended middle after upsampling
    lg = LogitsGrid(2, 1, z)
    a = decode_depth(lg, vocab, 16, 1, pre_upsample=1).values[0]
    b = decode_depth(lg, vocab, 16, 1, pre_upsample=2).values[0]
    first_a = int(np.argmax(a != 10))
    first_b = int(np.argmax(b != 10))
    assert abs(first_a - first_b) <= 1


def test_depth_bin_ties_to_smaller(vocab):
    z = np.zeros((1, vocab.size))
    out = decode_depth(LogitsGrid(1, 1, z), vocab, 2, 2)
    assert np.all(out.values == 1)


def test_depth_requires_custom_slice(vocab):
    with pytest.raises(VocabularyMismatch):
        decode_depth(LogitsGrid(1, 1, np.zeros((1, 10))), vocab, 1, 1)
    with pytest.raises(ValueError):
        decode_depth(LogitsGrid(1, 1, np.zeros((1, vocab.size))), vocab, 1, 1, pre_upsample=0.5)


# -- crop geometry -----------------------------------------------------------------


def test_crop_padding_and_clamp():
    r = crop_with_padding(1000, 1000, CropSpec((0, 0, 100, 100)))
    assert r.unclamped == pytest.approx((-10, -10, 110, 110))
    assert r.rect == (0, 0, 110, 110)
    assert r.scale == pytest.approx(1280 / 110)
    assert (r.resize_w, r.resize_h) == (1280, 1280)


def test_crop_identity_padding():
    r = crop_with_padding(640, 480, CropSpec((10, 20, 110, 70), pad_ratio=1.0))
    assert r.rect == (10, 20, 110, 70)
    # short edge 50 -> 1280, long edge 100 -> 2560
    assert (r.resize_w, r.resize_h) == (2560, 1280)


def test_crop_errors():
    with pytest.raises(DegenerateBox):
        CropSpec((5, 5, 5, 10))
    with pytest.raises(DegenerateBox):
        crop_with_padding(50, 50, CropSpec((0, 0, 60, 10)))
    with pytest.raises(ValueError):
        CropSpec((0, 0, 1, 1), pad_ratio=0.9)


def test_paste_back_identity():
    m = DenseMap(np.random.default_rng(1).integers(0, 2, (5, 7)))
    assert paste_back(m, CropMapping.identity(7, 5), 7, 5) == m


def test_paste_back_fills_exactly_the_rect():
    r = crop_with_padding(16, 16, CropSpec((4, 4, 8, 8), target_short_edge=4, pad_ratio=1.0))
    out = paste_back(DenseMap(np.ones((4, 4), int)), r.mapping, 16, 16)
    expected = np.zeros((16, 16), int)
    expected[4:8, 4:8] = 1
    np.testing.assert_array_equal(out.values, expected)
    blank = paste_back(DenseMap(np.zeros((4, 4), int)), r.mapping, 16, 16)
    assert not blank.values.any()


def test_paste_back_size_check():
    with pytest.raises(GridMismatch):
        paste_back(DenseMap(np.zeros((3, 3), int)), CropMapping.identity(4, 4), 4, 4)


@given(seeds)
def test_crop_paste_is_identity_inside_box(seed):
    rng = np.random.default_rng(seed)
    x0, y0 = (int(v) for v in rng.integers(0, 20, 2))
    w, h = (int(v) for v in rng.integers(1, 12, 2))
    r = crop_with_padding(40, 40, CropSpec((x0, y0, x0 + w, y0 + h), pad_ratio=1.0, target_short_edge=min(w, h)))
    assert (r.resize_w, r.resize_h) == (w, h)
    crop = DenseMap(rng.integers(0, 3, (h, w)))
    out = paste_back(crop, r.mapping, 40, 40)
    np.testing.assert_array_equal(out.values[y0 : y0 + h, x0 : x0 + w], crop.values)


def test_draw_box_outline():
    img = draw_box(np.zeros((10, 10, 3), np.uint8), (2, 2, 8, 8), (255, 0, 0), thickness=1)
    assert tuple(img[2, 5]) == (255, 0, 0)
    assert tuple(img[5, 5]) == (0, 0, 0)


# -- PCA --------------------------------------------------------------------------


@given(seeds)
def test_pca_matches_eigendecomposition(seed):
    rng = np.random.default_rng(seed)
    L, F = 20, 6
    x = rng.standard_normal((L, F)) * np.array([5.0, 3.0, 2.0, 0.5, 0.2, 0.1])
    x = x @ np.linalg.qr(rng.standard_normal((F, F)))[0]
    res = pca_rgb(x, 5, 4)
    xc = x - x.mean(axis=0)
    vals, vecs = np.linalg.eigh(xc.T @ xc / L)
    order = np.argsort(vals)[::-1][:3]
    np.testing.assert_allclose(res.variances, vals[order], rtol=1e-6)
    for c in range(3):
        assert abs(abs(res.components[c] @ vecs[:, order[c]]) - 1) < 1e-5
        # sign convention: the largest-magnitude coordinate is positive
        assert res.components[c][np.argmax(np.abs(res.components[c]))] > 0
    assert res.image.shape == (4, 5, 3)
    assert res.image.min() == 0 and res.image.max() == 255
    assert not res.rank_deficient


def test_pca_axis_aligned_isotropic():
    pts = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
    res = pca_rgb(pts, 3, 2)
    np.testing.assert_allclose(res.variances, [1 / 3] * 3, rtol=1e-9)
    # the eigenspace is degenerate; the returned basis is the coordinate axes
    np.testing.assert_allclose(np.abs(res.components), np.eye(3), atol=1e-12)


def test_pca_constant_is_gray():
    res = pca_rgb(np.ones((6, 4)), 3, 2)
    assert np.all(res.image == 128)
    assert res.rank_deficient
    assert not res.components.any()


def test_pca_duplicated_tokens():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 5))
    a = pca_rgb(np.vstack([x, x]), 4, 2)
    b = pca_rgb(np.vstack([x, x]), 4, 2)
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.image[0], a.image[1])


def test_pca_rank_deficient_pads_with_zero():
    x = np.zeros((6, 4))
    x[:, 0] = np.arange(6)
    res = pca_rgb(x, 3, 2)
    assert res.rank_deficient
    assert res.variances[1] == 0 and not res.components[1].any()


def test_pca_input_checks():
    with pytest.raises(GridMismatch):
        pca_rgb(np.zeros((5, 4)), 2, 2)
    with pytest.raises(ValueError):
        pca_rgb(np.zeros((4, 2)), 2, 2)
