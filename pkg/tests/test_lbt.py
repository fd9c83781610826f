import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import lbt_reference
from lbt_reference import brute_force, ref_bit
from normalcy.errors import ValidationError
from normalcy.lbt import (FrameDescriptor, LbtConfig, MotionStep, QuantizerConfig, Tessellation,
                          Tracklet, aggregate, derive_motion, extract, fit_magnitude_cap,
                          frame_descriptor, frame_histograms, pattern_index, quantize,
                          tracklet_code, video_descriptor)

Q = QuantizerConfig(8, 5, 10.0)
TESS = Tessellation(4, 6, 238.0, 158.0)


def random_tracklets(rng, n, L=11, n_frames=30, tess=TESS):
    return lbt_reference.random_tracklets(rng, n, tess, L, n_frames)


# -- motion and quantization ---------------------------------------------------


@pytest.mark.parametrize("p1, o, m", [
    ((1, 0), 0.0, 1.0),
    ((1, 1), math.pi / 4, math.sqrt(2)),
    ((0, 1), math.pi / 2, 1.0),
    ((0, 0), 0.0, 0.0),
])
def test_derive_motion(p1, o, m):
    (step,) = derive_motion(Tracklet([(0, 0), p1], 0))
    assert step.o == pytest.approx(o, abs=1e-15) and step.m == pytest.approx(m, abs=1e-15)


def test_derive_motion_matches_reference_angle():
    rng = np.random.default_rng(0)
    d = rng.normal(size=(200, 2))
    for dx, dy in d:
        (step,) = derive_motion(Tracklet([(0, 0), (dx, dy)], 0))
        # numpy and libm may differ in the last ulp
        assert step.o == pytest.approx(math.atan2(dy, dx), rel=4e-16, abs=1e-300)


def test_quantize_examples():
    assert int(pattern_index(0.0, 0.0, Q)) == 4
    assert int(pattern_index(-math.pi, 0.0, Q)) == 0
    assert int(pattern_index(0.0, 99.0, Q)) // Q.b_o == 4
    assert int(pattern_index(math.pi, 0.0, Q)) == Q.b_o - 1


@settings(max_examples=200, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(0, 50))
def test_one_hot(o, m):
    bits = quantize(MotionStep(o, m), Q)
    assert bits.sum() == 1 and len(bits) == 40


def test_quantize_matches_reference_binning():
    rng = np.random.default_rng(1)
    for dx, dy in rng.normal(0, 6, size=(500, 2)):
        o, m = math.atan2(dy, dx), math.hypot(dx, dy)
        assert int(pattern_index(o, m, Q)) == ref_bit(dx, dy, Q)


def test_tracklet_code_concatenation():
    cfg = QuantizerConfig(b_o=2, b_m=2, m_max=2.0)
    # step 1: o=-pi (bin 0), m=0.5 (bin 0) -> bit 0; step 2: o=0 (bin 1), m=1.5 (bin 1) -> bit 3
    tr = Tracklet([(0.0, 0.0), (-0.5, -0.0), (1.0, 0.0)], 0)
    code = tracklet_code(tr, cfg)
    assert np.flatnonzero(code).tolist() == [0, 7]
    assert code.tolist() == [1, 0, 0, 0, 0, 0, 0, 1]


def test_code_popcount_and_constant_velocity(rng):
    for tr in random_tracklets(rng, 50):
        assert tracklet_code(tr, Q).sum() == tr.L
    pts = np.arange(12)[:, None] * np.array([[1.5, -0.7]])
    code = tracklet_code(Tracklet(pts, 0), Q).reshape(11, -1)
    assert (code == code[0]).all()


def test_magnitude_cap_is_percentile(rng):
    trs = random_tracklets(rng, 20)
    mags = np.concatenate([np.hypot(*np.diff(t.points, axis=0).T) for t in trs])
    assert fit_magnitude_cap(trs, 95) == pytest.approx(np.percentile(mags, 95))


# -- aggregation ---------------------------------------------------------------


def test_aggregate_two_identical_codes():
    pts = np.array([[10 + i, 10.0] for i in range(12)])
    trs = [Tracklet(pts, 0), Tracklet(pts.copy(), 0)]
    codes = [tracklet_code(t, Q) for t in trs]
    s = int(TESS.patch_of(*pts[5]))
    h = aggregate(5, s, trs, codes, TESS)
    assert np.array_equal(h, 2 * codes[0])
    assert h.sum() == 2 * 11


def test_aggregate_empty_patch():
    pts = np.array([[10 + i, 10.0] for i in range(12)])
    tr = Tracklet(pts, 0)
    h = aggregate(5, 23, [tr], [tracklet_code(tr, Q)], TESS)
    assert not h.any()
    assert not aggregate(0, 0, [], [], TESS, size=440).any()


def test_aggregate_sum_invariant():
    pts = np.array([[100 + i, 80.0] for i in range(12)])
    trs = [Tracklet(pts + k * 0.1, 3) for k in range(3)]
    codes = [tracklet_code(t, Q) for t in trs]
    s = int(TESS.patch_of(*pts[5]))
    assert aggregate(8, s, trs, codes, TESS).sum() == 33


def test_vectorised_histograms_match_brute_force(rng):
    trs = random_tracklets(rng, 150, n_frames=12)
    fast = frame_histograms(trs, Q, TESS, 12)
    assert np.array_equal(fast, brute_force(trs, Q, TESS, 12))


def test_aggregate_matches_vectorised(rng):
    trs = random_tracklets(rng, 60, n_frames=6)
    codes = [tracklet_code(t, Q) for t in trs]
    fast = frame_histograms(trs, Q, TESS, 6)
    for t in range(6):
        for s in range(TESS.size):
            assert np.array_equal(aggregate(t, s, trs, codes, TESS), fast[t, s])


def test_any_point_membership_contains_middle(rng):
    trs = random_tracklets(rng, 80, n_frames=8)
    mid = frame_histograms(trs, Q, TESS, 8, "middle")
    anyp = frame_histograms(trs, Q, TESS, 8, "any")
    assert (anyp >= mid).all()


def test_rotation_by_one_bin_permutes_histogram_values():
    rng = np.random.default_rng(3)
    cfg = QuantizerConfig(8, 5, 10.0)
    width = 2 * math.pi / cfg.b_o
    trs, rot = [], []
    for i in range(40):
        # step orientations at bin centres so the rotation cannot cross an edge
        o = -math.pi + (rng.integers(0, cfg.b_o, 11) + 0.5) * width
        m = rng.uniform(0.5, 9.5, 11)
        d = np.column_stack([m * np.cos(o), m * np.sin(o)])
        c, s = math.cos(width), math.sin(width)
        d_rot = d @ np.array([[c, s], [-s, c]])
        mid = rng.uniform([40, 40], [200, 120])
        start = int(rng.integers(0, 5))
        for dd, bucket in ((d, trs), (d_rot, rot)):
            pts = np.vstack([[0, 0], np.cumsum(dd, axis=0)])
            bucket.append(Tracklet(pts - pts[5] + mid, start, i))
    a = frame_histograms(trs, cfg, TESS, 10)
    b = frame_histograms(rot, cfg, TESS, 10)
    assert not np.array_equal(a, b)
    assert np.array_equal(np.sort(a.ravel()), np.sort(b.ravel()))
    # the shift is exactly one orientation bin, cyclically, inside every pattern block
    shifted = a.reshape(10, TESS.size, 11, cfg.b_m, cfg.b_o)
    assert np.array_equal(np.roll(shifted, 1, axis=-1).reshape(a.shape), b)


# -- descriptors ----------------------------------------------------------------


def test_frame_descriptor_length(rng):
    trs = random_tracklets(rng, 30, n_frames=5)
    hist = frame_histograms(trs, Q, TESS, 5)
    fd = frame_descriptor(hist[2], TESS, 2)
    assert len(fd.values) == 24 * 8 * 5 * 11


def test_video_descriptor(rng):
    trs = random_tracklets(rng, 30, n_frames=5)
    hist = frame_histograms(trs, Q, TESS, 5)
    frames = [frame_descriptor(hist[t], TESS, t) for t in range(5)]
    assert np.array_equal(video_descriptor(frames[:1]), frames[0].values)
    assert np.array_equal(video_descriptor(frames), video_descriptor(frames[::-1]))


def test_video_descriptor_tessellation_mismatch():
    a = FrameDescriptor(np.zeros(4), Tessellation(1, 2), 0)
    b = FrameDescriptor(np.zeros(4), Tessellation(2, 1), 1)
    with pytest.raises(ValidationError):
        video_descriptor([a, b])


def test_extract_shapes(rng):
    trs = random_tracklets(rng, 40, n_frames=20)
    X, q = extract(trs, LbtConfig(), n_frames=20)
    assert X.shape == (20, 24 * 40 * 11)
    assert q.m_max == pytest.approx(fit_magnitude_cap(trs, 95))
