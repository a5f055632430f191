from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from convctx.errors import ConfigurationError, KernelError
from convctx.kernels import (
    SpeechSimilarityWeights,
    cosine,
    exact_dtw,
    fast_dtw,
    frame_level_similarity,
    mean_pool,
    speech_similarity,
)

from oracles import dtw_reference


def _rand_pair(rng, max_len=12, max_dim=8):
    n = int(rng.integers(1, max_len + 1))
    m = int(rng.integers(1, max_len + 1))
    d = int(rng.integers(1, max_dim + 1))
    return rng.normal(size=(n, d)), rng.normal(size=(m, d))


class TestExactDtw:
    def test_identical_sequences_have_zero_distance(self):
        a = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]])
        r = exact_dtw(a, a)
        assert r.distance == 0.0
        assert r.path_length == 3

    def test_hand_computed_table(self):
        # 1-D sequences [0,1,2] vs [0,2]: one unmatched middle frame.
        r = exact_dtw([0.0, 1.0, 2.0], [0.0, 2.0])
        assert r.distance == pytest.approx(1.0, abs=1e-12)
        assert r.path_length == 3

    def test_matches_reference_dp(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            a, b = _rand_pair(rng)
            r = exact_dtw(a, b)
            ref_cost, ref_steps = dtw_reference([tuple(f) for f in a], [tuple(f) for f in b])
            assert r.distance == pytest.approx(ref_cost, rel=1e-12, abs=1e-12)
            assert r.path_length == ref_steps

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, b = _rand_pair(rng)
            assert exact_dtw(a, b).distance == pytest.approx(exact_dtw(b, a).distance, rel=1e-12)

    def test_path_length_lower_bound(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            a, b = _rand_pair(rng)
            assert exact_dtw(a, b).path_length >= max(len(a), len(b))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(KernelError):
            exact_dtw(np.zeros((2, 3)), np.zeros((2, 4)))

    def test_empty_sequence_rejected(self):
        with pytest.raises(KernelError):
            exact_dtw(np.zeros((0, 3)), np.zeros((2, 3)))


class TestFastDtw:
    def test_identical_sequences_any_radius(self):
        a = np.arange(40.0).reshape(20, 2)
        for radius in (1, 2, 5):
            assert fast_dtw(a, a, radius).distance == 0.0

    def test_equals_exact_when_radius_covers_length(self):
        rng = np.random.default_rng(21)
        for _ in range(200):
            a, b = _rand_pair(rng, max_len=8)
            exact = exact_dtw(a, b)
            fast = fast_dtw(a, b, radius=max(len(a), len(b)))
            assert fast.distance == exact.distance
            assert fast.path_length == exact.path_length

    def test_never_below_exact(self):
        rng = np.random.default_rng(22)
        for _ in range(300):
            a, b = _rand_pair(rng, max_len=20)
            assert fast_dtw(a, b, radius=1).distance >= exact_dtw(a, b).distance

    def test_radius_must_be_positive(self):
        with pytest.raises(KernelError):
            fast_dtw(np.zeros((3, 2)), np.zeros((3, 2)), radius=0)


class TestMeanPool:
    def test_single_frame_is_identity(self):
        frame = np.array([[1.5, -2.0, 3.0]])
        assert np.array_equal(mean_pool(frame), frame[0])

    def test_hand_mean(self):
        assert np.array_equal(mean_pool(np.array([[0.0, 0.0], [2.0, 2.0]])), np.array([1.0, 1.0]))

    def test_permutation_invariant(self):
        rng = np.random.default_rng(31)
        frames = rng.normal(size=(9, 4))
        shuffled = frames[rng.permutation(9)]
        assert np.allclose(mean_pool(frames), mean_pool(shuffled), atol=1e-12)


class TestCosine:
    def test_self_similarity(self):
        v = np.array([1.0, 2.0, -3.0])
        assert cosine(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_hand_value(self):
        assert cosine([1.0, 1.0], [1.0, 0.0]) == pytest.approx(0.7071, abs=1e-4)

    def test_zero_norm_yields_zero(self):
        assert cosine([0.0, 0.0], [1.0, 2.0]) == 0.0
        assert cosine([1.0, 2.0], [0.0, 0.0]) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(KernelError):
            cosine([1.0], [1.0, 2.0])

    @given(
        st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=6),
        st.floats(1e-3, 1e3),
    )
    def test_positive_scale_invariance(self, values, scale):
        v = np.asarray(values)
        if np.linalg.norm(v) == 0:
            return
        w = v[::-1].copy()
        assert cosine(scale * v, w) == pytest.approx(cosine(v, w), abs=1e-9)

    def test_clamped_against_rounding(self):
        v = np.full(100, 0.1)
        assert cosine(v, v) <= 1.0


class TestFrameLevelSimilarity:
    def test_identical_is_one(self):
        a = np.random.default_rng(0).normal(size=(6, 3))
        assert frame_level_similarity(a, a) == 1.0

    def test_worked_example(self):
        # distance 1 over path length 3 -> 1 / (1 + 1/3)
        assert frame_level_similarity([0.0, 1.0, 2.0], [0.0, 2.0], radius=10) == pytest.approx(0.75, abs=1e-12)

    def test_monotone_in_normalized_distance(self):
        near = frame_level_similarity([0.0, 1.0], [0.0, 1.1], radius=4)
        far = frame_level_similarity([0.0, 1.0], [0.0, 9.0], radius=4)
        assert far < near < 1.0


class TestSpeechSimilarity:
    def test_self_similarity_is_one(self):
        a = np.random.default_rng(5).normal(size=(8, 4)) + 1.0  # nonzero pooled mean
        for w in (SpeechSimilarityWeights(0.5, 0.5), SpeechSimilarityWeights(0.2, 0.8)):
            assert speech_similarity(a, a, w) == pytest.approx(1.0, abs=1e-12)

    def test_composition_of_components(self):
        rng = np.random.default_rng(6)
        w = SpeechSimilarityWeights(0.5, 0.5)
        for _ in range(20):
            a, b = _rand_pair(rng, max_len=10, max_dim=4)
            expected = 0.5 * frame_level_similarity(a, b, 2) + 0.5 * cosine(mean_pool(a), mean_pool(b))
            assert speech_similarity(a, b, w, radius=2) == expected

    def test_spec_arithmetic(self):
        # frame similarity 0.75 and orthogonal pooled vectors fuse to 0.375
        assert 0.5 * 0.75 + 0.5 * cosine([1.0, 0.0], [0.0, 1.0]) == 0.375

    def test_default_weights(self):
        w = SpeechSimilarityWeights()
        assert (w.w_frame, w.w_utt) == (0.5, 0.5)


class TestWeights:
    def test_must_sum_to_one(self):
        with pytest.raises(ConfigurationError):
            SpeechSimilarityWeights(0.5, 0.6)

    def test_range_checked(self):
        with pytest.raises(ConfigurationError):
            SpeechSimilarityWeights(1.5, -0.5)

    def test_from_frame_weight(self):
        w = SpeechSimilarityWeights.from_frame_weight(0.3)
        assert w.w_utt == pytest.approx(0.7)


@settings(deadline=None, max_examples=40)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_fast_dtw_bounds_property(n, m, d, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, d))
    b = rng.normal(size=(m, d))
    exact = exact_dtw(a, b)
    assert exact.distance >= 0.0
    assert fast_dtw(a, b, 1).distance >= exact.distance
    assert fast_dtw(a, b, max(n, m)).distance == exact.distance
