import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from promptpool.alignment import (
    AlignmentConfig,
    PromptAligner,
    alignment_logits,
    project_visual,
    scores_multi_prompt,
    softmax_scores,
)

from oracles import naive_cosine, naive_matmul

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
logit_grids = arrays(np.float64, st.tuples(*[st.integers(1, 4)] * 3), elements=finite)


class TestProjection:
    def test_identity(self):
        v = np.random.default_rng(0).standard_normal((2, 3, 3, 5))
        np.testing.assert_array_equal(project_visual(v, np.eye(5)), v)

    def test_ones(self):
        out = project_visual(np.ones((1, 1, 1, 3)), np.ones((3, 2)))
        np.testing.assert_array_equal(out, [[[[3.0, 3.0]]]])

    def test_matches_nested_loops(self):
        rng = np.random.default_rng(1)
        v = rng.standard_normal((2, 2, 2, 8))
        m = rng.standard_normal((8, 4))
        expected = naive_matmul(v.reshape(-1, 8), m).reshape(2, 2, 2, 4)
        np.testing.assert_allclose(project_visual(v, m), expected, rtol=0, atol=1e-12)

    def test_width_mismatch_names_both(self):
        with pytest.raises(ValueError, match="width 5 .* rows 4"):
            project_visual(np.ones((1, 1, 1, 5)), np.ones((4, 2)))


class TestLogits:
    def test_parallel_tokens(self):
        c = np.array([1.0, 2.0, -0.5])
        projected = np.stack([c * k for k in (0.5, 1.0, 3.0, 7.0)]).reshape(1, 2, 2, 3)
        logits = alignment_logits(projected, c, AlignmentConfig(temperature=100.0))
        np.testing.assert_allclose(logits, 100.0, rtol=0, atol=1e-12)

    def test_orthogonal_token(self):
        projected = np.array([[[[0.0, 1.0], [1.0, 0.0]]]])
        logits = alignment_logits(projected, np.array([1.0, 0.0]))
        assert logits[0, 0, 0] == 0.0
        assert logits.shape == (1, 1, 2)

    @pytest.mark.parametrize("normalize", [True, False])
    def test_matches_scalar_oracle(self, normalize):
        rng = np.random.default_rng(2)
        projected = rng.standard_normal((2, 3, 2, 6))
        c = rng.standard_normal(6)
        cfg = AlignmentConfig(temperature=12.5, normalize=normalize)
        logits = alignment_logits(projected, c, cfg)
        for idx in np.ndindex(projected.shape[:3]):
            p = projected[idx]
            if normalize:
                expected = 12.5 * naive_cosine(p, c)
            else:
                expected = 12.5 * sum(float(a) * float(b) for a, b in zip(p, c))
            assert abs(logits[idx] - expected) <= 1e-12 * max(1.0, abs(expected))

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError, match="zero-norm"):
            alignment_logits(np.zeros((1, 1, 1, 2)), np.array([1.0, 0.0]))
        with pytest.raises(ValueError, match="zero-norm"):
            alignment_logits(np.ones((1, 1, 1, 2)), np.zeros(2))
        # without normalization a zero vector is just a zero logit
        out = alignment_logits(np.zeros((1, 1, 1, 2)), np.ones(2), AlignmentConfig(normalize=False))
        assert out[0, 0, 0] == 0.0

    def test_bad_temperature(self):
        with pytest.raises(ValueError):
            AlignmentConfig(temperature=0.0)
        with pytest.raises(ValueError):
            AlignmentConfig(temperature=-1.0)


class TestSoftmax:
    def test_uniform(self):
        s = softmax_scores(np.full((2, 3, 4), 7.25))
        np.testing.assert_allclose(s, 1 / 24, rtol=1e-15)

    def test_singleton(self):
        assert softmax_scores(np.array([[[3.0]]]))[0, 0, 0] == 1.0

    def test_two_logits_closed_form(self):
        # exp(0) / (1 + 3) and 3 / (1 + 3)
        s = softmax_scores(np.array([[[0.0, math.log(3.0)]]]))
        np.testing.assert_allclose(s.ravel(), [0.25, 0.75], rtol=0, atol=1e-15)

    def test_large_logits_stable(self):
        s = softmax_scores(np.array([[[1e4, 1e4 + 1.0, 1e4 + 2.0]]]))
        assert np.all(np.isfinite(s))
        assert abs(s.sum() - 1) < 1e-12

    @settings(max_examples=200, deadline=None)
    @given(logit_grids, st.floats(-1e3, 1e3))
    def test_contract(self, logits, shift):
        s = softmax_scores(logits)
        assert s.shape == logits.shape
        assert np.all(s >= 0) and np.all(s <= 1)
        assert abs(s.sum() - 1.0) <= 1e-6
        np.testing.assert_allclose(softmax_scores(logits + shift), s, rtol=0, atol=1e-9)
        # logits closer than exp's resolution can tie, so compare values not indices
        assert s.flat[np.argmax(logits)] == s.max()

    @settings(max_examples=100, deadline=None)
    @given(logit_grids)
    def test_order_preserving(self, logits):
        s = softmax_scores(logits).ravel()
        flat = logits.ravel()
        for a in range(flat.size):
            for b in range(flat.size):
                if flat[a] > flat[b] + 1e-9:
                    assert s[a] >= s[b]

    def test_temperature_monotonicity(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            projected = rng.standard_normal((2, 2, 3, 4))
            c = rng.standard_normal(4)
            peaks = [
                softmax_scores(alignment_logits(projected, c, AlignmentConfig(tau))).max()
                for tau in (0.5, 1.0, 5.0, 20.0)
            ]
            assert all(a < b for a, b in zip(peaks, peaks[1:]))


class TestMultiPrompt:
    def setup_method(self):
        rng = np.random.default_rng(4)
        self.projected = rng.standard_normal((2, 3, 3, 5))
        self.c1 = rng.standard_normal(5)
        self.c2 = rng.standard_normal(5)

    def test_single_prompt(self):
        single = softmax_scores(alignment_logits(self.projected, self.c1))
        np.testing.assert_array_equal(scores_multi_prompt(self.projected, [self.c1]), single)

    def test_duplicate_prompts(self):
        single = scores_multi_prompt(self.projected, [self.c1])
        both = scores_multi_prompt(self.projected, [self.c1, self.c1])
        np.testing.assert_allclose(both, single, rtol=1e-14, atol=0)

    def test_two_prompt_average(self):
        projected = np.array([[[[1.0, 0.0], [0.0, 1.0]]]])
        cfg = AlignmentConfig(temperature=1.0, normalize=False)
        out = scores_multi_prompt(projected, [np.array([0.0, math.log(3.0)]),
                                              np.array([1.0, 1.0])], cfg)
        # prompt 1 -> [1/4, 3/4]; prompt 2 -> [1/2, 1/2]; mean -> [3/8, 5/8]
        np.testing.assert_allclose(out.ravel(), [0.375, 0.625], rtol=0, atol=1e-15)

    def test_accepts_stacked_prompts(self):
        stacked = np.stack([self.c1, self.c2])
        np.testing.assert_array_equal(
            scores_multi_prompt(self.projected, stacked),
            scores_multi_prompt(self.projected, [self.c1, self.c2]),
        )

    def test_sums_to_one(self):
        out = scores_multi_prompt(self.projected, [self.c1, self.c2])
        assert abs(out.sum() - 1) < 1e-12

    def test_empty(self):
        with pytest.raises(ValueError, match="at least one"):
            scores_multi_prompt(self.projected, [])


class TestPromptAligner:
    def test_fit_transform(self):
        rng = np.random.default_rng(5)
        v = rng.standard_normal((2, 3, 3, 6))
        m = rng.standard_normal((6, 4))
        c = rng.standard_normal(4)
        est = PromptAligner(projection=m, temperature=50.0)
        s = est.fit(c).transform(v)
        expected = softmax_scores(alignment_logits(project_visual(v, m), c, AlignmentConfig(50.0)))
        np.testing.assert_array_equal(s, expected)
        assert est.n_prompts_ == 1

    def test_not_fitted(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            PromptAligner().transform(np.ones((1, 1, 1, 2)))

    def test_params(self):
        from sklearn.base import clone

        est = PromptAligner(temperature=10.0, normalize=False)
        assert est.get_params()["temperature"] == 10.0
        assert clone(est).get_params()["normalize"] is False
