import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strucattn.attention import BiasKind, MultiHeadParams
from strucattn.localness import (
    AnswerSpan,
    CenterStrategy,
    LocalnessParams,
    answer_center,
    gaussian_bias,
    head_gaussian_biases,
    init_localness_params,
    predicted_center,
    window_size,
)
from strucattn.numkit import softmax_rows

rng = np.random.default_rng(4242)


class TestAnswerCenter:
    @pytest.mark.parametrize("s,e,expected", [(5, 13, 9.0), (7, 7, 7.0), (4, 7, 5.5)])
    def test_midpoints(self, s, e, expected):
        assert answer_center(AnswerSpan(s, e)) == expected

    def test_invalid_span(self):
        with pytest.raises(ValueError):
            AnswerSpan(5, 3)


class TestWindowSize:
    def test_zero_query_gives_half_length(self):
        params = LocalnessParams(w_p=rng.normal(size=(4, 4)), u_d=rng.normal(size=(4, 1)))
        assert window_size(np.zeros(4), params, 10) == 5.0

    def test_zero_u_d_ignores_query(self):
        params = LocalnessParams(w_p=rng.normal(size=(4, 4)), u_d=np.zeros((4, 1)))
        for _ in range(5):
            assert window_size(rng.normal(size=4), params, 12) == 6.0

    def test_matches_independent_recomputation(self):
        params = LocalnessParams(w_p=rng.normal(size=(5, 5)), u_d=rng.normal(size=(5, 1)))
        for _ in range(10):
            q = rng.normal(size=5)
            z = float(params.u_d[:, 0] @ np.tanh(params.w_p @ q))
            expected = 17 * (1.0 / (1.0 + np.exp(-z)))
            assert window_size(q, params, 17) == pytest.approx(expected, rel=1e-12)

    def test_range(self):
        params = LocalnessParams(w_p=rng.normal(size=(4, 4)), u_d=rng.normal(size=(4, 1)))
        for _ in range(20):
            d = window_size(rng.normal(size=4) * 5, params, 9)
            assert 0.0 < d < 9.0


class TestPredictedCenter:
    def make_params(self, dim=4):
        return LocalnessParams(
            w_p=rng.normal(size=(dim, dim)),
            u_d=rng.normal(size=(dim, 1)),
            u_p=rng.normal(size=(dim, 1)),
            center_strategy=CenterStrategy.PREDICTED_CENTER,
        )

    def test_zero_query(self):
        assert predicted_center(np.zeros(4), self.make_params(), 10) == 5.0

    def test_zero_u_p(self):
        params = self.make_params()
        params.u_p = np.zeros((4, 1))
        for _ in range(5):
            assert predicted_center(rng.normal(size=4), params, 8) == 4.0

    def test_matches_independent_recomputation(self):
        params = self.make_params(5)
        q = rng.normal(size=5)
        p = float(params.u_p[:, 0] @ np.tanh(params.w_p @ q))
        expected = 11 * (1.0 / (1.0 + np.exp(-p)))
        assert predicted_center(q, params, 11) == pytest.approx(expected, rel=1e-12)

    def test_requires_strategy(self):
        params = LocalnessParams(w_p=np.eye(2), u_d=np.zeros((2, 1)))
        with pytest.raises(ValueError):
            predicted_center(np.zeros(2), params, 5)


class TestGaussianBias:
    def test_direct_substitution(self):
        g = gaussian_bias(5.0, np.full(10, 2.0), 10)
        assert g[0, 7] == -0.5

    def test_zero_at_integer_center(self):
        g = gaussian_bias(5.0, np.full(10, 2.0), 10)
        assert np.all(g[:, 5] == 0.0)

    def test_full_row_matches_bruteforce(self):
        g = gaussian_bias(9.0, np.full(20, 3.0), 20)
        for i in range(20):
            for j in range(20):
                assert g[i, j] == pytest.approx(-((j - 9.0) ** 2) / (2 * 9.0), rel=1e-15)

    def test_nonpositive_and_peak_location(self):
        for _ in range(50):
            n = int(rng.integers(3, 20))
            s, e = sorted(rng.integers(0, n, size=2))
            center = (s + e) / 2.0
            g = gaussian_bias(center, rng.uniform(0.5, 4.0, size=n), n)
            assert np.all(g <= 0.0)
            peaks = {int(np.floor(center)), int(np.ceil(center))}
            for i in range(n):
                assert int(np.argmax(g[i])) in peaks

    def test_row_monotone_in_distance_from_center(self):
        g = gaussian_bias(6.0, rng.uniform(0.5, 3.0, size=15), 15)
        for i in range(15):
            for j in range(15 - 1):
                d0, d1 = abs(j - 6.0), abs(j + 1 - 6.0)
                if d0 < d1:
                    assert g[i, j] > g[i, j + 1]
                elif d0 > d1:
                    assert g[i, j] < g[i, j + 1]

    def test_softmax_ratio_is_exp_of_bias_gap(self):
        n = 12
        sig = rng.uniform(1.0, 4.0, size=n)
        g = gaussian_bias(5.5, sig, n)
        scores = np.full((n, n), 0.7)
        w = softmax_rows(scores + g)
        for i in range(n):
            for j in range(n - 1):
                ratio = w[i, j] / w[i, j + 1]
                expected = np.exp(g[i, j] - g[i, j + 1])
                assert ratio == pytest.approx(expected, rel=1e-12)

    def test_sigma_must_be_positive(self):
        with pytest.raises(ValueError):
            gaussian_bias(3.0, np.array([1.0, -0.5, 1.0]), 3)

    def test_sigma_count_checked(self):
        with pytest.raises(Exception):
            gaussian_bias(3.0, np.ones(4), 6)

    @given(
        sigma_hi=st.floats(1.0, 5.0),
        shrink=st.floats(0.05, 1.0),
        seed=st.integers(0, 10_000),
    )
    @settings(max_examples=60)
    def test_shrinking_sigma_concentrates_mass(self, sigma_hi, shrink, seed):
        # mass inside [P_c - 1, P_c + 1] is nondecreasing as sigma decreases
        r = np.random.default_rng(seed)
        n = 11
        center = 5.0
        scores = r.normal(size=(1, n))
        inside = np.abs(np.arange(n) - center) <= 1.0

        def mass(sigma):
            g = gaussian_bias(center, np.full(n, sigma), n)
            w = softmax_rows(scores + g[0:1])
            return float(w[0, inside].sum())

        assert mass(sigma_hi * shrink) >= mass(sigma_hi) - 1e-12


class TestHeadBiases:
    def test_per_head_biases_match_manual_path(self):
        d, dh, heads = 6, 3, 2
        x = rng.normal(size=(7, d))
        mh = MultiHeadParams(
            num_heads=heads,
            head_dim=dh,
            w_q=[rng.normal(size=(d, dh)) for _ in range(heads)],
            w_k=[rng.normal(size=(d, dh)) for _ in range(heads)],
            w_v=[rng.normal(size=(d, dh)) for _ in range(heads)],
            w_o=rng.normal(size=(d, d)),
        )
        loc = init_localness_params(dh, rng)
        loc.u_d = rng.normal(size=(dh, 1))
        span = AnswerSpan(2, 4)
        biases = head_gaussian_biases(x, mh, loc, span)
        assert len(biases) == heads
        for h, bias in enumerate(biases):
            assert bias.kind is BiasKind.GAUSSIAN
            q = x @ mh.w_q[h]
            sigmas = np.array([window_size(q[i], loc, 7) / 2.0 for i in range(7)])
            expected = gaussian_bias(3.0, sigmas, 7)
            assert np.max(np.abs(bias.bias - expected)) < 1e-12

    def test_init_starts_neutral(self):
        loc = init_localness_params(4, np.random.default_rng(0))
        assert np.all(loc.u_d == 0.0)
        assert window_size(rng.normal(size=4), loc, 10) == 5.0
