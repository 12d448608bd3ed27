"""
Unit tests for evaluation metrics
Юнит-тесты для метрик оценки
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from src.core.metrics import (
    amari_index,
    assign_sources,
    burn_in_samples,
    count_matches,
    fit_gain,
    global_amari,
    latency_stats,
    matching_rate,
    matching_rate_with_lag,
    pearson_corr,
    rmse_percent,
    select_matched_rows,
)
from src.core.signals import Envelope, SpikeTrain
from src.errors import CorssError, ErrorCode, MetricError, ShapeError

FS = 2000.0


def _train(samples, source_id=0, fs=FS):
    return SpikeTrain(source_id, np.asarray(samples, dtype=np.int64), fs)


@pytest.mark.unit
class TestMatchingRateUnit:
    def test_identical_trains(self):
        a = _train([10, 200, 450])
        result = matching_rate(a, a)
        assert (result.n_common, result.mr) == (3, 1.0)

    def test_disjoint_and_empty(self):
        assert matching_rate(_train([10, 500]), _train([200, 900])).mr == 0.0
        assert matching_rate(_train([]), _train([])).mr == 1.0
        assert matching_rate(_train([5]), _train([])).mr == 0.0

    def test_tolerance_in_samples(self):
        # 0.5 ms at 2 kHz is one sample
        assert matching_rate(_train([100]), _train([101])).mr == 1.0
        assert matching_rate(_train([100]), _train([102])).mr == 0.0

    def test_partial_match(self):
        result = matching_rate(_train([10, 100, 200, 300]), _train([10, 100]))
        assert result.mr == pytest.approx(2 * 2 / 6)

    def test_rate_mismatch(self):
        with pytest.raises(CorssError) as exc:
            matching_rate(_train([1]), _train([1], fs=1000.0))
        assert exc.value.code is ErrorCode.RATE_MISMATCH

    def test_best_lag(self):
        a = _train([100, 400, 900, 1500])
        b = _train([106, 406, 906, 1506])
        assert matching_rate(a, b).mr == 0.0
        result, lag = matching_rate_with_lag(a, b, max_lag_ms=5.0)
        assert result.mr == 1.0
        # -5, -6 and -7 all match within one sample; ties go to the smallest |lag|
        assert lag == -5

    def test_assign_sources_undoes_permutation(self):
        truth = [_train([100, 600, 1100], 0), _train([300, 800, 1300], 1), _train([50, 950], 2)]
        estimated = [_train([301, 801, 1301], 10), _train([50, 950], 11), _train([99, 600], 12)]
        pairs = assign_sources(estimated, truth)
        assert [(p.estimated, p.truth) for p in pairs] == [(2, 0), (0, 1), (1, 2)]
        assert pairs[1].result.mr == 1.0
        assert pairs[0].result.n_a == 3 and pairs[0].result.n_b == 2

    def test_assign_sources_empty_side(self):
        assert assign_sources([], [_train([1])]) == []


@pytest.mark.unit
@pytest.mark.property
class TestMatchingProperties:
    @given(
        a=st.sets(st.integers(0, 80), max_size=12),
        b=st.sets(st.integers(0, 80), max_size=12),
        tol=st.integers(0, 4),
    )
    @settings(max_examples=150, deadline=None)
    def test_sweep_equals_maximum_matching(self, a, b, tol):
        a, b = np.array(sorted(a)), np.array(sorted(b))
        if a.size == 0 or b.size == 0:
            best = 0
        else:
            compatible = (np.abs(a[:, None] - b[None, :]) <= tol).astype(float)
            rows, cols = linear_sum_assignment(compatible, maximize=True)
            best = int(compatible[rows, cols].sum())
        assert count_matches(a, b, tol) == best

    @given(st.sets(st.integers(0, 10_000), max_size=30))
    @settings(max_examples=50, deadline=None)
    def test_mr_is_symmetric_and_bounded(self, samples):
        a = _train(sorted(samples))
        b = _train(sorted({s + 1 for s in samples if s % 3}))
        ab, ba = matching_rate(a, b).mr, matching_rate(b, a).mr
        assert ab == pytest.approx(ba)
        assert 0.0 <= ab <= 1.0


@pytest.mark.unit
class TestEnvelopeMetricsUnit:
    def test_rmse_percent_normalises_by_reference_peak(self):
        ref = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
        assert rmse_percent(ref, ref) == 0.0
        assert rmse_percent(ref + 0.4, ref) == pytest.approx(10.0)

    def test_rmse_uses_signed_peak_not_magnitude(self):
        ref = np.array([-8.0, 0.0, 2.0])
        assert rmse_percent(ref + 0.2, ref) == pytest.approx(10.0)

    def test_rmse_accepts_envelopes(self):
        env = Envelope(np.array([1.0, 2.0]), 250.0, 50.0, 1000.0)
        assert rmse_percent(env, env) == 0.0

    def test_rmse_errors(self):
        with pytest.raises(CorssError) as exc:
            rmse_percent(np.ones(3), np.zeros(3))
        assert exc.value.code is ErrorCode.UNDEFINED_NORMALIZATION
        with pytest.raises(ShapeError):
            rmse_percent(np.ones(3), np.ones(4))

    def test_pearson(self, rng):
        x = rng.standard_normal(1000)
        assert pearson_corr(x, 3.0 * x + 1.0) == pytest.approx(1.0)
        assert pearson_corr(x, -x) == pytest.approx(-1.0)
        with pytest.raises(CorssError) as exc:
            pearson_corr(np.ones(5), x[:5])
        assert exc.value.code is ErrorCode.UNDEFINED_CORRELATION

    def test_pearson_at_zero_db(self, rng):
        x = rng.standard_normal(20_000)
        y = x + rng.standard_normal(20_000)
        assert pearson_corr(y, x) == pytest.approx(1.0 / np.sqrt(2.0), abs=0.05)

    def test_fit_gain(self):
        ref = np.array([1.0, 2.0, 3.0])
        assert fit_gain(0.5 * ref, ref) == pytest.approx(2.0)
        assert fit_gain(np.zeros(3), ref) == 0.0


@pytest.mark.unit
class TestAmariUnit:
    def test_identity_and_scaled_permutation(self):
        assert amari_index(np.eye(4)) == 0.0
        P = np.array([[0.0, -2.0, 0.0], [0.0, 0.0, 0.5], [3.0, 0.0, 0.0]])
        assert amari_index(P) == pytest.approx(0.0)

    def test_uniform_matrix_is_worst(self):
        assert amari_index(np.ones((4, 4))) == pytest.approx(1.0)

    def test_permutation_invariance(self, rng):
        G = rng.standard_normal((5, 5))
        perm = rng.permutation(5)
        base = amari_index(G)
        assert amari_index(G[perm]) == pytest.approx(base)
        assert amari_index(G[:, perm]) == pytest.approx(base)
        assert 0.0 <= base <= 1.0

    def test_errors(self):
        with pytest.raises(ShapeError):
            amari_index(np.ones((2, 3)))
        with pytest.raises(CorssError) as exc:
            amari_index(np.array([[1.0, 0.0], [0.0, 0.0]]))
        assert exc.value.code is ErrorCode.DEGENERATE_MATRIX

    def test_select_matched_rows_from_tall_matrix(self):
        G = np.array(
            [
                [0.1, 0.1],
                [0.0, 2.0],
                [0.2, 0.1],
                [3.0, 0.1],
            ]
        )
        np.testing.assert_array_equal(select_matched_rows(G), G[[3, 1]])
        with pytest.raises(ShapeError):
            select_matched_rows(np.ones((2, 3)))

    def test_global_amari_of_exact_inverse(self, rng):
        A = rng.standard_normal((3, 3)) + 3.0 * np.eye(3)
        assert global_amari(np.linalg.inv(A), np.eye(3), A) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.unit
class TestLatencyUnit:
    def test_latency_stats(self):
        report = latency_stats([0.01, 0.03], block_size=100, sample_rate=1000.0)
        assert report.n_blocks == 2
        assert report.mean_s == pytest.approx(0.02)
        assert report.max_s == pytest.approx(0.03)
        assert report.realtime_ratio == pytest.approx(0.2)

    def test_no_timings(self):
        with pytest.raises(CorssError) as exc:
            latency_stats([], 100, 1000.0)
        assert exc.value.code is ErrorCode.EMPTY_INPUT

    def test_burn_in(self):
        assert burn_in_samples(8) == 1600
        assert burn_in_samples(4, k=10) == 160
        with pytest.raises(MetricError):
            burn_in_samples(0)
