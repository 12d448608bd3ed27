"""
Unit tests for online recursive whitening
Юнит-тесты для онлайн-рекурсивного выбеливания
"""

import numpy as np
import pytest

from src.core.schedule import ForgettingSchedule
from src.core.signals import MultichannelBlock, iter_blocks
from src.core.whiten import apply_whitening, whiten_block, whiten_sample, whitener_init
from src.errors import CorssError, ErrorCode, NonFiniteSampleError, ShapeError


def _mixture(rng, n_ch=4, n=20_000):
    A = np.eye(n_ch) + 0.4 * rng.standard_normal((n_ch, n_ch))
    S = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=(n_ch, n))
    return A @ S


@pytest.mark.unit
class TestWhitenerUnit:
    """whitener_init / whiten_sample / whiten_block"""

    def test_init_identity(self):
        state = whitener_init(3, ForgettingSchedule())
        np.testing.assert_array_equal(state.M, np.eye(3))
        assert state.sample_count == 0
        np.testing.assert_array_equal(state.mean, np.zeros(3))

    def test_single_channel_rejected(self):
        with pytest.raises(CorssError) as exc:
            whitener_init(1, ForgettingSchedule())
        assert exc.value.code is ErrorCode.INVALID_CHANNEL_COUNT

    def test_first_output_is_the_input(self):
        state = whitener_init(2, ForgettingSchedule())
        v = whiten_sample(state, np.array([1.5, -2.0]))
        np.testing.assert_array_equal(v, [1.5, -2.0])
        assert state.sample_count == 1

    def test_frozen_schedule_never_moves(self, rng):
        state = whitener_init(3, ForgettingSchedule.frozen())
        X = rng.standard_normal((3, 50)) + 5.0
        out = whiten_block(state, MultichannelBlock(X, 1000.0))
        np.testing.assert_array_equal(out.data, X)
        np.testing.assert_array_equal(state.M, np.eye(3))
        np.testing.assert_array_equal(state.mean, np.zeros(3))
        assert state.sample_count == 50

    def test_non_finite_sample(self):
        state = whitener_init(2, ForgettingSchedule())
        with pytest.raises(NonFiniteSampleError):
            whiten_sample(state, np.array([np.nan, 0.0]))
        assert state.sample_count == 0

    def test_wrong_length(self):
        state = whitener_init(3, ForgettingSchedule())
        with pytest.raises(ShapeError):
            whiten_sample(state, np.zeros(2))
        with pytest.raises(ShapeError):
            whiten_block(state, MultichannelBlock(np.zeros((2, 5)), 1000.0))

    def test_block_partition_does_not_matter(self, rng):
        X = _mixture(rng, n=1_000)
        a = whitener_init(4, ForgettingSchedule())
        b = whitener_init(4, ForgettingSchedule())
        va = np.hstack([whiten_block(a, blk).data for blk in iter_blocks(X, 1_000, 1000.0)])
        vb = np.hstack([whiten_block(b, blk).data for blk in iter_blocks(X, 7, 1000.0)])
        np.testing.assert_array_equal(va, vb)
        np.testing.assert_array_equal(a.M, b.M)
        assert a.sample_count == b.sample_count == 1_000

    def test_apply_whitening_is_read_only(self, rng):
        state = whitener_init(4, ForgettingSchedule())
        whiten_block(state, MultichannelBlock(_mixture(rng, n=200), 1000.0))
        before = state.copy()
        apply_whitening(state, _mixture(rng, n=10))
        np.testing.assert_array_equal(state.M, before.M)
        assert state.sample_count == before.sample_count

    def test_uncentred_mode_skips_mean(self, rng):
        state = whitener_init(2, ForgettingSchedule(), center=False)
        whiten_block(state, MultichannelBlock(rng.standard_normal((2, 20)) + 3.0, 1000.0))
        np.testing.assert_array_equal(state.mean, np.zeros(2))

    @pytest.mark.slow
    def test_covariance_converges_to_identity(self, rng):
        n = 20_000
        X = _mixture(rng, n=n)
        state = whitener_init(4, ForgettingSchedule(lambda0=0.05, gamma=0.6, lambda_min=1e-4))
        V = np.hstack([whiten_block(state, blk).data for blk in iter_blocks(X, 500, 1000.0)])

        late = np.abs(np.cov(V[:, n // 2 :]) - np.eye(4)).max()
        early = np.abs(np.cov(V[:, : n // 10]) - np.eye(4)).max()
        assert late < 0.1
        assert late < early
