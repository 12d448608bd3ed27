"""
Unit tests for the recursive unmixing updates
Юнит-тесты для рекурсивных обновлений матрицы разделения
"""

import numpy as np
import pytest
from scipy.optimize import brentq

from src.core.metrics import amari_index
from src.core.reference import batch_whiten
from src.core.schedule import ForgettingSchedule
from src.core.separate import (
    NonlinearityConfig,
    calibrate_nonlinearity,
    corss_block_update,
    eval_nonlinearity,
    orica_update,
    separator_init,
    sym_decorrelation,
    unmix,
)
from src.core.signals import MultichannelBlock
from src.errors import CorssError, ErrorCode, ShapeError

SIGMOID = NonlinearityConfig()
TANH = NonlinearityConfig(kind="baseline-tanh")
NEG_TANH = NonlinearityConfig(a0=1.0, a1=2.0)


def _block(data):
    return MultichannelBlock(np.asarray(data, dtype=np.float64), 2000.0)


@pytest.mark.unit
class TestNonlinearityUnit:
    def test_sigmoid_reduces_to_negative_tanh(self):
        y = np.linspace(-10.0, 10.0, 2001)
        f = eval_nonlinearity(NonlinearityConfig(a0=1.0, a1=2.0), y)
        np.testing.assert_allclose(f, -np.tanh(y), atol=1e-12)

    def test_sigmoid_matches_closed_form(self):
        y = np.linspace(-3.0, 3.0, 61)
        nl = NonlinearityConfig(a0=2.5, a1=3.0)
        expected = 1.0 - 2.0 / (1.0 + 2.5 * np.exp(-3.0 * y))
        np.testing.assert_allclose(eval_nonlinearity(nl, y), expected, atol=1e-12)

    def test_sigmoid_saturates_without_overflow(self):
        f = eval_nonlinearity(NonlinearityConfig(a1=50.0), np.array([-1e6, 1e6]))
        np.testing.assert_array_equal(f, [1.0, -1.0])

    def test_baseline_tanh(self):
        y = np.array([-1.0, 0.0, 2.0])
        np.testing.assert_allclose(eval_nonlinearity(TANH, y), np.tanh(y))

    @pytest.mark.parametrize("kwargs", [{"a0": 0.0}, {"a1": -1.0}, {"a0": float("inf")}])
    def test_invalid_parameters(self, kwargs):
        with pytest.raises(CorssError) as exc:
            NonlinearityConfig(**kwargs).check()
        assert exc.value.code is ErrorCode.INVALID_NONLINEARITY

    def test_calibration_recovers_logistic_parameters(self, rng):
        # logistic(loc=0.5, scale=0.25) has CDF 1 / (1 + e^2 exp(-4 c))
        template = rng.logistic(0.5, 0.25, size=20_000)
        nl = calibrate_nonlinearity(template, standardize=False)
        assert nl.kind == "constrained-sigmoid"
        assert nl.a0 == pytest.approx(np.e**2, rel=0.1)
        assert nl.a1 == pytest.approx(4.0, rel=0.1)

    def test_calibration_rejects_degenerate_templates(self):
        with pytest.raises(CorssError) as exc:
            calibrate_nonlinearity(np.array([1.0, 2.0]))
        assert exc.value.code is ErrorCode.EMPTY_INPUT
        with pytest.raises(CorssError) as exc:
            calibrate_nonlinearity(np.ones(100))
        assert exc.value.code is ErrorCode.INVALID_NONLINEARITY


@pytest.mark.unit
class TestSeparatorInitUnit:
    def test_identity_start(self):
        state = separator_init(3, ForgettingSchedule(), SIGMOID)
        np.testing.assert_array_equal(state.W, np.eye(3))
        assert state.sample_count == state.skipped_samples == state.degenerate_blocks == 0

    def test_single_channel_rejected(self):
        with pytest.raises(CorssError) as exc:
            separator_init(1, ForgettingSchedule(), SIGMOID)
        assert exc.value.code is ErrorCode.INVALID_CHANNEL_COUNT

    def test_bad_nonlinearity_rejected(self):
        with pytest.raises(CorssError) as exc:
            separator_init(2, ForgettingSchedule(), NonlinearityConfig(a0=-1.0))
        assert exc.value.code is ErrorCode.INVALID_NONLINEARITY

    def test_sym_decorrelation(self, rng):
        W = rng.standard_normal((4, 4))
        O = sym_decorrelation(W)
        np.testing.assert_allclose(O @ O.T, np.eye(4), atol=1e-10)
        assert sym_decorrelation(np.zeros((3, 3))) is None


@pytest.mark.unit
class TestCorssBlockUpdateUnit:
    def test_frozen_schedule_is_a_no_op(self, rng):
        state = separator_init(3, ForgettingSchedule.frozen(), SIGMOID)
        state.W = rng.standard_normal((3, 3))
        W0 = state.W.copy()
        V = rng.standard_normal((3, 40))
        out = corss_block_update(state, _block(V))
        np.testing.assert_array_equal(state.W, W0)
        np.testing.assert_allclose(out.data, W0 @ V)
        assert state.sample_count == 40

    def test_outputs_use_block_initial_matrix(self, rng):
        state = separator_init(3, ForgettingSchedule(), SIGMOID)
        V = rng.standard_normal((3, 25))
        out = corss_block_update(state, _block(V))
        np.testing.assert_array_equal(out.data, V)
        assert not np.array_equal(state.W, np.eye(3))

    def test_raw_update_matches_block_formula(self, rng):
        schedule = ForgettingSchedule(lambda0=0.05, gamma=0.6, lambda_min=0.001)
        state = separator_init(3, schedule, SIGMOID, renormalize=False, orthonormalize=False)
        W = np.eye(3) + 0.1 * rng.standard_normal((3, 3))
        state.W = W.copy()
        V = rng.standard_normal((3, 10))

        corss_block_update(state, _block(V))

        lams = schedule.values(1, 10)
        Y = W @ V
        F = eval_nonlinearity(SIGMOID, Y)
        S = sum(np.outer(Y[:, k], F[:, k]) / (lams[k] + F[:, k] @ Y[:, k]) for k in range(10))
        expected = np.prod(1.0 / (1.0 - lams)) * (np.eye(3) - S) @ W
        np.testing.assert_allclose(state.W, expected, rtol=1e-10, atol=1e-12)

    def test_renormalized_rows_have_unit_norm(self, rng):
        state = separator_init(4, ForgettingSchedule(), SIGMOID)
        for _ in range(5):
            corss_block_update(state, _block(rng.standard_normal((4, 50))))
        np.testing.assert_allclose(np.linalg.norm(state.W, axis=1), 1.0)
        assert state.last_row_norms.shape == (4,)

    def test_orthonormalized_matrix_and_sign_continuity(self, rng):
        state = separator_init(3, ForgettingSchedule(), SIGMOID, orthonormalize=True)
        for _ in range(5):
            W_old = state.W.copy()
            corss_block_update(state, _block(rng.laplace(size=(3, 50))))
            np.testing.assert_allclose(state.W @ state.W.T, np.eye(3), atol=1e-10)
            assert np.all(np.einsum("ij,ij->i", state.W, W_old) >= 0.0)

    def test_renormalized_rows_keep_their_sign(self, rng):
        state = separator_init(3, ForgettingSchedule(), SIGMOID, orthonormalize=False)
        assert state.conditioned
        for _ in range(5):
            W_old = state.W.copy()
            corss_block_update(state, _block(rng.laplace(size=(3, 50))))
            assert np.all(np.einsum("ij,ij->i", state.W, W_old) >= 0.0)

    @pytest.mark.slow
    def test_default_state_separates_two_laplacian_sources(self, rng, laplacian):
        S = laplacian(rng, 2, 20_000)
        A = np.array([[1.0, 0.6], [0.4, 1.0]])
        Z, K, _ = batch_whiten(A @ S)
        state = separator_init(2, ForgettingSchedule(), SIGMOID)
        assert state.orthonormalize and state.renormalize
        for start in range(0, Z.shape[1], 200):
            corss_block_update(state, _block(Z[:, start : start + 200]))
        assert amari_index(state.W @ K @ A) < 0.3

    def test_all_singular_samples_make_a_degenerate_block(self):
        # lambda + f(y)^T y == 0 for y = (c, 0) with f = -tanh(2 y) and lambda = 0.5
        c = brentq(lambda x: x * np.tanh(2.0 * x) - 0.5, 0.1, 2.0, xtol=1e-15, rtol=1e-15)
        state = separator_init(2, ForgettingSchedule.constant(0.5), SIGMOID)
        V = np.tile([[c], [0.0]], (1, 3))

        corss_block_update(state, _block(V))

        np.testing.assert_array_equal(state.W, np.eye(2))
        assert state.skipped_samples == 3
        assert state.degenerate_blocks == 1
        assert state.sample_count == 3

    def test_empty_or_mismatched_block(self):
        state = separator_init(2, ForgettingSchedule(), SIGMOID)
        with pytest.raises(ShapeError):
            corss_block_update(state, _block(np.zeros((2, 0))))
        with pytest.raises(ShapeError):
            corss_block_update(state, _block(np.zeros((3, 4))))


@pytest.mark.unit
class TestOricaUpdateUnit:
    def test_per_sample_rule(self, rng):
        state = separator_init(
            2, ForgettingSchedule.constant(0.01), TANH, renormalize=False, orthonormalize=False
        )
        v = rng.standard_normal(2)
        y = orica_update(state, v)

        np.testing.assert_allclose(y, v)
        f = np.tanh(y)
        q = 1.0 + 0.01 * (f @ y - 1.0)
        expected = np.eye(2) + (0.01 / 0.99) * (np.eye(2) - np.outer(y, f) / q)
        np.testing.assert_allclose(state.W, expected)

    def test_singular_denominator_skips_sample(self):
        # q = 1 + lambda (f^T y - 1) == 0 for f = -tanh, lambda = 0.5, y = (c, 0), c tanh c = 1
        c = brentq(lambda x: x * np.tanh(x) - 1.0, 0.5, 3.0, xtol=1e-15, rtol=1e-15)
        nl = NonlinearityConfig(a0=1.0, a1=2.0)
        state = separator_init(2, ForgettingSchedule.constant(0.5), nl)
        orica_update(state, np.array([c, 0.0]))
        np.testing.assert_array_equal(state.W, np.eye(2))
        assert state.skipped_samples == 1
        assert state.sample_count == 1

    def test_unmix_is_read_only(self, rng):
        state = separator_init(2, ForgettingSchedule(), TANH)
        V = rng.standard_normal((2, 5))
        np.testing.assert_allclose(unmix(state, V), V)
        assert state.sample_count == 0

    @pytest.mark.slow
    def test_separates_two_laplacian_sources(self, rng, laplacian):
        S = laplacian(rng, 2, 20_000)
        A = np.array([[1.0, 0.6], [0.4, 1.0]])
        Z, K, _ = batch_whiten(A @ S)
        state = separator_init(2, ForgettingSchedule(), NEG_TANH)
        for j in range(Z.shape[1]):
            orica_update(state, Z[:, j])
        assert amari_index(state.W @ K @ A) < 0.3
