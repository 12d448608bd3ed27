"""
Online recursive pre-whitening.

Each sample x_n is centred by a running mean and mapped through the current
whitening matrix, v_n = M_n (x_n - mu_n). M is then updated by

    M <- M + lambda/(1 - lambda) * [I - v v^T / (1 + lambda (v^T v - 1))] M

so that cov(v) is driven towards the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from src.core.schedule import ForgettingSchedule
from src.core.signals import FloatArray, MultichannelBlock
from src.errors import (
    CorssError,
    DivergenceError,
    ErrorCode,
    NonFiniteSampleError,
    ScheduleError,
    ShapeError,
)
from src.observability.structured_logging import get_logger

logger = get_logger(__name__)

DIVERGENCE_LIMIT = 1e6


@dataclass
class WhitenerState:
    """
    Whitening matrix plus recursion counters. Owned by exactly one stream.

    Attributes:
        M: Whitening matrix (n_ch, n_ch).
        schedule: Forgetting schedule; ``lambda_n`` uses n = sample_count + 1.
        sample_count: Samples processed so far.
        mean: Running per-channel mean removed before whitening.
        center: Whether the running mean is maintained and removed.
    """

    M: FloatArray
    schedule: ForgettingSchedule
    sample_count: int = 0
    mean: FloatArray = field(default_factory=lambda: np.zeros(0))
    center: bool = True

    @property
    def n_channels(self) -> int:
        return int(self.M.shape[0])

    def copy(self) -> "WhitenerState":
        return WhitenerState(
            self.M.copy(), self.schedule, self.sample_count, self.mean.copy(), self.center
        )


def whitener_init(
    n_ch: int,
    schedule: ForgettingSchedule,
    center: bool = True,
) -> WhitenerState:
    """
    Fresh whitener: M = I, sample_count = 0, zero running mean.

    Raises:
        CorssError: ``invalid-channel-count`` when n_ch < 2.
        ScheduleError: when the schedule is out of range.
    """
    if n_ch < 2:
        raise CorssError(
            f"whitening needs at least 2 channels, got {n_ch}",
            code=ErrorCode.INVALID_CHANNEL_COUNT,
            n_ch=n_ch,
        )
    schedule.check()
    return WhitenerState(
        M=np.eye(n_ch),
        schedule=schedule,
        sample_count=0,
        mean=np.zeros(n_ch),
        center=center,
    )


def _check_finite_matrix(matrix: FloatArray, name: str, sample_count: int) -> None:
    peak = float(np.max(np.abs(matrix))) if np.all(np.isfinite(matrix)) else float("inf")
    if peak > DIVERGENCE_LIMIT:
        logger.error("matrix_diverged", matrix=name, peak=peak, sample_count=sample_count)
        raise DivergenceError(
            f"{name} diverged (max |entry| = {peak:.3g})",
            matrix=name,
            sample_count=sample_count,
        )


def whiten_sample(state: WhitenerState, x: FloatArray) -> FloatArray:
    """
    Whiten one sample and advance the recursion.

    Args:
        state: Whitener state, updated in place.
        x: Sample vector of length n_ch.

    Returns:
        v = M (x - mu) computed with the pre-update M and mean.

    Raises:
        ShapeError: wrong vector length.
        NonFiniteSampleError: NaN/inf in x.
        ScheduleError: lambda_n >= 1.
        DivergenceError: the updated M left the bounded region.
    """
    x = np.asarray(x, dtype=np.float64)
    n_ch = state.n_channels
    if x.shape != (n_ch,):
        raise ShapeError(
            f"sample must have shape ({n_ch},), got {x.shape}", expected=n_ch
        )
    if not np.all(np.isfinite(x)):
        raise NonFiniteSampleError(
            "non-finite value in input sample", sample_index=state.sample_count
        )

    n = state.sample_count + 1
    lam = state.schedule.value(n)
    if lam >= 1.0:
        raise ScheduleError(f"lambda_{n} = {lam} >= 1", n=n, value=lam)

    if state.center:
        centred = x - state.mean
    else:
        centred = x
    v = state.M @ centred

    if lam > 0.0:
        if state.center:
            alpha = max(lam, 1.0 / n)
            state.mean = state.mean + alpha * (x - state.mean)
        gain = lam / (1.0 - lam)
        q = 1.0 + lam * (float(v @ v) - 1.0)
        M = state.M
        state.M = M + gain * (M - np.outer(v, v @ M) / q)
        _check_finite_matrix(state.M, "whitening matrix", n)

    state.sample_count = n
    return v


def whiten_block(state: WhitenerState, block: MultichannelBlock) -> MultichannelBlock:
    """
    Apply :func:`whiten_sample` to every column of ``block`` in temporal order.

    The trajectory of M depends only on the sample sequence, never on how the
    stream is cut into blocks.
    """
    if block.n_channels != state.n_channels:
        raise ShapeError(
            f"block has {block.n_channels} channels, whitener expects {state.n_channels}",
            expected=state.n_channels,
            got=block.n_channels,
        )
    out = np.empty_like(block.data)
    for j in range(block.length):
        out[:, j] = whiten_sample(state, block.data[:, j])
    return block.with_data(out)


def apply_whitening(state: WhitenerState, data: FloatArray) -> FloatArray:
    """Read-only M (x - mu) for a (n_ch, N) array; the state is not advanced."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] != state.n_channels:
        raise ShapeError(f"expected ({state.n_channels}, N) data, got {data.shape}")
    if state.center:
        return state.M @ (data - state.mean[:, None])
    return state.M @ data


__all__ = [
    "DIVERGENCE_LIMIT",
    "WhitenerState",
    "apply_whitening",
    "whiten_block",
    "whiten_sample",
    "whitener_init",
]
