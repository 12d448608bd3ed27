"""
Recursive unmixing updates.

Two learning rules share one state type:

* :func:`orica_update`, the per-sample recursive ICA rule
  ``W <- W + l/(1-l) [I - y f(y)^T / (1 + l (f(y)^T y - 1))] W``;
* :func:`corss_block_update`, the constrained block-recursive rule
  ``W <- prod_l 1/(1-l_l) [I - sum_l y_l f(y_l)^T / (l_l + f(y_l)^T y_l)] W``
  where every ``y_l`` is computed with the block-initial W.

The constrained nonlinearity is the adjusted sigmoid
``f(y) = 1 - 2 / (1 + a0 exp(-a1 y))``, whose parameters can be fitted to the
empirical CDF of a template source with :func:`calibrate_nonlinearity`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import linalg
from scipy.optimize import least_squares

from src.core.schedule import ForgettingSchedule
from src.core.signals import FloatArray, MultichannelBlock
from src.core.whiten import DIVERGENCE_LIMIT
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

SINGULAR_EPS = 1e-12


# ============================================================================
# NONLINEARITY
# ============================================================================


class NonlinearityConfig(BaseModel):
    """
    Nonlinearity family used in the unmixing update.

    ``constrained-sigmoid``: f(y) = 1 - 2 / (1 + a0 * exp(-a1 * y)).
    With a0 = 1, a1 = 2 this is exactly -tanh(y).
    ``baseline-tanh``: f(y) = tanh(y); a0, a1 are ignored.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["constrained-sigmoid", "baseline-tanh"] = "constrained-sigmoid"
    a0: float = 1.0
    a1: float = 4.0

    def check(self) -> "NonlinearityConfig":
        for name, value in (("a0", self.a0), ("a1", self.a1)):
            if not np.isfinite(value) or value <= 0.0:
                raise CorssError(
                    f"{name} must be a positive finite number, got {value}",
                    code=ErrorCode.INVALID_NONLINEARITY,
                    **{name: value},
                )
        return self


def eval_nonlinearity(nl: NonlinearityConfig, y: FloatArray) -> FloatArray:
    """
    Elementwise nonlinearity.

    The sigmoid is evaluated as -tanh((a1*y - ln a0) / 2), which is the same
    function and saturates instead of overflowing for large |y|.
    """
    y = np.asarray(y, dtype=np.float64)
    if nl.kind == "baseline-tanh":
        return np.tanh(y)
    return -np.tanh(0.5 * (nl.a1 * y - np.log(nl.a0)))


def calibrate_nonlinearity(
    template: FloatArray,
    standardize: bool = True,
    max_points: int = 2000,
    initial: Optional[NonlinearityConfig] = None,
) -> NonlinearityConfig:
    """
    Fit (a0, a1) so that 1 / (1 + a0 exp(-a1 c)) matches the empirical CDF
    of ``template``.

    Args:
        template: 1-D example of the source to be extracted (e.g. one pulse cycle).
        standardize: Fit on (x - mean) / std instead of raw amplitudes.
        max_points: ECDF support is thinned to at most this many quantiles.
        initial: Starting point; defaults to a0 = 1, a1 = 4.

    Returns:
        Constrained-sigmoid NonlinearityConfig with the fitted parameters.

    Raises:
        CorssError: ``empty-input`` for fewer than 3 finite samples,
            ``invalid-nonlinearity`` for a constant template.
    """
    x = np.asarray(template, dtype=np.float64).reshape(-1)
    x = x[np.isfinite(x)]
    if x.size < 3:
        raise CorssError(
            "calibration template needs at least 3 finite samples",
            code=ErrorCode.EMPTY_INPUT,
            n=int(x.size),
        )
    if standardize:
        sd = float(np.std(x))
        if sd == 0.0:
            raise CorssError(
                "calibration template is constant", code=ErrorCode.INVALID_NONLINEARITY
            )
        x = (x - float(np.mean(x))) / sd
    c = np.sort(x)
    cdf = (np.arange(c.size) + 0.5) / c.size
    if c.size > max_points:
        pick = np.linspace(0, c.size - 1, max_points).round().astype(np.int64)
        c, cdf = c[pick], cdf[pick]
    if c[0] == c[-1]:
        raise CorssError("calibration template is constant", code=ErrorCode.INVALID_NONLINEARITY)

    start = initial or NonlinearityConfig()

    def residuals(p: FloatArray) -> FloatArray:
        log_a0, log_a1 = p
        # 1/(1 + a0 e^{-a1 c}) = (1 + tanh((a1 c - ln a0)/2)) / 2, overflow-free
        model = 0.5 * (1.0 + np.tanh(0.5 * (np.exp(log_a1) * c - log_a0)))
        return model - cdf

    fit = least_squares(
        residuals,
        x0=np.array([np.log(start.a0), np.log(start.a1)]),
        method="trf",
    )
    a0, a1 = float(np.exp(fit.x[0])), float(np.exp(fit.x[1]))
    logger.info(
        "nonlinearity_calibrated",
        a0=a0,
        a1=a1,
        cost=float(fit.cost),
        n_points=int(c.size),
        standardized=standardize,
    )
    return NonlinearityConfig(kind="constrained-sigmoid", a0=a0, a1=a1)


# ============================================================================
# STATE
# ============================================================================


@dataclass
class SeparatorState:
    """
    Unmixing matrix plus recursion counters. Owned by exactly one stream.

    Attributes:
        W: Unmixing matrix (n_ch, n_ch).
        schedule: Forgetting schedule for the separation update.
        nonlinearity: Nonlinearity used in the update.
        renormalize: Rescale every row of W to unit norm after each update.
        orthonormalize: Apply W <- (W W^T)^{-1/2} W after each update.
        sample_count: Samples consumed so far.
        skipped_samples: Samples excluded because their denominator was singular.
        degenerate_blocks: Blocks whose every sample was skipped.
        last_row_norms: Row norms of W right after the last raw update.
    """

    W: FloatArray
    schedule: ForgettingSchedule
    nonlinearity: NonlinearityConfig
    renormalize: bool = True
    orthonormalize: bool = True
    sample_count: int = 0
    skipped_samples: int = 0
    degenerate_blocks: int = 0
    last_row_norms: FloatArray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_channels(self) -> int:
        return int(self.W.shape[0])

    @property
    def conditioned(self) -> bool:
        return self.renormalize or self.orthonormalize

    def copy(self) -> "SeparatorState":
        return SeparatorState(
            W=self.W.copy(),
            schedule=self.schedule,
            nonlinearity=self.nonlinearity,
            renormalize=self.renormalize,
            orthonormalize=self.orthonormalize,
            sample_count=self.sample_count,
            skipped_samples=self.skipped_samples,
            degenerate_blocks=self.degenerate_blocks,
            last_row_norms=self.last_row_norms.copy(),
        )


def separator_init(
    n_ch: int,
    schedule: ForgettingSchedule,
    nl: NonlinearityConfig,
    renormalize: bool = True,
    orthonormalize: bool = True,
) -> SeparatorState:
    """
    Fresh separator with W = I.

    Raises:
        CorssError: ``invalid-channel-count`` (n_ch < 2), ``invalid-nonlinearity``.
        ScheduleError: schedule out of range.
    """
    if n_ch < 2:
        raise CorssError(
            f"separation needs at least 2 channels, got {n_ch}",
            code=ErrorCode.INVALID_CHANNEL_COUNT,
            n_ch=n_ch,
        )
    schedule.check()
    nl.check()
    return SeparatorState(
        W=np.eye(n_ch),
        schedule=schedule,
        nonlinearity=nl,
        renormalize=renormalize,
        orthonormalize=orthonormalize,
        last_row_norms=np.ones(n_ch),
    )


# ============================================================================
# CONDITIONING
# ============================================================================


def sym_decorrelation(W: FloatArray) -> Optional[FloatArray]:
    """(W W^T)^{-1/2} W, or None when W W^T is numerically singular."""
    s, u = linalg.eigh(W @ W.T)
    if s[0] <= 1e-12 * max(s[-1], 1e-300):
        return None
    return (u * (1.0 / np.sqrt(s))) @ u.T @ W


def _condition(state: SeparatorState, W_new: FloatArray) -> FloatArray:
    state.last_row_norms = np.linalg.norm(W_new, axis=1)
    if state.orthonormalize:
        ortho = sym_decorrelation(W_new)
        if ortho is None:
            logger.warning("orthonormalization_skipped", sample_count=state.sample_count)
        else:
            W_new = ortho
    if state.renormalize:
        norms = np.linalg.norm(W_new, axis=1)
        norms[norms == 0.0] = 1.0
        W_new = W_new / norms[:, None]
    return W_new


def _align_row_signs(W_new: FloatArray, W_old: FloatArray) -> FloatArray:
    """Flip rows that point away from their predecessor (sign is arbitrary)."""
    signs = np.sign(np.einsum("ij,ij->i", W_new, W_old))
    signs[signs == 0.0] = 1.0
    return W_new * signs[:, None]


def _guard(W: FloatArray, sample_count: int) -> None:
    peak = float(np.max(np.abs(W))) if np.all(np.isfinite(W)) else float("inf")
    if peak > DIVERGENCE_LIMIT:
        logger.error("matrix_diverged", matrix="unmixing", peak=peak, sample_count=sample_count)
        raise DivergenceError(
            f"unmixing matrix diverged (max |entry| = {peak:.3g})",
            matrix="unmixing",
            sample_count=sample_count,
        )


# ============================================================================
# UPDATES
# ============================================================================


def orica_update(state: SeparatorState, v: FloatArray) -> FloatArray:
    """
    Per-sample recursive ICA update.

    Args:
        state: Separator state, updated in place.
        v: Whitened sample of length n_ch.

    Returns:
        y = W v with the pre-update W.

    A denominator within 1e-12 of zero skips the update for that sample and is
    counted in ``state.skipped_samples``.
    """
    v = np.asarray(v, dtype=np.float64)
    n_ch = state.n_channels
    if v.shape != (n_ch,):
        raise ShapeError(f"sample must have shape ({n_ch},), got {v.shape}", expected=n_ch)
    if not np.all(np.isfinite(v)):
        raise NonFiniteSampleError("non-finite whitened sample", sample_index=state.sample_count)

    n = state.sample_count + 1
    lam = state.schedule.value(n)
    if lam >= 1.0:
        raise ScheduleError(f"lambda_{n} = {lam} >= 1", n=n, value=lam)

    W = state.W
    y = W @ v
    state.sample_count = n
    if lam == 0.0:
        return y

    f = eval_nonlinearity(state.nonlinearity, y)
    q = 1.0 + lam * (float(f @ y) - 1.0)
    if abs(q) < SINGULAR_EPS:
        state.skipped_samples += 1
        logger.debug("singular_update_skipped", sample_count=n, denominator=q)
        return y

    gain = lam / (1.0 - lam)
    W_new = W + gain * (W - np.outer(y, f @ W) / q)
    W_new = _condition(state, W_new)
    _guard(W_new, n)
    state.W = W_new
    return y


def corss_block_update(state: SeparatorState, v_block: MultichannelBlock) -> MultichannelBlock:
    """
    Constrained block-recursive update over one block of whitened samples.

    All outputs y_l = W_n v_l use the block-initial W_n. The per-sample terms
    are reduced with a single matrix product, so the result is deterministic.

    Args:
        state: Separator state, updated in place.
        v_block: Whitened block (n_ch, L), L >= 1.

    Returns:
        Block of separated samples y with the same timing as ``v_block``.
    """
    n_ch = state.n_channels
    if v_block.n_channels != n_ch:
        raise ShapeError(
            f"block has {v_block.n_channels} channels, separator expects {n_ch}",
            expected=n_ch,
            got=v_block.n_channels,
        )
    L = v_block.length
    if L < 1:
        raise ShapeError("block must contain at least one sample")
    V = v_block.data
    if not np.all(np.isfinite(V)):
        raise NonFiniteSampleError("non-finite whitened sample", sample_index=state.sample_count)

    lams = state.schedule.values(state.sample_count + 1, L)
    if np.any(lams >= 1.0):
        raise ScheduleError(
            f"forgetting factor reached {float(lams.max())} >= 1", value=float(lams.max())
        )

    W = state.W
    Y = W @ V
    start = state.sample_count
    state.sample_count = start + L
    if not np.any(lams > 0.0):
        return v_block.with_data(Y)

    F = eval_nonlinearity(state.nonlinearity, Y)
    denom = lams + np.einsum("ij,ij->j", F, Y)
    valid = np.abs(denom) >= SINGULAR_EPS
    n_skipped = int(L - np.count_nonzero(valid))
    if n_skipped:
        state.skipped_samples += n_skipped
        logger.debug("singular_samples_skipped", skipped=n_skipped, block_start=start)
    if n_skipped == L:
        state.degenerate_blocks += 1
        logger.warning("degenerate_block", block_start=start, block_length=L)
        return v_block.with_data(Y)

    S = (Y[:, valid] / denom[valid]) @ F[:, valid].T
    scale = float(np.exp(-np.sum(np.log1p(-lams))))
    W_new = scale * (W - S @ W)
    W_new = _condition(state, W_new)
    if state.conditioned:
        W_new = _align_row_signs(W_new, W)
    _guard(W_new, state.sample_count)
    state.W = W_new
    return v_block.with_data(Y)


def unmix(state: SeparatorState, v: FloatArray) -> FloatArray:
    """Read-only y = W v for a (n_ch, N) whitened array."""
    return state.W @ np.asarray(v, dtype=np.float64)


__all__ = [
    "NonlinearityConfig",
    "SINGULAR_EPS",
    "SeparatorState",
    "calibrate_nonlinearity",
    "corss_block_update",
    "eval_nonlinearity",
    "orica_update",
    "separator_init",
    "sym_decorrelation",
    "unmix",
]
