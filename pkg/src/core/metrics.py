"""
Evaluation metrics: spike-train matching rate, envelope RMSE and correlation,
Amari index, and per-block latency statistics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy.optimize import linear_sum_assignment

from src.core.signals import Envelope, FloatArray, SpikeTrain
from src.errors import CorssError, ErrorCode, MetricError, ShapeError

SeriesLike = Union[Envelope, FloatArray, Sequence[float]]


# ============================================================================
# MATCHING RATE
# ============================================================================


@dataclass(frozen=True)
class MatchResult:
    """
    Agreement between two spike trains.

    ``mr = 2 * n_common / (n_a + n_b)``; two empty trains agree vacuously (mr = 1).
    """

    n_common: int
    n_a: int
    n_b: int
    mr: float

    @classmethod
    def from_counts(cls, n_common: int, n_a: int, n_b: int) -> "MatchResult":
        total = n_a + n_b
        mr = 1.0 if total == 0 else 2.0 * n_common / total
        return cls(n_common=n_common, n_a=n_a, n_b=n_b, mr=mr)


def _check_rates(a: SpikeTrain, b: SpikeTrain) -> None:
    if a.sample_rate != b.sample_rate:
        raise CorssError(
            f"sample rates differ: {a.sample_rate} vs {b.sample_rate}",
            code=ErrorCode.RATE_MISMATCH,
            rate_a=a.sample_rate,
            rate_b=b.sample_rate,
        )


def count_matches(a: np.ndarray, b: np.ndarray, tolerance: float) -> int:
    """
    Size of a maximum one-to-one matching of sorted indices a, b with |a_i - b_j| <= tolerance.

    A single merge sweep is optimal here: matching the earliest compatible pair
    never blocks a larger matching when every spike has the same tolerance.
    """
    i = j = matched = 0
    na, nb = len(a), len(b)
    while i < na and j < nb:
        d = a[i] - b[j]
        if abs(d) <= tolerance:
            matched += 1
            i += 1
            j += 1
        elif d < 0:
            i += 1
        else:
            j += 1
    return matched


def matching_rate(a: SpikeTrain, b: SpikeTrain, tolerance_ms: float = 0.5) -> MatchResult:
    """
    Matching rate between two spike trains.

    Args:
        a, b: Trains at the same sample rate.
        tolerance_ms: Maximum offset of a common spike.

    Raises:
        CorssError: ``rate-mismatch`` or ``invalid-argument`` (negative tolerance).
    """
    _check_rates(a, b)
    if tolerance_ms < 0:
        raise CorssError("tolerance_ms must be >= 0", code=ErrorCode.INVALID_ARGUMENT)
    tol = tolerance_ms * a.sample_rate / 1000.0
    n_common = count_matches(a.spike_samples, b.spike_samples, tol)
    return MatchResult.from_counts(n_common, len(a), len(b))


def matching_rate_with_lag(
    a: SpikeTrain,
    b: SpikeTrain,
    tolerance_ms: float = 0.5,
    max_lag_ms: float = 5.0,
) -> Tuple[MatchResult, int]:
    """
    Best matching rate over global shifts of ``b`` within +-max_lag_ms.

    Returns:
        (result, lag) where lag (in samples) was added to ``b``; ties favour
        the smallest |lag|.
    """
    _check_rates(a, b)
    max_lag = int(round(max_lag_ms * a.sample_rate / 1000.0))
    tol = tolerance_ms * a.sample_rate / 1000.0
    best_common, best_lag = -1, 0
    for lag in sorted(range(-max_lag, max_lag + 1), key=abs):
        common = count_matches(a.spike_samples, b.spike_samples + lag, tol)
        if common > best_common:
            best_common, best_lag = common, lag
    return MatchResult.from_counts(max(best_common, 0), len(a), len(b)), best_lag


@dataclass(frozen=True)
class SourceMatch:
    estimated: int
    truth: int
    result: MatchResult
    lag: int


def assign_sources(
    estimated: Sequence[SpikeTrain],
    truth: Sequence[SpikeTrain],
    tolerance_ms: float = 0.5,
    max_lag_ms: float = 5.0,
) -> List[SourceMatch]:
    """
    One-to-one assignment of estimated to true sources maximising total MR.

    Pairs are listed by true-source index; sources left over on either side are
    not reported.
    """
    if not estimated or not truth:
        return []
    table = np.zeros((len(estimated), len(truth)))
    lags = np.zeros((len(estimated), len(truth)), dtype=np.int64)
    results: dict[Tuple[int, int], MatchResult] = {}
    for i, est in enumerate(estimated):
        for j, ref in enumerate(truth):
            res, lag = matching_rate_with_lag(ref, est, tolerance_ms, max_lag_ms)
            table[i, j], lags[i, j], results[(i, j)] = res.mr, lag, res
    rows, cols = linear_sum_assignment(table, maximize=True)
    pairs = [
        SourceMatch(int(i), int(j), results[(int(i), int(j))], int(lags[i, j]))
        for i, j in zip(rows, cols)
    ]
    return sorted(pairs, key=lambda p: p.truth)


# ============================================================================
# ENVELOPE METRICS
# ============================================================================


def _series(x: SeriesLike) -> FloatArray:
    if isinstance(x, Envelope):
        return x.values
    return np.asarray(x, dtype=np.float64).reshape(-1)


def _paired(est: SeriesLike, ref: SeriesLike, min_len: int) -> Tuple[FloatArray, FloatArray]:
    e, r = _series(est), _series(ref)
    if e.size != r.size:
        raise ShapeError(f"length mismatch: {e.size} vs {r.size}", est=e.size, ref=r.size)
    if e.size < min_len:
        raise ShapeError(f"need at least {min_len} values, got {e.size}")
    return e, r


def rmse_percent(est: SeriesLike, ref: SeriesLike) -> float:
    """
    RMSE of the two series after both are divided by max(ref), in percent.

    Raises:
        ShapeError: length mismatch or empty input.
        CorssError: ``undefined-normalization`` when max(ref) <= 0.
    """
    e, r = _paired(est, ref, 1)
    peak = float(np.max(r))
    if peak <= 0.0:
        raise CorssError(
            "reference has no positive peak to normalise by",
            code=ErrorCode.UNDEFINED_NORMALIZATION,
        )
    diff = (e - r) / peak
    return float(np.sqrt(np.mean(diff * diff)) * 100.0)


def pearson_corr(est: SeriesLike, ref: SeriesLike) -> float:
    """
    Pearson product-moment correlation in [-1, 1].

    Raises:
        ShapeError: length mismatch or fewer than 2 values.
        CorssError: ``undefined-correlation`` for a constant series.
    """
    e, r = _paired(est, ref, 2)
    if np.ptp(e) == 0.0 or np.ptp(r) == 0.0:
        raise CorssError(
            "correlation is undefined for a constant series",
            code=ErrorCode.UNDEFINED_CORRELATION,
        )
    ec, rc = e - e.mean(), r - r.mean()
    denom = float(np.sqrt(np.dot(ec, ec) * np.dot(rc, rc)))
    return float(np.clip(np.dot(ec, rc) / denom, -1.0, 1.0))


def fit_gain(est: SeriesLike, ref: SeriesLike) -> float:
    """Least-squares gain g minimising ||g * est - ref||."""
    e, r = _paired(est, ref, 1)
    power = float(np.dot(e, e))
    return float(np.dot(e, r)) / power if power > 0.0 else 0.0


# ============================================================================
# AMARI INDEX
# ============================================================================


def amari_index(G: FloatArray) -> float:
    """
    Normalised Amari performance index of a square global matrix G = W M A.

    0.5 * [mean_i (sum_j |g_ij| / max_j |g_ij| - 1) / (n - 1)
           + mean_j (sum_i |g_ij| / max_i |g_ij| - 1) / (n - 1)]

    Zero iff G is a scaled permutation; invariant to row and column permutations.

    Raises:
        ShapeError: G not square.
        CorssError: ``degenerate-matrix`` for a zero row or column.
    """
    P = np.abs(np.asarray(G, dtype=np.float64))
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ShapeError(f"Amari index needs a square matrix, got shape {P.shape}")
    n = P.shape[0]
    row_max = P.max(axis=1)
    col_max = P.max(axis=0)
    if np.any(row_max == 0.0) or np.any(col_max == 0.0):
        raise CorssError("matrix has a zero row or column", code=ErrorCode.DEGENERATE_MATRIX)
    if n == 1:
        return 0.0
    rows = np.mean(P.sum(axis=1) / row_max - 1.0) / (n - 1)
    cols = np.mean(P.sum(axis=0) / col_max - 1.0) / (n - 1)
    return float(0.5 * (rows + cols))


def select_matched_rows(G: FloatArray) -> FloatArray:
    """
    Square sub-matrix of a tall G (n_out >= n_src): for each source column the
    output row that carries it most exclusively, rows ordered by source.
    """
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] < G.shape[1]:
        raise ShapeError(f"need n_out >= n_src, got shape {G.shape}")
    if G.shape[0] == G.shape[1]:
        return G
    norms = np.linalg.norm(G, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    rows, cols = linear_sum_assignment(np.abs(G) / norms, maximize=True)
    order = np.argsort(cols)
    return G[rows[order]]


def global_amari(W: FloatArray, M: FloatArray, A: FloatArray) -> float:
    """Amari index of W M A, reduced to the matched rows when A is tall."""
    return amari_index(select_matched_rows(W @ M @ A))


# ============================================================================
# LATENCY
# ============================================================================


class LatencyReport(BaseModel):
    """Per-block compute-time statistics for one block size."""

    block_size: int = Field(..., ge=1)
    n_blocks: int = Field(..., ge=1)
    mean_s: float
    std_s: float
    max_s: float
    realtime_ratio: float = Field(..., description="mean processing time / block duration")


def latency_stats(
    timings_s: Sequence[float], block_size: int, sample_rate: float
) -> LatencyReport:
    """
    Summarise per-block timings.

    Raises:
        CorssError: ``empty-input`` for no timings.
    """
    t = np.asarray(timings_s, dtype=np.float64)
    if t.size == 0:
        raise CorssError("no block timings to summarise", code=ErrorCode.EMPTY_INPUT)
    mean = float(t.mean())
    return LatencyReport(
        block_size=block_size,
        n_blocks=int(t.size),
        mean_s=mean,
        std_s=float(t.std()),
        max_s=float(t.max()),
        realtime_ratio=mean / (block_size / sample_rate),
    )


def burn_in_samples(n_sources: int, k: int = 25) -> int:
    """Convergence transient to exclude from steady-state metrics: k * N^2 samples."""
    if n_sources < 1:
        raise MetricError("n_sources must be >= 1", code=ErrorCode.INVALID_ARGUMENT)
    return int(k * n_sources * n_sources)


__all__ = [
    "LatencyReport",
    "MatchResult",
    "SourceMatch",
    "amari_index",
    "assign_sources",
    "burn_in_samples",
    "count_matches",
    "fit_gain",
    "global_amari",
    "latency_stats",
    "matching_rate",
    "matching_rate_with_lag",
    "pearson_corr",
    "rmse_percent",
    "select_matched_rows",
]
