"""
Identification: separated sources -> task outputs.

Decomposition task: pulse-like sources become motor-unit spike trains.
Monitoring task: the respiratory source becomes an RMS envelope plus
breathing triggers.
"""

from __future__ import annotations

import math
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.signal import find_peaks, periodogram
from scipy.stats import kurtosis

from src.core.metrics import matching_rate
from src.core.signals import (
    Envelope,
    FloatArray,
    SpikeTrain,
    TriggerTrain,
    envelope_length,
    ms_to_samples,
)
from src.errors import CorssError, ErrorCode, ShapeError
from src.observability.structured_logging import get_logger

logger = get_logger(__name__)

# MAD of a Gaussian is 0.6745 sigma
MAD_TO_SIGMA = 0.6745


class IdentificationConfig(BaseModel):
    """Parameters of the identification stage."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    # decomposition
    k_sigma: float = Field(default=4.0, gt=0)
    refractory_ms: float = Field(default=20.0, gt=0)
    min_kurtosis: float = 5.0
    min_spikes: int = Field(default=10, ge=0)
    duplicate_mr: float = Field(default=0.9, ge=0, le=1)
    tolerance_ms: float = Field(default=0.5, ge=0)
    # monitoring
    window_ms: float = Field(default=250.0, gt=0)
    hop_ms: float = Field(default=50.0, gt=0)
    onset_fraction: float = Field(default=0.3, gt=0, lt=1)
    min_interval_ms: float = Field(default=1000.0, ge=0)
    respiratory_band_hz: Tuple[float, float] = (0.1, 0.5)


def _as_series(source: FloatArray) -> FloatArray:
    x = np.asarray(source, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"source must be 1-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise CorssError("source contains non-finite values", code=ErrorCode.NON_FINITE_SAMPLE)
    return x


# ============================================================================
# DECOMPOSITION TASK
# ============================================================================


def detect_spikes(
    source: FloatArray,
    sample_rate: float,
    k_sigma: float = 4.0,
    refractory_ms: float = 20.0,
    source_id: int = 0,
) -> SpikeTrain:
    """
    Detect discharges in one separated source.

    The noise level is sigma = MAD(x) / 0.6745 on the raw source, and the energy
    e = (x - median x)^2 is thresholded at (k_sigma * sigma)^2. Peaks strictly
    above it survive; within any refractory window only the larger peak is kept.

    Returns:
        SpikeTrain (empty for an all-zero source).
    """
    if k_sigma <= 0 or refractory_ms <= 0:
        raise CorssError(
            "k_sigma and refractory_ms must be positive",
            code=ErrorCode.INVALID_ARGUMENT,
            k_sigma=k_sigma,
            refractory_ms=refractory_ms,
        )
    x = _as_series(source)
    if x.size < 3:
        return SpikeTrain(source_id, np.zeros(0, dtype=np.int64), sample_rate)

    centred = x - np.median(x)
    sigma = float(np.median(np.abs(centred))) / MAD_TO_SIGMA
    energy = centred * centred
    threshold = (k_sigma * sigma) ** 2

    distance = ms_to_samples(refractory_ms, sample_rate)
    peaks, _ = find_peaks(energy, height=threshold, distance=distance)
    peaks = peaks[energy[peaks] > threshold]
    return SpikeTrain(source_id, peaks.astype(np.int64), sample_rate)


def select_pulse_sources(
    y_sources: FloatArray,
    sample_rate: float,
    min_kurtosis: float = 5.0,
    min_spikes: int = 10,
    k_sigma: float = 4.0,
    refractory_ms: float = 20.0,
    duplicate_mr: float = 0.9,
    tolerance_ms: float = 0.5,
) -> List[int]:
    """
    Indices of pulse-train sources, ascending.

    A source qualifies with excess kurtosis >= ``min_kurtosis`` and at least
    ``min_spikes`` detected spikes. Sources whose trains match a qualifying
    source of higher kurtosis with MR >= ``duplicate_mr`` are dropped.
    """
    y = np.atleast_2d(np.asarray(y_sources, dtype=np.float64))
    candidates: List[Tuple[float, int, SpikeTrain]] = []
    for idx in range(y.shape[0]):
        row = y[idx]
        if row.size < 4 or np.ptp(row) == 0.0:
            continue
        kurt = float(kurtosis(row, fisher=True, bias=True))
        if not math.isfinite(kurt) or kurt < min_kurtosis:
            continue
        train = detect_spikes(row, sample_rate, k_sigma, refractory_ms, source_id=idx)
        if len(train) < min_spikes:
            continue
        candidates.append((kurt, idx, train))

    # highest kurtosis first; ties keep the lower index
    candidates.sort(key=lambda c: (-c[0], c[1]))
    kept: List[Tuple[float, int, SpikeTrain]] = []
    for kurt, idx, train in candidates:
        duplicate_of = next(
            (
                k_idx
                for _, k_idx, k_train in kept
                if matching_rate(train, k_train, tolerance_ms).mr >= duplicate_mr
            ),
            None,
        )
        if duplicate_of is None:
            kept.append((kurt, idx, train))
        else:
            logger.debug("duplicate_source_dropped", source=idx, duplicate_of=duplicate_of)
    return sorted(idx for _, idx, _ in kept)


# ============================================================================
# MONITORING TASK
# ============================================================================


def compute_envelope(
    source: FloatArray,
    sample_rate: float,
    window_ms: float = 250.0,
    hop_ms: float = 50.0,
) -> Envelope:
    """
    Centred sliding-window RMS.

    Frame k is centred on sample k * hop and averages over the part of the
    window that lies inside the signal. A window at least as long as the signal
    yields a single value, the RMS of the whole signal.
    """
    if not window_ms >= hop_ms > 0:
        raise CorssError(
            f"need window_ms >= hop_ms > 0, got window_ms={window_ms}, hop_ms={hop_ms}",
            code=ErrorCode.INVALID_ARGUMENT,
        )
    x = _as_series(source)
    n = x.size
    env = Envelope(np.zeros(0), window_ms, hop_ms, sample_rate)
    if n == 0:
        return env
    win = ms_to_samples(window_ms, sample_rate)
    if win >= n:
        env.values = np.array([math.sqrt(float(np.mean(x * x)))])
        return env

    hop = env.hop_samples
    centres = np.arange(envelope_length(n, hop), dtype=np.int64) * hop
    start = centres - win // 2
    lo = np.clip(start, 0, n)
    hi = np.clip(start + win, 0, n)
    power = np.concatenate(([0.0], np.cumsum(x * x)))
    mean_sq = (power[hi] - power[lo]) / (hi - lo)
    env.values = np.sqrt(np.maximum(mean_sq, 0.0))
    return env


def detect_triggers(
    env: Envelope,
    onset_fraction: float = 0.3,
    min_interval_ms: float = 1000.0,
) -> TriggerTrain:
    """
    Breathing triggers from an envelope.

    Upward crossings of onset_fraction * P95(env), thinned so that consecutive
    triggers are at least ``min_interval_ms`` apart. Onsets are reported in
    source samples (frame centres).
    """
    if not 0.0 < onset_fraction < 1.0:
        raise CorssError(
            f"onset_fraction must lie in (0, 1), got {onset_fraction}",
            code=ErrorCode.INVALID_ARGUMENT,
        )
    empty = TriggerTrain(np.zeros(0, dtype=np.int64), env.sample_rate, min_interval_ms)
    values = env.values
    if values.size < 2 or float(np.ptp(values)) == 0.0:
        return empty
    threshold = onset_fraction * float(np.percentile(values, 95))
    if threshold <= 0.0:
        return empty

    rising = np.flatnonzero((values[:-1] < threshold) & (values[1:] >= threshold)) + 1
    onsets = rising * env.hop_samples
    gap = ms_to_samples(min_interval_ms, env.sample_rate)
    kept: List[int] = []
    for onset in onsets.tolist():
        if not kept or onset - kept[-1] >= gap:
            kept.append(onset)
    return TriggerTrain(np.asarray(kept, dtype=np.int64), env.sample_rate, min_interval_ms)


def respiratory_band_fraction(
    env: Envelope, band_hz: Tuple[float, float] = (0.1, 0.5)
) -> float:
    """Share of the (mean-removed) envelope power inside ``band_hz``."""
    if len(env) < 4:
        return 0.0
    freqs, pxx = periodogram(env.values - env.values.mean(), fs=env.rate_hz)
    total = float(pxx[1:].sum())
    if total <= 0.0:
        return 0.0
    in_band = (freqs >= band_hz[0]) & (freqs <= band_hz[1])
    return float(pxx[in_band].sum()) / total


def select_envelope_source(
    y_sources: FloatArray,
    sample_rate: float,
    band_hz: Tuple[float, float] = (0.1, 0.5),
    window_ms: float = 250.0,
    hop_ms: float = 50.0,
) -> int:
    """Index of the source whose envelope is most strongly respiratory-modulated."""
    y = np.atleast_2d(np.asarray(y_sources, dtype=np.float64))
    if y.shape[0] == 0:
        raise CorssError("no sources to choose from", code=ErrorCode.EMPTY_INPUT)
    scores = [
        respiratory_band_fraction(compute_envelope(row, sample_rate, window_ms, hop_ms), band_hz)
        for row in y
    ]
    best = int(np.argmax(scores))
    logger.debug("envelope_source_selected", source=best, band_fraction=scores[best])
    return best


def spike_trains_for(
    y_sources: FloatArray,
    indices: Sequence[int],
    sample_rate: float,
    k_sigma: float = 4.0,
    refractory_ms: float = 20.0,
) -> List[SpikeTrain]:
    """Spike trains of the selected rows, in the order of ``indices``."""
    y = np.atleast_2d(np.asarray(y_sources, dtype=np.float64))
    return [
        detect_spikes(y[i], sample_rate, k_sigma, refractory_ms, source_id=int(i))
        for i in indices
    ]


__all__ = [
    "IdentificationConfig",
    "compute_envelope",
    "detect_spikes",
    "detect_triggers",
    "respiratory_band_fraction",
    "select_envelope_source",
    "select_pulse_sources",
    "spike_trains_for",
]
