"""
Signal containers shared by every stage of the stream.
Контейнеры сигналов, общие для всех стадий потока.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from numpy.typing import NDArray

from src.errors import ShapeError

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]


@dataclass
class MultichannelBlock:
    """
    A window of ``n_ch x L`` samples, the unit of streaming work.

    Attributes:
        data: Samples, shape (n_channels, length), float64.
        sample_rate: Hz.
        start_sample: Stream index of the first column.
    """

    data: FloatArray
    sample_rate: float
    start_sample: int = 0

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ShapeError(
                f"block data must be 2-D (n_ch, L), got shape {self.data.shape}",
                shape=str(self.data.shape),
            )
        if self.sample_rate <= 0:
            raise ShapeError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def n_channels(self) -> int:
        return int(self.data.shape[0])

    @property
    def length(self) -> int:
        return int(self.data.shape[1])

    @property
    def end_sample(self) -> int:
        return self.start_sample + self.length

    @property
    def duration_s(self) -> float:
        return self.length / self.sample_rate

    @property
    def timestamps(self) -> FloatArray:
        return (self.start_sample + np.arange(self.length)) / self.sample_rate

    def with_data(self, data: FloatArray) -> "MultichannelBlock":
        """Same timing, new samples (e.g. whitened or separated values)."""
        return MultichannelBlock(data, self.sample_rate, self.start_sample)


def iter_blocks(
    data: FloatArray,
    block_size: int,
    sample_rate: float,
    start_sample: int = 0,
) -> Iterator[MultichannelBlock]:
    """Cut ``data`` (n_ch, N) into contiguous non-overlapping blocks.

    The final block may be shorter than ``block_size``.
    """
    if block_size < 1:
        raise ShapeError(f"block_size must be >= 1, got {block_size}")
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ShapeError(f"data must be 2-D (n_ch, N), got shape {data.shape}")
    n = data.shape[1]
    for begin in range(0, n, block_size):
        yield MultichannelBlock(
            data[:, begin : begin + block_size], sample_rate, start_sample + begin
        )


@dataclass
class SpikeTrain:
    """Discharge times of one source, in samples."""

    source_id: int
    spike_samples: IntArray
    sample_rate: float

    def __post_init__(self) -> None:
        self.spike_samples = np.asarray(self.spike_samples, dtype=np.int64).reshape(-1)
        if self.spike_samples.size:
            if self.spike_samples[0] < 0:
                raise ShapeError("spike indices must be non-negative")
            if np.any(np.diff(self.spike_samples) <= 0):
                raise ShapeError("spike indices must be strictly increasing")

    def __len__(self) -> int:
        return int(self.spike_samples.size)

    @property
    def times_s(self) -> FloatArray:
        return self.spike_samples / self.sample_rate

    def shifted(self, offset: int) -> "SpikeTrain":
        return SpikeTrain(self.source_id, self.spike_samples + offset, self.sample_rate)


@dataclass
class Envelope:
    """
    Short-window RMS magnitude sampled every ``hop_ms``.

    Frame ``k`` is centred on source sample ``k * hop_samples``.
    """

    values: FloatArray
    window_ms: float
    hop_ms: float
    sample_rate: float

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def hop_samples(self) -> int:
        return max(1, int(round(self.hop_ms * self.sample_rate / 1000.0)))

    @property
    def rate_hz(self) -> float:
        return self.sample_rate / self.hop_samples

    def frame_samples(self) -> IntArray:
        return np.arange(len(self), dtype=np.int64) * self.hop_samples


@dataclass
class TriggerTrain:
    """Breathing-trigger onsets in source samples."""

    onset_samples: IntArray
    sample_rate: float
    min_interval_ms: float = field(default=0.0)

    def __post_init__(self) -> None:
        self.onset_samples = np.asarray(self.onset_samples, dtype=np.int64).reshape(-1)
        if np.any(np.diff(self.onset_samples) <= 0):
            raise ShapeError("trigger onsets must be strictly increasing")

    def __len__(self) -> int:
        return int(self.onset_samples.size)


def ms_to_samples(ms: float, sample_rate: float) -> int:
    """Milliseconds -> whole samples (rounded, at least 1 for positive input)."""
    if ms <= 0:
        return 0
    return max(1, int(round(ms * sample_rate / 1000.0)))


def envelope_length(n_samples: int, hop_samples: int) -> int:
    return int(math.ceil(n_samples / hop_samples)) if n_samples > 0 else 0


__all__ = [
    "Envelope",
    "FloatArray",
    "IntArray",
    "MultichannelBlock",
    "SpikeTrain",
    "TriggerTrain",
    "envelope_length",
    "iter_blocks",
    "ms_to_samples",
]
