"""Causal band-pass / notch conditioning that carries filter state across blocks."""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import signal

from src.core.signals import FloatArray, MultichannelBlock
from src.errors import ConfigurationError, ShapeError


class PreprocessConfig(BaseModel):
    """
    Optional front-end filtering. Disabled unless a band or a notch is given.

    Attributes:
        bandpass_hz: (low, high) Butterworth pass band.
        notch_hz: Mains frequency to remove (with ``notch_harmonics`` multiples).
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    bandpass_hz: Optional[Tuple[float, float]] = None
    order: int = Field(default=4, ge=1, le=10)
    notch_hz: Optional[float] = Field(default=None, gt=0)
    notch_harmonics: int = Field(default=1, ge=1)
    notch_q: float = Field(default=30.0, gt=0)

    @property
    def enabled(self) -> bool:
        return self.bandpass_hz is not None or self.notch_hz is not None


def design_sos(config: PreprocessConfig, sample_rate: float) -> FloatArray:
    """Second-order sections for the configured chain (band-pass, then notches)."""
    nyquist = sample_rate / 2.0
    sections = []
    if config.bandpass_hz is not None:
        low, high = config.bandpass_hz
        if not 0.0 < low < high < nyquist:
            raise ConfigurationError(
                f"band-pass ({low}, {high}) Hz must satisfy 0 < low < high < {nyquist}",
                bandpass_hz=str(config.bandpass_hz),
            )
        sections.append(
            signal.butter(config.order, [low, high], btype="bandpass", fs=sample_rate, output="sos")
        )
    if config.notch_hz is not None:
        for k in range(1, config.notch_harmonics + 1):
            f0 = config.notch_hz * k
            if f0 >= nyquist:
                break
            b, a = signal.iirnotch(f0, config.notch_q, fs=sample_rate)
            sections.append(signal.tf2sos(b, a))
    if not sections:
        raise ConfigurationError("preprocessing requested with no band-pass or notch")
    return np.vstack(sections)


class StreamingFilter:
    """
    Per-channel causal IIR filter. Output depends only on the sample sequence,
    not on how it is cut into blocks.
    """

    def __init__(self, config: PreprocessConfig, n_channels: int, sample_rate: float):
        self.config = config
        self.n_channels = n_channels
        self.sample_rate = sample_rate
        self.sos = design_sos(config, sample_rate)
        self._zi = np.zeros((self.sos.shape[0], n_channels, 2))

    def reset(self) -> None:
        self._zi[:] = 0.0

    def process(self, block: MultichannelBlock) -> MultichannelBlock:
        if block.n_channels != self.n_channels:
            raise ShapeError(
                f"block has {block.n_channels} channels, filter expects {self.n_channels}"
            )
        out, self._zi = signal.sosfilt(self.sos, block.data, axis=1, zi=self._zi)
        return block.with_data(out)


__all__ = ["PreprocessConfig", "StreamingFilter", "design_sos"]
