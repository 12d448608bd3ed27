"""Forgetting-factor schedules for the recursive whitening and unmixing updates."""

from __future__ import annotations

from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict

from src.core.signals import FloatArray
from src.errors import ScheduleError


class ForgettingSchedule(BaseModel):
    """
    lambda_n as a function of the 1-based sample index n.

    ``constant``: lambda_n = lambda0.
    ``power-decay``: lambda_n = max(lambda0 / n**gamma, lambda_min).

    Range checks are done by :meth:`check` so that the operations consuming a
    schedule report ``schedule-out-of-range`` rather than a validation error.
    lambda0 = 0 is a frozen schedule (every update is a no-op).
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: Literal["constant", "power-decay"] = "power-decay"
    lambda0: float = 0.05
    gamma: float = 0.6
    lambda_min: float = 0.001

    @classmethod
    def constant(cls, value: float) -> "ForgettingSchedule":
        return cls(mode="constant", lambda0=value, gamma=0.0, lambda_min=min(value, 0.0))

    @classmethod
    def frozen(cls) -> "ForgettingSchedule":
        return cls.constant(0.0)

    def check(self) -> "ForgettingSchedule":
        """Raise ScheduleError unless 0 <= lambda_min <= lambda0 < 1 and gamma >= 0."""
        if not np.isfinite(self.lambda0) or not 0.0 <= self.lambda0 < 1.0:
            raise ScheduleError(
                f"lambda0 must lie in [0, 1), got {self.lambda0}", lambda0=self.lambda0
            )
        if not np.isfinite(self.gamma) or self.gamma < 0.0:
            raise ScheduleError(f"gamma must be >= 0, got {self.gamma}", gamma=self.gamma)
        if not 0.0 <= self.lambda_min <= self.lambda0:
            raise ScheduleError(
                f"lambda_min must lie in [0, lambda0={self.lambda0}], got {self.lambda_min}",
                lambda_min=self.lambda_min,
            )
        return self

    def value(self, n: int) -> float:
        if n < 1:
            raise ScheduleError(f"schedule index starts at 1, got {n}", n=n)
        if self.mode == "constant":
            return float(self.lambda0)
        return float(max(self.lambda0 / float(n) ** self.gamma, self.lambda_min))

    def values(self, start: int, count: int) -> FloatArray:
        """lambda_n for n = start, ..., start + count - 1."""
        if start < 1:
            raise ScheduleError(f"schedule index starts at 1, got {start}", n=start)
        if self.mode == "constant":
            return np.full(count, float(self.lambda0))
        n = np.arange(start, start + count, dtype=np.float64)
        return np.maximum(self.lambda0 / n**self.gamma, self.lambda_min)
