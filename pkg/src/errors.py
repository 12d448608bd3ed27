"""
Error codes and exception hierarchy for corss-stream.
Коды ошибок и иерархия исключений corss-stream.

Every documented failure carries a stable machine-readable code. The CLI renders
any CorssError as a one-line ErrorReport JSON object on stderr.
"""

from __future__ import annotations

from datetime import datetime, timezone
from enum import Enum
from typing import Any, Dict, Optional

from pydantic import BaseModel, ConfigDict, Field


class ErrorCode(str, Enum):
    """Standard error codes."""

    # Configuration & arguments
    INVALID_CHANNEL_COUNT = "invalid-channel-count"
    SCHEDULE_OUT_OF_RANGE = "schedule-out-of-range"
    INVALID_NONLINEARITY = "invalid-nonlinearity"
    INVALID_SPEC = "invalid-spec"
    INVALID_CONFIG = "invalid-config"
    INVALID_ARGUMENT = "invalid-argument"

    # Data
    NON_FINITE_SAMPLE = "non-finite-sample"
    SHAPE_ERROR = "shape-error"
    EMPTY_INPUT = "empty-input"
    STREAM_CORRUPT = "stream-corrupt"
    INVALID_SIGNAL_FILE = "invalid-signal-file"
    RATE_MISMATCH = "rate-mismatch"

    # Numerics
    SINGULAR_UPDATE = "singular-update"
    DEGENERATE_BLOCK = "degenerate-block"
    DIVERGENCE = "divergence"

    # Metrics
    UNDEFINED_NORMALIZATION = "undefined-normalization"
    UNDEFINED_CORRELATION = "undefined-correlation"
    DEGENERATE_MATRIX = "degenerate-matrix"
    UNAVAILABLE_METRIC = "unavailable-metric"


_TITLES: Dict[ErrorCode, str] = {
    ErrorCode.INVALID_CHANNEL_COUNT: "Invalid Channel Count",
    ErrorCode.SCHEDULE_OUT_OF_RANGE: "Forgetting Schedule Out Of Range",
    ErrorCode.INVALID_NONLINEARITY: "Invalid Nonlinearity",
    ErrorCode.INVALID_SPEC: "Invalid Synthesis Spec",
    ErrorCode.INVALID_CONFIG: "Invalid Configuration",
    ErrorCode.INVALID_ARGUMENT: "Invalid Argument",
    ErrorCode.NON_FINITE_SAMPLE: "Non-finite Sample",
    ErrorCode.SHAPE_ERROR: "Shape Error",
    ErrorCode.EMPTY_INPUT: "Empty Input",
    ErrorCode.STREAM_CORRUPT: "Stream Corrupt",
    ErrorCode.INVALID_SIGNAL_FILE: "Invalid Signal File",
    ErrorCode.RATE_MISMATCH: "Sample Rate Mismatch",
    ErrorCode.SINGULAR_UPDATE: "Singular Update",
    ErrorCode.DEGENERATE_BLOCK: "Degenerate Block",
    ErrorCode.DIVERGENCE: "Divergence",
    ErrorCode.UNDEFINED_NORMALIZATION: "Undefined Normalization",
    ErrorCode.UNDEFINED_CORRELATION: "Undefined Correlation",
    ErrorCode.DEGENERATE_MATRIX: "Degenerate Matrix",
    ErrorCode.UNAVAILABLE_METRIC: "Unavailable Metric",
}


# ============================================================================
# EXCEPTIONS
# ============================================================================


class CorssError(Exception):
    """Base error. Carries a stable code and structured context."""

    default_code: ErrorCode = ErrorCode.INVALID_ARGUMENT

    def __init__(
        self,
        message: str,
        code: Optional[ErrorCode] = None,
        **context: Any,
    ) -> None:
        super().__init__(message)
        self.message = message
        self.code = code or self.default_code
        self.context = context

    def __str__(self) -> str:
        return f"[{self.code.value}] {self.message}"


class ConfigurationError(CorssError):
    default_code = ErrorCode.INVALID_CONFIG


class ShapeError(CorssError):
    default_code = ErrorCode.SHAPE_ERROR


class NonFiniteSampleError(CorssError):
    default_code = ErrorCode.NON_FINITE_SAMPLE


class ScheduleError(CorssError):
    default_code = ErrorCode.SCHEDULE_OUT_OF_RANGE


class DivergenceError(CorssError):
    """Raised when M or W leaves the finite/bounded region.

    The pipeline re-raises it with ``block_index`` added to the context.
    """

    default_code = ErrorCode.DIVERGENCE


class MetricError(CorssError):
    default_code = ErrorCode.UNAVAILABLE_METRIC


class SpecError(CorssError):
    default_code = ErrorCode.INVALID_SPEC


class StreamCorruptError(CorssError):
    default_code = ErrorCode.STREAM_CORRUPT


class SignalFileError(CorssError):
    default_code = ErrorCode.INVALID_SIGNAL_FILE


# ============================================================================
# MACHINE-READABLE REPORT
# ============================================================================


class ErrorReport(BaseModel):
    """One-line machine-parseable error record written by the CLI."""

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "code": "divergence",
                "title": "Divergence",
                "detail": "unmixing matrix diverged (max |W| = 3.1e+06)",
                "context": {"block_index": 41},
                "timestamp": "2026-03-02T12:34:56.789000+00:00",
            }
        },
    )

    code: str = Field(..., description="Stable error code")
    title: str = Field(..., description="Short human-readable summary")
    detail: Optional[str] = Field(None, description="Occurrence-specific explanation")
    context: Dict[str, Any] = Field(default_factory=dict)
    timestamp: str = Field(..., description="ISO 8601 timestamp")

    @classmethod
    def create(
        cls,
        error_code: ErrorCode,
        detail: Optional[str] = None,
        **context: Any,
    ) -> "ErrorReport":
        """
        Factory method to create ErrorReport.

        Args:
            error_code: Standard error code.
            detail: Detailed description.
            **context: Additional structured fields.

        Returns:
            ErrorReport instance.
        """
        return cls(
            code=error_code.value,
            title=_TITLES.get(error_code, error_code.value),
            detail=detail,
            context={k: _jsonable(v) for k, v in context.items()},
            timestamp=datetime.now(timezone.utc).isoformat(),
        )

    @classmethod
    def from_exception(cls, exc: CorssError) -> "ErrorReport":
        return cls.create(exc.code, exc.message, **exc.context)

    def to_line(self) -> str:
        return self.model_dump_json()


def _jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if hasattr(value, "item"):
        try:
            return value.item()
        except ValueError:
            pass
    return str(value)


__all__ = [
    "ConfigurationError",
    "CorssError",
    "DivergenceError",
    "ErrorCode",
    "ErrorReport",
    "MetricError",
    "NonFiniteSampleError",
    "ScheduleError",
    "ShapeError",
    "SignalFileError",
    "SpecError",
    "StreamCorruptError",
]
