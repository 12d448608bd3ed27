"""
Структурное логирование для corss-stream
Structured logging for corss-stream (stderr, so CLI stdout stays machine-readable)
"""

from __future__ import annotations

import logging
import logging.config
import sys
from datetime import datetime, timezone
from typing import Any, MutableMapping, Optional

import numpy as np
import structlog

from src import __version__

EventDict = MutableMapping[str, Any]


# ============================================================================
# PROCESSORS ДЛЯ STRUCTLOG
# ============================================================================


def add_timestamp(logger: Any, method_name: str, event_dict: EventDict) -> EventDict:
    """Добавление timestamp в ISO формате"""
    event_dict["timestamp"] = datetime.now(timezone.utc).isoformat()
    return event_dict


def add_service_context(logger: Any, method_name: str, event_dict: EventDict) -> EventDict:
    """Добавление контекста сервиса"""
    event_dict.setdefault("service", "corss-stream")
    event_dict.setdefault("version", __version__)
    return event_dict


def coerce_numpy(logger: Any, method_name: str, event_dict: EventDict) -> EventDict:
    """numpy scalars/arrays -> plain Python so JSONRenderer never chokes."""
    for key, value in list(event_dict.items()):
        if isinstance(value, np.generic):
            event_dict[key] = value.item()
        elif isinstance(value, np.ndarray):
            event_dict[key] = value.tolist() if value.size <= 16 else f"<ndarray {value.shape}>"
    return event_dict


# ============================================================================
# НАСТРОЙКА ЛОГИРОВАНИЯ
# ============================================================================


def setup_logging(level: str = "INFO", json_logs: bool = False) -> None:
    """
    Настройка структурного логирования

    Args:
        level: Уровень логирования (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        json_logs: Использовать JSON формат
    """
    log_level = getattr(logging, level.upper())

    processors: list[Any] = [
        structlog.contextvars.merge_contextvars,
        structlog.stdlib.filter_by_level,
        structlog.stdlib.add_logger_name,
        structlog.stdlib.add_log_level,
        add_timestamp,
        add_service_context,
        coerce_numpy,
        structlog.processors.StackInfoRenderer(),
        structlog.processors.format_exc_info,
    ]

    renderer: Any
    if json_logs:
        renderer = structlog.processors.JSONRenderer()
    else:
        renderer = structlog.dev.ConsoleRenderer(colors=False)

    structlog.configure(
        processors=[*processors, structlog.stdlib.ProcessorFormatter.wrap_for_formatter],
        wrapper_class=structlog.stdlib.BoundLogger,
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=False,
    )

    logging.config.dictConfig({
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "structured": {
                "()": structlog.stdlib.ProcessorFormatter,
                "processor": renderer,
                "foreign_pre_chain": [
                    p for p in processors if p is not structlog.stdlib.filter_by_level
                ],
            },
        },
        "handlers": {
            "default": {
                "level": log_level,
                "class": "logging.StreamHandler",
                "stream": sys.stderr,
                "formatter": "structured",
            },
        },
        "loggers": {
            "": {
                "handlers": ["default"],
                "level": log_level,
                "propagate": True,
            },
        },
    })


# ============================================================================
# ПОЛУЧЕНИЕ LOGGER
# ============================================================================


def get_logger(name: Optional[str] = None) -> Any:
    """
    Получить структурный logger

    Args:
        name: Имя логгера (обычно __name__)

    Returns:
        structlog.BoundLogger instance

    Usage:
        log = get_logger(__name__)
        log.info("block_processed", block_index=12, elapsed_ms=1.8)
    """
    return structlog.get_logger(name)


# ============================================================================
# CONTEXT MANAGER ДЛЯ ДОБАВЛЕНИЯ КОНТЕКСТА
# ============================================================================


class log_context:
    """
    Context manager для добавления контекста в логи

    Usage:
        with log_context(run_id="seed7", algorithm="corss"):
            log.info("stream_started")  # добавит run_id и algorithm
    """

    def __init__(self, **kwargs: Any) -> None:
        self.context = kwargs

    def __enter__(self) -> "log_context":
        structlog.contextvars.bind_contextvars(**self.context)
        return self

    def __exit__(self, exc_type: Any, exc_val: Any, exc_tb: Any) -> None:
        structlog.contextvars.unbind_contextvars(*self.context)
