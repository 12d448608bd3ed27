"""
Configuration module for corss-stream.
Модуль конфигурации для corss-stream.

Process-level settings come from ``CORSS_*`` environment variables (and an
optional ``.env`` file). Pipeline parameters live in a JSON document that maps
one-to-one onto :class:`src.pipeline.PipelineConfig`.

Настройки процесса читаются из переменных окружения ``CORSS_*`` (и ``.env``).
Параметры конвейера хранятся в JSON-документе, соответствующем PipelineConfig.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import TYPE_CHECKING, Literal, Optional, Union

from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.errors import ConfigurationError

if TYPE_CHECKING:
    from src.pipeline import PipelineConfig


class Settings(BaseSettings):
    """
    Process settings.
    Настройки процесса.
    """

    model_config = SettingsConfigDict(
        env_prefix="CORSS_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "INFO"
    json_logs: bool = False
    default_block_size: int = Field(default=200, ge=1)
    default_algorithm: Literal["orica", "corss"] = "corss"
    seed: int = Field(default=0, ge=0)
    output_dir: Path = Path("runs")


_settings: Optional[Settings] = None


def get_settings() -> Settings:
    """
    Get global settings instance.
    Получить глобальный экземпляр настроек.
    """
    global _settings
    if _settings is None:
        _settings = Settings()
    return _settings


def reset_settings() -> None:
    """
    Reset global settings (re-read environment on next access).
    Сбросить глобальные настройки.
    """
    global _settings
    _settings = None


def load_pipeline_config(filepath: Union[str, Path]) -> "PipelineConfig":
    """
    Load a pipeline configuration from a JSON file.
    Загрузить конфигурацию конвейера из JSON-файла.

    Args:
        filepath: Path to configuration file.

    Returns:
        Validated PipelineConfig.

    Raises:
        ConfigurationError: If the file is missing, not JSON, or fails validation.
    """
    from src.pipeline import PipelineConfig

    path = Path(filepath)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}", path=str(path))
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"invalid JSON in config file: {e}", path=str(path))

    try:
        return PipelineConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigurationError(
            f"invalid pipeline config: {e.error_count()} error(s): {e.errors()[0]['msg']}",
            path=str(path),
        )


def save_pipeline_config(config: "PipelineConfig", filepath: Union[str, Path]) -> None:
    """
    Save a pipeline configuration to a JSON file.
    Сохранить конфигурацию конвейера в JSON-файл.
    """
    Path(filepath).write_text(config.model_dump_json(indent=2), encoding="utf-8")


__all__ = [
    "Settings",
    "get_settings",
    "load_pipeline_config",
    "reset_settings",
    "save_pipeline_config",
]
