"""
Unit tests for metrics and structured logging
Юнит-тесты для метрик и логирования
"""

import json

import numpy as np
import pytest
import structlog

from src.observability.metrics import REGISTRY, export_metrics, record_block, write_metrics
from src.observability.structured_logging import get_logger, log_context, setup_logging


def _sample(name: str, algorithm: str) -> float:
    return REGISTRY.get_sample_value(name, {"algorithm": algorithm}) or 0.0


@pytest.mark.unit
class TestMetricsUnit:
    def test_record_block_increments_counters(self):
        before_blocks = _sample("corss_blocks_processed_total", "unit-test")
        before_samples = _sample("corss_samples_processed_total", "unit-test")
        before_skipped = _sample("corss_skipped_samples_total", "unit-test")

        record_block("unit-test", 200, 0.002, 0.1, skipped=3)
        record_block("unit-test", 150, 0.001, 0.075)

        assert _sample("corss_blocks_processed_total", "unit-test") == before_blocks + 2
        assert _sample("corss_samples_processed_total", "unit-test") == before_samples + 350
        assert _sample("corss_skipped_samples_total", "unit-test") == before_skipped + 3
        assert _sample("corss_realtime_ratio", "unit-test") == pytest.approx(0.001 / 0.075)

    def test_export_contains_metric_names(self, tmp_path):
        record_block("unit-test", 10, 0.001, 0.01)
        text = export_metrics().decode()
        for name in (
            "corss_blocks_processed_total",
            "corss_samples_processed_total",
            "corss_block_duration_seconds_bucket",
            "corss_realtime_ratio",
        ):
            assert name in text
        path = write_metrics(tmp_path / "metrics.prom")
        assert path.read_bytes().startswith(b"# HELP")


@pytest.mark.unit
class TestLoggingUnit:
    def test_json_logs_go_to_stderr(self, capsys):
        setup_logging("INFO", json_logs=True)
        get_logger("corss.test").info(
            "block_processed", block_index=np.int64(4), norms=np.array([1.0, 2.0])
        )
        captured = capsys.readouterr()
        assert captured.out == ""
        record = json.loads(captured.err.strip().splitlines()[-1])
        assert record["event"] == "block_processed"
        assert record["block_index"] == 4
        assert record["norms"] == [1.0, 2.0]
        assert record["level"] == "info"
        assert record["service"] == "corss-stream"
        assert "timestamp" in record

    def test_level_filtering(self, capsys):
        setup_logging("WARNING", json_logs=True)
        get_logger("corss.test").info("hidden")
        get_logger("corss.test").warning("shown")
        err = capsys.readouterr().err
        assert "hidden" not in err
        assert "shown" in err

    def test_large_arrays_are_summarised(self, capsys):
        setup_logging("INFO", json_logs=True)
        get_logger("corss.test").info("big", data=np.zeros((4, 8)))
        record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert record["data"] == "<ndarray (4, 8)>"

    def test_log_context_binds_and_unbinds(self):
        with log_context(run_id="seed7", algorithm="corss"):
            bound = structlog.contextvars.get_contextvars()
            assert bound["run_id"] == "seed7"
            assert bound["algorithm"] == "corss"
        assert "run_id" not in structlog.contextvars.get_contextvars()
