"""
Prometheus metrics для corss-stream
Exported as text by `corss run` (metrics.prom) instead of an HTTP endpoint.
"""

from __future__ import annotations

from pathlib import Path
from typing import Union

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, generate_latest

# Private registry: one process can run several pipelines (bench, tests)
# without clashing with the global default registry.
REGISTRY = CollectorRegistry(auto_describe=True)


# ============================================================================
# МЕТРИКИ ПОТОКА
# ============================================================================

blocks_processed_total = Counter(
    "corss_blocks_processed_total",
    "Total number of blocks processed by the pipeline",
    ["algorithm"],
    registry=REGISTRY,
)

samples_processed_total = Counter(
    "corss_samples_processed_total",
    "Total number of multichannel samples processed",
    ["algorithm"],
    registry=REGISTRY,
)

skipped_samples_total = Counter(
    "corss_skipped_samples_total",
    "Samples excluded from an unmixing update (singular denominator)",
    ["algorithm"],
    registry=REGISTRY,
)

block_duration_seconds = Histogram(
    "corss_block_duration_seconds",
    "Compute time per block in seconds",
    ["algorithm"],
    buckets=(0.0001, 0.00025, 0.0005, 0.001, 0.0025, 0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 1.0),
    registry=REGISTRY,
)

realtime_ratio = Gauge(
    "corss_realtime_ratio",
    "Last block compute time divided by block duration",
    ["algorithm"],
    registry=REGISTRY,
)


# ============================================================================
# ХЕЛПЕРЫ
# ============================================================================


def record_block(
    algorithm: str,
    n_samples: int,
    elapsed_s: float,
    block_duration_s: float,
    skipped: int = 0,
) -> None:
    """Record one processed block."""
    blocks_processed_total.labels(algorithm=algorithm).inc()
    samples_processed_total.labels(algorithm=algorithm).inc(n_samples)
    if skipped:
        skipped_samples_total.labels(algorithm=algorithm).inc(skipped)
    block_duration_seconds.labels(algorithm=algorithm).observe(elapsed_s)
    if block_duration_s > 0:
        realtime_ratio.labels(algorithm=algorithm).set(elapsed_s / block_duration_s)


def export_metrics() -> bytes:
    """Prometheus text exposition of the stream registry."""
    return generate_latest(REGISTRY)


def write_metrics(path: Union[str, Path]) -> Path:
    target = Path(path)
    target.write_bytes(export_metrics())
    return target
