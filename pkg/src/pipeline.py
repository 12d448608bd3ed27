"""
Streaming pipeline: block ingestion -> (optional filtering) -> online whitening
-> unmixing update -> identification.

One :class:`CorssPipeline` owns one stream and its states. Blocks must arrive
in order; only the compute stages are timed.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.core.identify import (
    IdentificationConfig,
    compute_envelope,
    detect_triggers,
    select_envelope_source,
    select_pulse_sources,
    spike_trains_for,
)
from src.core.metrics import (
    LatencyReport,
    amari_index,
    fit_gain,
    latency_stats,
    pearson_corr,
    rmse_percent,
    select_matched_rows,
)
from src.core.preprocess import PreprocessConfig, StreamingFilter
from src.core.schedule import ForgettingSchedule
from src.core.separate import (
    NonlinearityConfig,
    SeparatorState,
    corss_block_update,
    orica_update,
    separator_init,
)
from src.core.signals import (
    Envelope,
    FloatArray,
    MultichannelBlock,
    SpikeTrain,
    TriggerTrain,
    iter_blocks,
    ms_to_samples,
)
from src.core.whiten import WhitenerState, whiten_block, whitener_init
from src.errors import CorssError, DivergenceError, ErrorCode, MetricError, StreamCorruptError
from src.observability.metrics import record_block
from src.observability.structured_logging import get_logger

logger = get_logger(__name__)

Algorithm = Literal["orica", "corss"]
TaskMode = Literal["decomposition", "monitoring", "none"]

CHECKPOINT_SECONDS = 5.0

# the baseline update needs f(y) = -tanh(y) to converge on super-Gaussian sources
ORICA_NONLINEARITY = NonlinearityConfig(kind="constrained-sigmoid", a0=1.0, a1=2.0)

# whitening memory must span several breaths (0.1-0.5 Hz envelope modulation)
MONITORING_WHITEN_SCHEDULE = ForgettingSchedule(lambda0=0.5, gamma=1.0, lambda_min=1e-5)


def default_whiten_schedule(task: str) -> ForgettingSchedule:
    """Whitening schedule used when a config leaves ``whiten_schedule`` unset."""
    return MONITORING_WHITEN_SCHEDULE if task == "monitoring" else ForgettingSchedule()


class PipelineConfig(BaseModel):
    """
    Everything that determines a run (apart from the input itself).

    ``share_schedule`` makes the separation update use ``whiten_schedule``.
    ``checkpoint_every_blocks`` defaults to roughly 5 s of signal; checkpoints
    identify over the trailing ``checkpoint_window_s`` (None: the whole stream),
    the final identification always covers the whole stream.
    Monitoring runs default to a long-memory whitening schedule.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    block_size: int = Field(default=200, ge=1)
    algorithm: Algorithm = "corss"
    whiten_schedule: ForgettingSchedule = Field(default_factory=ForgettingSchedule)
    separate_schedule: ForgettingSchedule = Field(default_factory=ForgettingSchedule)
    share_schedule: bool = False
    nonlinearity: NonlinearityConfig = Field(default_factory=NonlinearityConfig)
    renormalize: bool = True
    orthonormalize: bool = True
    center: bool = True
    task: TaskMode = "decomposition"
    checkpoint_every_blocks: Optional[int] = Field(default=None, ge=1)
    checkpoint_window_s: Optional[float] = Field(default=60.0, gt=0)
    identification: IdentificationConfig = Field(default_factory=IdentificationConfig)
    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)
    keep_unmixing: bool = True

    @model_validator(mode="before")
    @classmethod
    def _task_defaults(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("task") == "monitoring":
            data = {"whiten_schedule": MONITORING_WHITEN_SCHEDULE, **data}
        return data

    @model_validator(mode="after")
    def _check_ranges(self) -> "PipelineConfig":
        try:
            self.whiten_schedule.check()
            self.separate_schedule.check()
            self.nonlinearity.check()
        except CorssError as exc:
            raise ValueError(exc.message) from exc
        return self

    @classmethod
    def for_algorithm(cls, algorithm: Algorithm, **overrides: object) -> "PipelineConfig":
        """Defaults per algorithm: the ORICA baseline runs with f(y) = -tanh(y)."""
        if algorithm == "orica" and "nonlinearity" not in overrides:
            overrides["nonlinearity"] = ORICA_NONLINEARITY
        return cls(algorithm=algorithm, **overrides)  # type: ignore[arg-type]

    @property
    def effective_separate_schedule(self) -> ForgettingSchedule:
        return self.whiten_schedule if self.share_schedule else self.separate_schedule

    def checkpoint_blocks(self, sample_rate: float) -> int:
        if self.checkpoint_every_blocks is not None:
            return self.checkpoint_every_blocks
        return max(1, int(math.ceil(CHECKPOINT_SECONDS * sample_rate / self.block_size)))


@dataclass
class BlockOutput:
    """Result of one block: separated samples plus diagnostics."""

    block_index: int
    sources: MultichannelBlock
    elapsed_s: float
    skipped_samples: int
    row_norms: FloatArray
    unmixing: Optional[FloatArray] = None

    @property
    def start_sample(self) -> int:
        return self.sources.start_sample

    @property
    def end_sample(self) -> int:
        return self.sources.end_sample


@dataclass
class TaskOutput:
    """
    Identification result for the configured task.

    Spike and trigger indices are absolute stream samples; envelope frames
    start at ``start_sample``.
    """

    task: TaskMode
    selected: List[int] = field(default_factory=list)
    spike_trains: List[SpikeTrain] = field(default_factory=list)
    envelope: Optional[Envelope] = None
    triggers: Optional[TriggerTrain] = None
    start_sample: int = 0

    def summary(self) -> dict:
        out: dict = {"task": self.task, "selected": list(self.selected)}
        if self.start_sample:
            out["start_sample"] = self.start_sample
        if self.task == "decomposition":
            out["spike_counts"] = [len(t) for t in self.spike_trains]
        if self.triggers is not None:
            out["trigger_count"] = len(self.triggers)
        return out


@dataclass
class Checkpoint:
    block_index: int
    sample_end: int
    task_output: Optional[TaskOutput]


@dataclass
class StreamResult:
    outputs: List[BlockOutput]
    whitener: Optional[WhitenerState]
    separator: Optional[SeparatorState]
    task_output: Optional[TaskOutput]
    checkpoints: List[Checkpoint]
    sample_rate: Optional[float] = None

    @property
    def n_samples(self) -> int:
        return self.outputs[-1].end_sample if self.outputs else 0

    def sources(self) -> FloatArray:
        if not self.outputs:
            return np.zeros((0, 0))
        return np.hstack([o.sources.data for o in self.outputs])

    def latency(self, block_size: int, warmup_blocks: int = 0) -> LatencyReport:
        """Latency over full-size blocks after ``warmup_blocks``."""
        timings = [
            o.elapsed_s
            for o in self.outputs[warmup_blocks:]
            if o.sources.length == block_size
        ]
        return latency_stats(timings, block_size, self.sample_rate or 1.0)


# ============================================================================
# PIPELINE
# ============================================================================


class CorssPipeline:
    """
    Single-stream pipeline.

    Usage:
        pipe = CorssPipeline(config)
        for block in blocks:
            out = pipe.process_block(block)
        result = pipe.finalize()
    """

    def __init__(self, config: PipelineConfig, n_channels: Optional[int] = None):
        self.config = config
        self.whitener: Optional[WhitenerState] = None
        self.separator: Optional[SeparatorState] = None
        self.filter: Optional[StreamingFilter] = None
        self.sample_rate: Optional[float] = None
        self.checkpoints: List[Checkpoint] = []
        self.outputs: List[BlockOutput] = []
        self._next_index = 0
        self._next_sample = 0
        self._partial_seen = False
        if n_channels is not None:
            self._init_states(n_channels)

    @property
    def n_channels(self) -> Optional[int]:
        return None if self.whitener is None else self.whitener.n_channels

    def _init_states(self, n_channels: int) -> None:
        cfg = self.config
        self.whitener = whitener_init(n_channels, cfg.whiten_schedule, center=cfg.center)
        self.separator = separator_init(
            n_channels,
            cfg.effective_separate_schedule,
            cfg.nonlinearity,
            renormalize=cfg.renormalize,
            orthonormalize=cfg.orthonormalize,
        )

    def _check_block(self, block: MultichannelBlock) -> None:
        idx = self._next_index
        if self.n_channels is not None and block.n_channels != self.n_channels:
            raise StreamCorruptError(
                f"block {idx} has {block.n_channels} channels, stream has {self.n_channels}",
                block_index=idx,
            )
        if self.sample_rate is not None and block.sample_rate != self.sample_rate:
            raise StreamCorruptError(
                f"block {idx} sample rate {block.sample_rate} != {self.sample_rate}",
                block_index=idx,
            )
        if block.length < 1 or block.length > self.config.block_size:
            raise StreamCorruptError(
                f"block {idx} has {block.length} samples, block size is {self.config.block_size}",
                block_index=idx,
            )
        if self._partial_seen:
            raise StreamCorruptError(
                f"block {idx} follows a partial block", block_index=idx
            )

    def process_block(self, block: MultichannelBlock) -> BlockOutput:
        """
        Whiten, separate and time one block.

        Raises:
            StreamCorruptError: channel count, sample rate or block size changed.
            DivergenceError: a state diverged (context carries ``block_index``).
        """
        self._check_block(block)
        idx = self._next_index
        if self.whitener is None:
            self._init_states(block.n_channels)
        if self.sample_rate is None:
            self.sample_rate = block.sample_rate
            if self.config.preprocess.enabled:
                self.filter = StreamingFilter(
                    self.config.preprocess, block.n_channels, block.sample_rate
                )
        assert self.whitener is not None and self.separator is not None

        # renumber so timing stays continuous even if the caller restarts at 0
        block = MultichannelBlock(block.data, block.sample_rate, self._next_sample)
        skipped_before = self.separator.skipped_samples

        started = time.perf_counter()
        try:
            if self.filter is not None:
                block = self.filter.process(block)
            v_block = whiten_block(self.whitener, block)
            if self.config.algorithm == "corss":
                y_block = corss_block_update(self.separator, v_block)
            else:
                y = np.empty_like(v_block.data)
                for j in range(v_block.length):
                    y[:, j] = orica_update(self.separator, v_block.data[:, j])
                y_block = v_block.with_data(y)
        except DivergenceError as exc:
            exc.context["block_index"] = idx
            logger.error("stream_diverged", **exc.context)
            raise
        elapsed = max(time.perf_counter() - started, 1e-9)

        skipped = self.separator.skipped_samples - skipped_before
        unmixing = (
            self.separator.W @ self.whitener.M if self.config.keep_unmixing else None
        )
        out = BlockOutput(
            block_index=idx,
            sources=y_block,
            elapsed_s=elapsed,
            skipped_samples=skipped,
            row_norms=self.separator.last_row_norms.copy(),
            unmixing=unmixing,
        )
        record_block(
            self.config.algorithm, block.length, elapsed, block.duration_s, skipped=skipped
        )
        if skipped:
            logger.info("samples_skipped", block_index=idx, skipped=skipped)
        logger.debug(
            "block_processed",
            block_index=idx,
            start_sample=block.start_sample,
            length=block.length,
            elapsed_s=elapsed,
        )

        self.outputs.append(out)
        self._next_index += 1
        self._next_sample = block.end_sample
        if block.length < self.config.block_size:
            self._partial_seen = True

        every = self.config.checkpoint_blocks(block.sample_rate)
        if self.config.task != "none" and self._next_index % every == 0:
            window_s = self.config.checkpoint_window_s
            window = (
                None if window_s is None else ms_to_samples(1000.0 * window_s, block.sample_rate)
            )
            task_output = self.identify(window)
            self.checkpoints.append(Checkpoint(idx, block.end_sample, task_output))
            logger.info(
                "checkpoint_identified",
                block_index=idx,
                sample_end=block.end_sample,
                **(task_output.summary() if task_output else {}),
            )
        return out

    def accumulated_sources(self, window_samples: Optional[int] = None) -> FloatArray:
        """Separated sources so far, or only the trailing ``window_samples`` of them."""
        chunks: List[FloatArray] = []
        total = 0
        for out in reversed(self.outputs):
            if window_samples is not None and total >= window_samples:
                break
            chunks.append(out.sources.data)
            total += out.sources.length
        if not chunks:
            return np.zeros((self.n_channels or 0, 0))
        y = np.hstack(chunks[::-1])
        return y if window_samples is None else y[:, -window_samples:]

    def identify(self, window_samples: Optional[int] = None) -> Optional[TaskOutput]:
        """Run the task's identification over the sources so far (or a trailing window)."""
        task = self.config.task
        if task == "none" or not self.outputs or self.sample_rate is None:
            return None
        y = self.accumulated_sources(window_samples)
        start = self._next_sample - y.shape[1]
        ident = self.config.identification
        fs = self.sample_rate
        if task == "decomposition":
            selected = select_pulse_sources(
                y,
                fs,
                min_kurtosis=ident.min_kurtosis,
                min_spikes=ident.min_spikes,
                k_sigma=ident.k_sigma,
                refractory_ms=ident.refractory_ms,
                duplicate_mr=ident.duplicate_mr,
                tolerance_ms=ident.tolerance_ms,
            )
            trains = [
                SpikeTrain(t.source_id, t.spike_samples + start, fs)
                for t in spike_trains_for(y, selected, fs, ident.k_sigma, ident.refractory_ms)
            ]
            return TaskOutput(task=task, selected=selected, spike_trains=trains, start_sample=start)

        best = select_envelope_source(
            y, fs, ident.respiratory_band_hz, ident.window_ms, ident.hop_ms
        )
        env = compute_envelope(y[best], fs, ident.window_ms, ident.hop_ms)
        triggers = detect_triggers(env, ident.onset_fraction, ident.min_interval_ms)
        if start:
            triggers = TriggerTrain(
                triggers.onset_samples + start, triggers.sample_rate, triggers.min_interval_ms
            )
        return TaskOutput(
            task=task, selected=[best], envelope=env, triggers=triggers, start_sample=start
        )

    def finalize(self) -> StreamResult:
        task_output = self.identify()
        logger.info(
            "stream_finished",
            blocks=len(self.outputs),
            samples=self._next_sample,
            skipped_samples=0 if self.separator is None else self.separator.skipped_samples,
            degenerate_blocks=0 if self.separator is None else self.separator.degenerate_blocks,
        )
        return StreamResult(
            outputs=self.outputs,
            whitener=self.whitener,
            separator=self.separator,
            task_output=task_output,
            checkpoints=self.checkpoints,
            sample_rate=self.sample_rate,
        )


def run_stream(
    config: PipelineConfig,
    blocks: Iterable[MultichannelBlock],
    sink: Optional[Callable[[BlockOutput], None]] = None,
    n_channels: Optional[int] = None,
) -> StreamResult:
    """
    Push every block through a fresh pipeline.

    Args:
        config: Run configuration.
        blocks: Blocks in stream order; only the final one may be short.
        sink: Called with each BlockOutput as soon as it is produced.
        n_channels: Initialise the states up front (otherwise from the first block).
    """
    pipe = CorssPipeline(config, n_channels=n_channels)
    for block in blocks:
        out = pipe.process_block(block)
        if sink is not None:
            sink(out)
    return pipe.finalize()


def benchmark(
    data: FloatArray,
    sample_rate: float,
    block_sizes: Sequence[int],
    base_config: Optional[PipelineConfig] = None,
    warmup_blocks: int = 2,
) -> List[LatencyReport]:
    """
    Per-block latency for each block size, one fresh stream per size, run
    sequentially. Identification is disabled; warm-up blocks are not counted.
    """
    base = base_config or PipelineConfig()
    reports: List[LatencyReport] = []
    for size in block_sizes:
        config = base.model_copy(
            update={"block_size": int(size), "task": "none", "keep_unmixing": False}
        )
        result = run_stream(config, iter_blocks(data, int(size), sample_rate))
        n_full = np.asarray(data).shape[1] // int(size)
        report = result.latency(int(size), min(warmup_blocks, max(n_full - 1, 0)))
        logger.info(
            "benchmark_block_size",
            block_size=report.block_size,
            mean_s=report.mean_s,
            realtime_ratio=report.realtime_ratio,
        )
        reports.append(report)
    return reports


# ============================================================================
# CONVERGENCE TRACE
# ============================================================================


@dataclass(frozen=True)
class TracePoint:
    block_index: int
    sample_end: int
    amari: Optional[float] = None
    corr: Optional[float] = None
    rmse: Optional[float] = None


def envelope_agreement(
    source: FloatArray,
    gating: FloatArray,
    sample_rate: float,
    identification: IdentificationConfig,
) -> Tuple[float, float]:
    """
    (CORR, RMSE %) between the envelope of ``source`` and that of the true
    gating curve, after a least-squares gain alignment of the estimate.
    """
    est = compute_envelope(source, sample_rate, identification.window_ms, identification.hop_ms)
    ref = compute_envelope(gating, sample_rate, identification.window_ms, identification.hop_ms)
    corr = pearson_corr(est, ref)
    gain = fit_gain(est, ref)
    rmse = rmse_percent(gain * est.values, ref)
    return corr, rmse


def amari_trace(
    history: Sequence[Tuple[int, int, FloatArray]], mixing: FloatArray
) -> List[TracePoint]:
    """Amari index of each stored global unmixing matrix (block_index, sample_end, W M)."""
    A = np.asarray(mixing, dtype=np.float64)
    return [
        TracePoint(int(b), int(end), amari=amari_index(select_matched_rows(U @ A)))
        for b, end, U in history
    ]


def envelope_trace(
    sources: FloatArray,
    sample_rate: float,
    gating: FloatArray,
    marks: Sequence[Tuple[int, int]],
    identification: Optional[IdentificationConfig] = None,
    window_s: float = 10.0,
) -> List[TracePoint]:
    """
    Envelope CORR/RMSE over the trailing ``window_s`` seconds ending at each
    (block_index, sample_end) mark. Windows where a metric is undefined
    (e.g. no breath inside) give NaN.
    """
    ident = identification or IdentificationConfig()
    y_all = np.atleast_2d(np.asarray(sources, dtype=np.float64))
    ref_all = np.asarray(gating, dtype=np.float64)
    span = int(round(window_s * sample_rate))
    points: List[TracePoint] = []
    for block_index, end in marks:
        end = min(int(end), y_all.shape[1], ref_all.size)
        lo = max(0, end - span)
        try:
            y = y_all[:, lo:end]
            best = select_envelope_source(
                y, sample_rate, ident.respiratory_band_hz, ident.window_ms, ident.hop_ms
            )
            corr, rmse = envelope_agreement(y[best], ref_all[lo:end], sample_rate, ident)
        except CorssError as exc:
            logger.debug("trace_point_undefined", block_index=block_index, code=exc.code.value)
            corr, rmse = float("nan"), float("nan")
        points.append(TracePoint(int(block_index), end, corr=corr, rmse=rmse))
    return points


def convergence_trace(
    outputs: List[BlockOutput],
    truth: Optional[object],
    every_blocks: int,
    identification: Optional[IdentificationConfig] = None,
    window_s: float = 10.0,
) -> List[TracePoint]:
    """
    Separation quality at every ``every_blocks``-th block.

    With a gating curve in the truth (monitoring recordings) the trace holds
    envelope CORR and RMSE of the most respiratory source over the trailing
    ``window_s`` seconds; otherwise the Amari index of each block's global
    unmixing matrix against the true mixing.

    Raises:
        MetricError: ``unavailable-metric`` without truth, or without the
            stored unmixing matrices the Amari index needs.
    """
    if truth is None:
        raise MetricError("convergence trace needs ground truth", code=ErrorCode.UNAVAILABLE_METRIC)
    if every_blocks < 1:
        raise CorssError("every_blocks must be >= 1", code=ErrorCode.INVALID_ARGUMENT)
    gating = getattr(truth, "gating_curve", None)
    mixing = getattr(truth, "mixing", None)
    if gating is None and mixing is None:
        raise MetricError("truth carries neither a gating curve nor a mixing matrix")

    marked = outputs[every_blocks - 1 :: every_blocks]
    if not marked:
        return []
    if gating is not None:
        sources = np.hstack([o.sources.data for o in outputs])
        return envelope_trace(
            sources,
            outputs[0].sources.sample_rate,
            gating,
            [(o.block_index, o.end_sample) for o in marked],
            identification,
            window_s,
        )

    history = []
    for o in marked:
        if o.unmixing is None:
            raise MetricError(
                "run was made without keep_unmixing; Amari trace unavailable",
                block_index=o.block_index,
            )
        history.append((o.block_index, o.end_sample, o.unmixing))
    return amari_trace(history, np.asarray(mixing))


def write_trace_csv(points: List[TracePoint], path: Union[str, Path]) -> Path:
    """CSV with header ``block_index,sample_end,amari,corr,rmse``; empty cells for n/a."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)

    def cell(v: Optional[float]) -> str:
        return "" if v is None else repr(float(v))

    with open(p, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["block_index", "sample_end", "amari", "corr", "rmse"])
        for pt in points:
            writer.writerow(
                [pt.block_index, pt.sample_end, cell(pt.amari), cell(pt.corr), cell(pt.rmse)]
            )
    return p


__all__ = [
    "BlockOutput",
    "Checkpoint",
    "CorssPipeline",
    "PipelineConfig",
    "StreamResult",
    "TaskOutput",
    "TracePoint",
    "amari_trace",
    "benchmark",
    "convergence_trace",
    "envelope_agreement",
    "envelope_trace",
    "run_stream",
    "write_trace_csv",
]
