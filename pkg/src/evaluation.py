"""
Scoring a completed run directory against generator truth or another run.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from src.core.identify import compute_envelope
from src.core.metrics import (
    amari_index,
    assign_sources,
    burn_in_samples,
    count_matches,
    fit_gain,
    pearson_corr,
    rmse_percent,
    select_matched_rows,
)
from src.core.signals import Envelope, SpikeTrain, TriggerTrain, ms_to_samples
from src.errors import CorssError, ErrorCode
from src.observability.structured_logging import get_logger
from src.pipeline import TracePoint, amari_trace, envelope_trace, write_trace_csv
from src.rundir import RunArtifacts, write_json_atomic
from src.synth import GroundTruth

logger = get_logger(__name__)

METRICS_JSON = "metrics.json"
TRACE_CSV = "trace.csv"


class PairScore(BaseModel):
    estimated: int
    truth: int
    mr: float
    n_common: int
    n_estimated: int
    n_truth: int
    lag_samples: int


class EvaluationReport(BaseModel):
    """Everything ``corss eval`` writes to metrics.json."""

    reference: str = Field(..., description="'truth' or the reference run directory")
    task: str
    sample_rate: float
    burn_in_samples: int = 0
    pairs: List[PairScore] = Field(default_factory=list)
    mean_mr: Optional[float] = None
    recovered: int = 0
    recovery_threshold: float = 0.9
    amari: Optional[float] = None
    corr: Optional[float] = None
    rmse_percent: Optional[float] = None
    trigger_sensitivity: Optional[float] = None
    trigger_precision: Optional[float] = None
    trace_points: int = 0


def _check_rates(a: float, b: float) -> None:
    if a != b:
        raise CorssError(
            f"sample rates differ: {a} vs {b}", code=ErrorCode.RATE_MISMATCH, rate_a=a, rate_b=b
        )


def _after(train: SpikeTrain, start: int) -> SpikeTrain:
    return SpikeTrain(train.source_id, train.spike_samples[train.spike_samples >= start], train.sample_rate)


def _score_trains(
    report: EvaluationReport,
    estimated: List[SpikeTrain],
    truth: List[SpikeTrain],
    tolerance_ms: float,
    max_lag_ms: float,
) -> None:
    matches = assign_sources(estimated, truth, tolerance_ms, max_lag_ms)
    report.pairs = [
        PairScore(
            estimated=estimated[m.estimated].source_id,
            truth=truth[m.truth].source_id,
            mr=m.result.mr,
            n_common=m.result.n_common,
            n_estimated=m.result.n_b,
            n_truth=m.result.n_a,
            lag_samples=m.lag,
        )
        for m in matches
    ]
    if report.pairs:
        report.mean_mr = float(np.mean([p.mr for p in report.pairs]))
    report.recovered = sum(p.mr >= report.recovery_threshold for p in report.pairs)


def _score_envelopes(report: EvaluationReport, est: Envelope, ref: Envelope, first_frame: int) -> None:
    n = min(len(est), len(ref))
    e, r = est.values[first_frame:n], ref.values[first_frame:n]
    try:
        report.corr = pearson_corr(e, r)
        report.rmse_percent = rmse_percent(fit_gain(e, r) * e, r)
    except CorssError as exc:
        logger.warning("envelope_metric_undefined", code=exc.code.value, detail=exc.message)


def _score_triggers(
    report: EvaluationReport, detected: TriggerTrain, truth: TriggerTrain, window_ms: float
) -> None:
    tol = ms_to_samples(window_ms, detected.sample_rate)
    matched = count_matches(truth.onset_samples, detected.onset_samples, tol)
    if len(truth):
        report.trigger_sensitivity = matched / len(truth)
    if len(detected):
        report.trigger_precision = matched / len(detected)


def evaluate_against_truth(
    run: RunArtifacts,
    truth: GroundTruth,
    tolerance_ms: float = 0.5,
    max_lag_ms: float = 5.0,
    burn_in_k: int = 25,
    trigger_window_ms: float = 300.0,
    trace_window_s: float = 10.0,
) -> Tuple[EvaluationReport, List[TracePoint]]:
    """
    Score a run against the generator truth. Spikes, envelope frames and
    trigger onsets inside the burn-in (k * n_ch^2 samples) are excluded.

    Raises:
        CorssError: ``rate-mismatch`` when the run and the truth disagree on the rate.
    """
    _check_rates(run.sample_rate, truth.sample_rate)
    fs = run.sample_rate
    n_ch = int(run.summary.get("n_channels") or 0)
    burn_in = burn_in_samples(n_ch, burn_in_k) if n_ch else 0
    report = EvaluationReport(
        reference="truth", task=run.config.task, sample_rate=fs, burn_in_samples=burn_in
    )

    if run.spike_trains is not None and truth.spike_trains:
        _score_trains(
            report,
            [_after(t, burn_in) for t in run.spike_trains],
            [_after(t, burn_in) for t in truth.spike_trains],
            tolerance_ms,
            max_lag_ms,
        )

    if run.unmixing is not None and run.unmixing.shape[1] == truth.mixing.shape[0]:
        try:
            report.amari = amari_index(select_matched_rows(run.unmixing @ truth.mixing))
        except CorssError as exc:
            logger.warning("amari_undefined", code=exc.code.value)

    trace: List[TracePoint] = []
    if truth.gating_curve is not None:
        ident = run.config.identification
        if run.envelope is not None:
            n = int(run.summary.get("n_samples") or truth.n_samples)
            ref = compute_envelope(truth.gating_curve[:n], fs, ident.window_ms, ident.hop_ms)
            first = int(math.ceil(burn_in / run.envelope.hop_samples))
            _score_envelopes(report, run.envelope, ref, first)
        if run.triggers is not None and truth.breath_onsets is not None:
            keep = truth.breath_onsets.onset_samples >= burn_in
            _score_triggers(
                report,
                TriggerTrain(run.triggers.onset_samples[run.triggers.onset_samples >= burn_in], fs),
                TriggerTrain(truth.breath_onsets.onset_samples[keep], fs),
                trigger_window_ms,
            )
        if run.history:
            marks = [(b, e) for b, e, _ in run.history]
            trace = envelope_trace(
                run.sources(), fs, truth.gating_curve, marks, ident, trace_window_s
            )
    elif run.history and run.history[0][2].shape[1] == truth.mixing.shape[0]:
        trace = amari_trace(run.history, truth.mixing)

    report.trace_points = len(trace)
    logger.info(
        "run_evaluated",
        reference="truth",
        mean_mr=report.mean_mr,
        recovered=report.recovered,
        corr=report.corr,
        amari=report.amari,
    )
    return report, trace


def evaluate_against_run(
    run: RunArtifacts,
    reference: RunArtifacts,
    tolerance_ms: float = 0.5,
    max_lag_ms: float = 5.0,
    trigger_window_ms: float = 300.0,
) -> EvaluationReport:
    """
    Score a run against another run's outputs (no burn-in, no trace).
    A run compared with itself scores MR = 1, RMSE = 0 and CORR = 1.
    """
    _check_rates(run.sample_rate, reference.sample_rate)
    report = EvaluationReport(
        reference=str(reference.run_dir), task=run.config.task, sample_rate=run.sample_rate
    )
    if run.spike_trains is not None and reference.spike_trains:
        _score_trains(report, run.spike_trains, reference.spike_trains, tolerance_ms, max_lag_ms)
    if run.envelope is not None and reference.envelope is not None:
        _score_envelopes(report, run.envelope, reference.envelope, 0)
    if run.triggers is not None and reference.triggers is not None:
        _score_triggers(report, run.triggers, reference.triggers, trigger_window_ms)
    logger.info("run_evaluated", reference=report.reference, mean_mr=report.mean_mr, corr=report.corr)
    return report


def write_evaluation(
    out_dir: Union[str, Path], report: EvaluationReport, trace: List[TracePoint]
) -> Path:
    """metrics.json (atomic) and trace.csv (header only when there is no trace)."""
    d = Path(out_dir)
    write_trace_csv(trace, d / TRACE_CSV)
    return write_json_atomic(d / METRICS_JSON, report.model_dump(mode="json"))


__all__ = [
    "EvaluationReport",
    "PairScore",
    "evaluate_against_run",
    "evaluate_against_truth",
    "write_evaluation",
]
