"""
Run directory: what ``corss run`` writes and ``corss eval`` reads.

    sources.sig            separated sources, appended block by block
    blocks.csv             one row per block, appended block by block
    spikes.json            decomposition task: selected sources and spike trains
    envelope.csv           monitoring task: envelope frames (sample, value)
    triggers.json          monitoring task: breathing-trigger onsets
    unmixing.npy           final global unmixing matrix W M
    unmixing_history.npz   W M at every checkpoint
    config.json            PipelineConfig of the run
    metrics.prom           Prometheus text exposition
    diagnostics.json       per-block timings and conditioning diagnostics
    summary.json           written last; its presence marks a completed run
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Dict, List, Optional, Tuple, Union

import numpy as np

from src.core.signals import Envelope, FloatArray, SpikeTrain, TriggerTrain
from src.errors import CorssError, ErrorCode, SignalFileError
from src.observability.metrics import write_metrics
from src.observability.structured_logging import get_logger
from src.pipeline import BlockOutput, PipelineConfig, StreamResult
from src.signal_io import SignalWriter, read_signal

logger = get_logger(__name__)

SOURCES_FILE = "sources.sig"
BLOCKS_FILE = "blocks.csv"
SPIKES_FILE = "spikes.json"
ENVELOPE_FILE = "envelope.csv"
TRIGGERS_FILE = "triggers.json"
UNMIXING_FILE = "unmixing.npy"
HISTORY_FILE = "unmixing_history.npz"
CONFIG_FILE = "config.json"
METRICS_FILE = "metrics.prom"
DIAGNOSTICS_FILE = "diagnostics.json"
SUMMARY_FILE = "summary.json"

PathLike = Union[str, Path]


def write_json_atomic(path: PathLike, payload: Any) -> Path:
    """Write JSON to a temporary sibling, then rename over ``path``."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = target.with_name(target.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, target)
    return target


def spikes_payload(trains: List[SpikeTrain], sample_rate: float) -> Dict[str, Any]:
    return {
        "sample_rate": sample_rate,
        "trains": [
            {"source_id": t.source_id, "spike_samples": t.spike_samples.tolist()} for t in trains
        ],
    }


class RunWriter:
    """
    Streams a run to disk. Pass :meth:`on_block` as the pipeline sink and call
    :meth:`finish` with the final result.
    """

    def __init__(
        self, run_dir: PathLike, n_channels: int, sample_rate: float, config: PipelineConfig
    ):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        stale = self.run_dir / SUMMARY_FILE
        if stale.exists():
            stale.unlink()
        self.config = config
        self.sample_rate = sample_rate
        self.every = config.checkpoint_blocks(sample_rate)
        self.history: List[Tuple[int, int, FloatArray]] = []
        self._signal = SignalWriter(self.run_dir / SOURCES_FILE, n_channels, sample_rate)
        self._blocks_fh: Optional[IO[str]] = open(
            self.run_dir / BLOCKS_FILE, "w", newline="", encoding="utf-8"
        )
        self._blocks = csv.writer(self._blocks_fh)
        self._blocks.writerow(
            ["block_index", "start_sample", "length", "elapsed_s", "skipped_samples",
             "min_row_norm", "max_row_norm"]
        )

    def on_block(self, out: BlockOutput) -> None:
        self._signal.append(out.sources.data)
        norms = out.row_norms
        self._blocks.writerow([
            out.block_index,
            out.start_sample,
            out.sources.length,
            repr(out.elapsed_s),
            out.skipped_samples,
            repr(float(norms.min())) if norms.size else "",
            repr(float(norms.max())) if norms.size else "",
        ])
        assert self._blocks_fh is not None
        self._blocks_fh.flush()
        if out.unmixing is not None and (out.block_index + 1) % self.every == 0:
            self.history.append((out.block_index, out.end_sample, out.unmixing.copy()))

    def close(self) -> None:
        self._signal.close()
        if self._blocks_fh is not None:
            self._blocks_fh.close()
            self._blocks_fh = None

    def finish(
        self, result: StreamResult, input_name: str, warmup_blocks: int = 0
    ) -> Dict[str, Any]:
        """Write the end-of-run files; ``summary.json`` goes last."""
        self.close()
        d = self.run_dir
        task = result.task_output
        if task is not None and task.task == "decomposition":
            payload = spikes_payload(task.spike_trains, self.sample_rate)
            payload["selected"] = task.selected
            write_json_atomic(d / SPIKES_FILE, payload)
        if task is not None and task.envelope is not None:
            env = task.envelope
            np.savetxt(
                d / ENVELOPE_FILE,
                np.column_stack([env.frame_samples(), env.values]),
                delimiter=",",
                header="sample,value",
                comments="",
                fmt=["%d", "%.17g"],
            )
            triggers = task.triggers
            write_json_atomic(
                d / TRIGGERS_FILE,
                {
                    "sample_rate": self.sample_rate,
                    "source": task.selected[0],
                    "onset_samples": [] if triggers is None else triggers.onset_samples.tolist(),
                },
            )

        if result.whitener is not None and result.separator is not None:
            np.save(d / UNMIXING_FILE, result.separator.W @ result.whitener.M)
        if self.history:
            np.savez(
                d / HISTORY_FILE,
                block_index=np.array([h[0] for h in self.history], dtype=np.int64),
                sample_end=np.array([h[1] for h in self.history], dtype=np.int64),
                unmixing=np.stack([h[2] for h in self.history]),
            )
        write_json_atomic(d / CONFIG_FILE, self.config.model_dump(mode="json"))
        write_metrics(d / METRICS_FILE)

        write_json_atomic(
            d / DIAGNOSTICS_FILE,
            {
                "blocks": [
                    {
                        "block_index": o.block_index,
                        "elapsed_s": o.elapsed_s,
                        "skipped_samples": o.skipped_samples,
                        "row_norms": o.row_norms.tolist(),
                    }
                    for o in result.outputs
                ],
            },
        )

        sep = result.separator
        summary: Dict[str, Any] = {
            "input": input_name,
            "algorithm": self.config.algorithm,
            "task": self.config.task,
            "block_size": self.config.block_size,
            "n_channels": sep.n_channels if sep is not None else None,
            "sample_rate": self.sample_rate,
            "n_samples": result.n_samples,
            "n_blocks": len(result.outputs),
            "skipped_samples": sep.skipped_samples if sep is not None else 0,
            "degenerate_blocks": sep.degenerate_blocks if sep is not None else 0,
            "checkpoints": len(result.checkpoints),
            "task_output": None if task is None else task.summary(),
            "latency": None,
        }
        try:
            summary["latency"] = result.latency(self.config.block_size, warmup_blocks).model_dump()
        except CorssError:
            logger.debug("latency_unavailable", blocks=len(result.outputs))
        write_json_atomic(d / SUMMARY_FILE, summary)
        logger.info("run_written", run_dir=str(d), blocks=len(result.outputs))
        return summary


# ============================================================================
# LOADING
# ============================================================================


@dataclass
class RunArtifacts:
    run_dir: Path
    summary: Dict[str, Any]
    config: PipelineConfig
    sample_rate: float
    spike_trains: Optional[List[SpikeTrain]] = None
    envelope: Optional[Envelope] = None
    triggers: Optional[TriggerTrain] = None
    unmixing: Optional[FloatArray] = None
    history: List[Tuple[int, int, FloatArray]] = field(default_factory=list)

    def sources(self) -> FloatArray:
        data, _ = read_signal(self.run_dir / SOURCES_FILE)
        return data


def load_run(run_dir: PathLike) -> RunArtifacts:
    """
    Read a completed run directory.

    Raises:
        CorssError: ``invalid-argument`` when the directory holds no completed run.
    """
    d = Path(run_dir)
    summary_path = d / SUMMARY_FILE
    if not summary_path.is_file():
        raise CorssError(
            f"{d} is not a completed run directory (no {SUMMARY_FILE})",
            code=ErrorCode.INVALID_ARGUMENT,
            run_dir=str(d),
        )
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    config = PipelineConfig.model_validate_json((d / CONFIG_FILE).read_text(encoding="utf-8"))
    fs = float(summary["sample_rate"])
    run = RunArtifacts(run_dir=d, summary=summary, config=config, sample_rate=fs)

    spikes = d / SPIKES_FILE
    if spikes.is_file():
        raw = json.loads(spikes.read_text(encoding="utf-8"))
        run.spike_trains = [
            SpikeTrain(int(t["source_id"]), np.asarray(t["spike_samples"]), fs) for t in raw["trains"]
        ]
    env_path = d / ENVELOPE_FILE
    if env_path.is_file():
        table = np.loadtxt(env_path, delimiter=",", skiprows=1, ndmin=2)
        ident = config.identification
        run.envelope = Envelope(table[:, 1], ident.window_ms, ident.hop_ms, fs)
    trig_path = d / TRIGGERS_FILE
    if trig_path.is_file():
        raw = json.loads(trig_path.read_text(encoding="utf-8"))
        run.triggers = TriggerTrain(np.asarray(raw["onset_samples"]), fs)
    if (d / UNMIXING_FILE).is_file():
        run.unmixing = np.load(d / UNMIXING_FILE)
    hist_path = d / HISTORY_FILE
    if hist_path.is_file():
        with np.load(hist_path) as h:
            run.history = [
                (int(b), int(e), u) for b, e, u in zip(h["block_index"], h["sample_end"], h["unmixing"])
            ]
    if not (d / SOURCES_FILE).is_file():
        raise SignalFileError(f"run directory lacks {SOURCES_FILE}", run_dir=str(d))
    return run


__all__ = [
    "RunArtifacts",
    "RunWriter",
    "load_run",
    "spikes_payload",
    "write_json_atomic",
]
