"""
Unit tests for run directories and evaluation
Юнит-тесты для каталогов запусков и оценки
"""

import json

import numpy as np
import pytest

from src.errors import CorssError, ErrorCode
from src.evaluation import (
    METRICS_JSON,
    TRACE_CSV,
    evaluate_against_run,
    evaluate_against_truth,
    write_evaluation,
)
from src.pipeline import PipelineConfig, run_stream
from src.rundir import RunWriter, load_run, write_json_atomic
from src.synth import GroundTruth


def _run(run_dir, recording, config):
    rec, _ = recording
    writer = RunWriter(run_dir, rec.n_channels, rec.sample_rate, config)
    result = run_stream(config, rec.blocks(config.block_size), sink=writer.on_block)
    summary = writer.finish(result, "input.sig")
    return result, summary


@pytest.mark.unit
class TestRunWriterUnit:
    def test_decomposition_run_files(self, tmp_path, mu_recording):
        config = PipelineConfig(checkpoint_every_blocks=10)
        result, summary = _run(tmp_path / "run", mu_recording, config)
        d = tmp_path / "run"

        for name in (
            "sources.sig",
            "blocks.csv",
            "spikes.json",
            "unmixing.npy",
            "unmixing_history.npz",
            "config.json",
            "metrics.prom",
            "diagnostics.json",
            "summary.json",
        ):
            assert (d / name).is_file(), name
        assert not (d / "envelope.csv").exists()

        assert summary["n_blocks"] == 40
        assert summary["n_samples"] == 8000
        assert summary["n_channels"] == 8
        assert summary["checkpoints"] == 4
        assert summary["latency"]["n_blocks"] == 40
        assert json.loads((d / "summary.json").read_text()) == summary
        assert len((d / "blocks.csv").read_text().splitlines()) == 41

        run = load_run(d)
        assert run.config == config
        np.testing.assert_allclose(run.unmixing, result.separator.W @ result.whitener.M)
        assert [h[0] for h in run.history] == [9, 19, 29, 39]
        np.testing.assert_allclose(run.sources(), result.sources(), rtol=1e-5, atol=1e-5)
        spikes = json.loads((d / "spikes.json").read_text())
        assert spikes["selected"] == result.task_output.selected

    def test_monitoring_run_files(self, tmp_path, emgdi_recording):
        _run(tmp_path / "mon", emgdi_recording, PipelineConfig(block_size=500, task="monitoring"))
        run = load_run(tmp_path / "mon")
        assert len(run.envelope) == 600
        assert run.triggers is not None
        assert run.spike_trains is None
        assert (tmp_path / "mon" / "envelope.csv").read_text().startswith("sample,value\n")

    def test_stale_summary_is_removed(self, tmp_path, mu_recording):
        d = tmp_path / "run"
        write_json_atomic(d / "summary.json", {"old": True})
        rec, _ = mu_recording
        writer = RunWriter(d, rec.n_channels, rec.sample_rate, PipelineConfig())
        assert not (d / "summary.json").exists()
        writer.close()

    def test_load_incomplete_run(self, tmp_path):
        with pytest.raises(CorssError) as exc:
            load_run(tmp_path)
        assert exc.value.code is ErrorCode.INVALID_ARGUMENT

    def test_atomic_json_leaves_no_temp_file(self, tmp_path):
        path = write_json_atomic(tmp_path / "a" / "x.json", {"b": 1, "a": [1, 2]})
        assert json.loads(path.read_text()) == {"a": [1, 2], "b": 1}
        assert list(path.parent.iterdir()) == [path]


@pytest.mark.unit
class TestEvaluationUnit:
    def test_self_comparison_is_perfect(self, tmp_path, emgdi_recording):
        _run(tmp_path / "mon", emgdi_recording, PipelineConfig(block_size=500, task="monitoring"))
        run = load_run(tmp_path / "mon")
        report = evaluate_against_run(run, run)
        assert report.corr == pytest.approx(1.0)
        assert report.rmse_percent == pytest.approx(0.0, abs=1e-9)
        if len(run.triggers):
            assert report.trigger_sensitivity == 1.0

    def test_decomposition_against_truth(self, tmp_path, mu_recording):
        _run(tmp_path / "run", mu_recording, PipelineConfig(checkpoint_every_blocks=10))
        run = load_run(tmp_path / "run")
        report, trace = evaluate_against_truth(run, mu_recording[1])

        assert report.burn_in_samples == 1600
        assert report.amari is not None and 0.0 <= report.amari <= 1.0
        assert len(report.pairs) == min(len(run.spike_trains), 4)
        assert all(0.0 <= p.mr <= 1.0 for p in report.pairs)
        assert [p.block_index for p in trace] == [9, 19, 29, 39]

        out = write_evaluation(tmp_path / "eval", report, trace)
        assert out.name == METRICS_JSON
        assert json.loads(out.read_text())["burn_in_samples"] == 1600
        assert len((tmp_path / "eval" / TRACE_CSV).read_text().splitlines()) == 5

    def test_monitoring_against_truth(self, tmp_path, emgdi_recording):
        _run(tmp_path / "mon", emgdi_recording, PipelineConfig(block_size=500, task="monitoring"))
        report, _ = evaluate_against_truth(load_run(tmp_path / "mon"), emgdi_recording[1])
        assert report.corr is not None and -1.0 <= report.corr <= 1.0
        assert report.rmse_percent is not None
        assert report.pairs == []

    def test_rate_mismatch(self, tmp_path, mu_recording):
        _run(tmp_path / "run", mu_recording, PipelineConfig(task="none"))
        _, truth = mu_recording
        other = GroundTruth(
            task=truth.task, sample_rate=1000.0, n_samples=truth.n_samples, mixing=truth.mixing
        )
        with pytest.raises(CorssError) as exc:
            evaluate_against_truth(load_run(tmp_path / "run"), other)
        assert exc.value.code is ErrorCode.RATE_MISMATCH
