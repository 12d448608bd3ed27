"""
Synthetic multichannel electrophysiology with complete ground truth.

Two recording types:

* ``semg-decomposition``: motor-unit pulse trains (jittered, ramp/hold-modulated
  discharge rates, biphasic kernels) mixed into surface channels;
* ``emgdi-monitoring``: respiratory-gated band-limited EMG plus an ECG artefact,
  mixed into channels with sensor noise.

Everything is a deterministic function of the :class:`SynthSpec` (seed included).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import signal
from scipy.signal.windows import tukey

from src.core.signals import FloatArray, MultichannelBlock, SpikeTrain, TriggerTrain, iter_blocks
from src.errors import SpecError
from src.observability.structured_logging import get_logger

logger = get_logger(__name__)

Task = Literal["semg-decomposition", "emgdi-monitoring"]

MIN_ISI_S = 0.020
ISI_COV = 0.10
KERNEL_SUPPORT_MS = (5.0, 15.0)
BURST_DUTY = 0.4
BURST_EDGE_S = 0.3
EMG_BAND_HZ = (20.0, 150.0)
ECG_JITTER = 0.03
MAX_MIXING_ATTEMPTS = 100


class SynthSpec(BaseModel):
    """Everything needed to regenerate a synthetic recording bit-for-bit."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    task: Task = "semg-decomposition"
    n_ch: int = 16
    n_sources: Optional[int] = None
    duration_s: float = 30.0
    sample_rate: float = 2000.0
    seed: int = 0
    firing_rate_hz: Tuple[float, float] = (8.0, 20.0)
    breath_rate_bpm: float = 15.0
    ecg_rate_bpm: float = 72.0
    ecg_ratio: float = 10.0
    snr_db: float = 20.0
    ramp_s: float = 2.0
    hold_s: float = 3.0
    mixing: Optional[List[List[float]]] = None
    max_condition: float = 20.0

    @classmethod
    def default_emgdi(cls, **overrides: Any) -> "SynthSpec":
        base: Dict[str, Any] = dict(
            task="emgdi-monitoring", n_ch=8, duration_s=120.0, sample_rate=1000.0
        )
        base.update(overrides)
        return cls(**base)

    @property
    def sources(self) -> int:
        if self.n_sources is not None:
            return self.n_sources
        return 6 if self.task == "semg-decomposition" else 2

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate))

    def check(self) -> "SynthSpec":
        """Raise SpecError (``invalid-spec``) on any inconsistent field."""
        problems = []
        if self.n_ch < 1:
            problems.append(f"n_ch must be >= 1, got {self.n_ch}")
        if self.sources < 1:
            problems.append(f"n_sources must be >= 1, got {self.sources}")
        if self.sources > self.n_ch:
            problems.append(f"n_sources ({self.sources}) exceeds n_ch ({self.n_ch})")
        for name in ("duration_s", "sample_rate", "breath_rate_bpm", "ecg_rate_bpm",
                     "max_condition"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        lo, hi = self.firing_rate_hz
        if not 0 < lo <= hi:
            problems.append(f"firing_rate_hz must satisfy 0 < low <= high, got {self.firing_rate_hz}")
        elif hi >= 1.0 / MIN_ISI_S:
            problems.append(f"firing rate {hi} Hz is incompatible with the 20 ms refractory period")
        if self.ecg_ratio < 0 or self.ramp_s < 0 or self.hold_s < 0:
            problems.append("ecg_ratio, ramp_s and hold_s must be >= 0")
        if math.isnan(self.snr_db):
            problems.append("snr_db must not be NaN")
        if self.n_samples < 1:
            problems.append("recording would contain no samples")
        if problems:
            raise SpecError("; ".join(problems), n_ch=self.n_ch, n_sources=self.sources)
        return self


@dataclass
class Recording:
    """Observed mixture (n_ch, N)."""

    data: FloatArray
    sample_rate: float

    @property
    def n_channels(self) -> int:
        return int(self.data.shape[0])

    @property
    def n_samples(self) -> int:
        return int(self.data.shape[1])

    def blocks(self, block_size: int) -> Iterator[MultichannelBlock]:
        return iter_blocks(self.data, block_size, self.sample_rate)


@dataclass
class GroundTruth:
    """
    Generator truth. ``sources`` holds the latent signals (s in x = A s) and is
    not serialised.
    """

    task: Task
    sample_rate: float
    n_samples: int
    mixing: FloatArray
    spike_trains: List[SpikeTrain] = field(default_factory=list)
    gating_curve: Optional[FloatArray] = None
    ecg_onsets: Optional[TriggerTrain] = None
    breath_onsets: Optional[TriggerTrain] = None
    sources: Optional[FloatArray] = None
    spec: Optional[Dict[str, Any]] = None

    def to_json(self) -> str:
        payload: Dict[str, Any] = {
            "task": self.task,
            "sample_rate": self.sample_rate,
            "n_samples": self.n_samples,
            "mixing": self.mixing.tolist(),
            "spike_trains": [
                {"source_id": t.source_id, "spike_samples": t.spike_samples.tolist()}
                for t in self.spike_trains
            ],
            "gating_curve": None if self.gating_curve is None else self.gating_curve.tolist(),
            "ecg_onsets": None if self.ecg_onsets is None else self.ecg_onsets.onset_samples.tolist(),
            "breath_onsets": (
                None if self.breath_onsets is None else self.breath_onsets.onset_samples.tolist()
            ),
            "spec": self.spec,
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        raw = json.loads(text)
        fs = float(raw["sample_rate"])

        def triggers(key: str) -> Optional[TriggerTrain]:
            return None if raw.get(key) is None else TriggerTrain(np.asarray(raw[key]), fs)

        return cls(
            task=raw["task"],
            sample_rate=fs,
            n_samples=int(raw["n_samples"]),
            mixing=np.asarray(raw["mixing"], dtype=np.float64),
            spike_trains=[
                SpikeTrain(int(t["source_id"]), np.asarray(t["spike_samples"]), fs)
                for t in raw.get("spike_trains", [])
            ],
            gating_curve=(
                None if raw.get("gating_curve") is None
                else np.asarray(raw["gating_curve"], dtype=np.float64)
            ),
            ecg_onsets=triggers("ecg_onsets"),
            breath_onsets=triggers("breath_onsets"),
            spec=raw.get("spec"),
        )


# ============================================================================
# BUILDING BLOCKS
# ============================================================================


def biphasic_kernel(rng: np.random.Generator, sample_rate: float) -> Tuple[FloatArray, int]:
    """
    Difference-of-Gaussians action-potential shape with 5-15 ms support.

    Returns:
        (kernel, peak) with max |kernel| = 1 attained only at index ``peak``.
    """
    support_s = rng.uniform(*KERNEL_SUPPORT_MS) / 1000.0
    length = max(5, int(round(support_s * sample_rate)))
    t = np.linspace(0.0, 1.0, length)
    width = rng.uniform(0.07, 0.11)
    lead = rng.uniform(0.3, 0.4)
    lag = lead + rng.uniform(1.8, 2.4) * width
    ratio = rng.uniform(0.4, 0.7)
    k = np.exp(-0.5 * ((t - lead) / width) ** 2) - ratio * np.exp(
        -0.5 * ((t - lag) / (1.5 * width)) ** 2
    )
    if rng.random() < 0.5:
        k = -k
    peak = int(np.argmax(np.abs(k)))
    return k / abs(k[peak]), peak


def rate_profile(t: FloatArray, ramp_s: float, hold_s: float) -> FloatArray:
    """Relative drive in [0.6, 1]: linear ramp over ramp_s, then hold, repeating."""
    period = ramp_s + hold_s
    if period <= 0 or ramp_s == 0:
        return np.ones_like(t)
    phase = np.mod(t, period)
    return 0.6 + 0.4 * np.minimum(phase / ramp_s, 1.0)


def discharge_times(
    rng: np.random.Generator, base_rate: float, spec: SynthSpec
) -> FloatArray:
    """Jittered-periodic discharge times (s) with rate modulated by the ramp/hold profile."""
    times: List[float] = []
    t = rng.uniform(0.0, 1.0 / base_rate)
    while t < spec.duration_s:
        times.append(t)
        rate = base_rate * float(rate_profile(np.array([t]), spec.ramp_s, spec.hold_s)[0])
        isi = (1.0 / rate) * (1.0 + ISI_COV * rng.standard_normal())
        t += max(isi, MIN_ISI_S)
    return np.asarray(times)


def discharge_samples(times: FloatArray, sample_rate: float, n_samples: int) -> np.ndarray:
    """
    Discharge times rounded to sample indices inside [0, n_samples). A spike
    that rounding would bring within the refractory period of its predecessor
    is moved to the first sample that respects it.
    """
    min_gap = int(math.ceil(MIN_ISI_S * sample_rate - 1e-9))
    kept: List[int] = []
    for s in np.round(np.asarray(times) * sample_rate).astype(np.int64):
        s = int(s) if not kept else max(int(s), kept[-1] + min_gap)
        if s >= n_samples:
            break
        if s >= 0:
            kept.append(s)
    return np.asarray(kept, dtype=np.int64)


def place_kernel(n_samples: int, spikes: np.ndarray, kernel: FloatArray, peak: int) -> FloatArray:
    """Sum of kernels whose peak sample sits on each spike index."""
    out = np.zeros(n_samples)
    for s in spikes:
        lo = s - peak
        a, b = max(lo, 0), min(lo + kernel.size, n_samples)
        if a < b:
            out[a:b] += kernel[a - lo : b - lo]
    return out


def random_mixing(
    rng: np.random.Generator, n_ch: int, n_src: int, max_condition: float
) -> FloatArray:
    """Gaussian mixing matrix with condition number <= max_condition."""
    A = rng.standard_normal((n_ch, n_src))
    for _ in range(MAX_MIXING_ATTEMPTS):
        if np.linalg.cond(A) <= max_condition:
            return A
        A = rng.standard_normal((n_ch, n_src))
    # clamp the spectrum as a last resort
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    s = np.clip(s, s[0] / max_condition, None)
    logger.debug("mixing_spectrum_clamped", max_condition=max_condition)
    return (u * s) @ vt


def resolve_mixing(rng: np.random.Generator, spec: SynthSpec) -> FloatArray:
    if spec.mixing is None:
        return random_mixing(rng, spec.n_ch, spec.sources, spec.max_condition)
    A = np.asarray(spec.mixing, dtype=np.float64)
    if A.shape != (spec.n_ch, spec.sources):
        raise SpecError(
            f"mixing must have shape ({spec.n_ch}, {spec.sources}), got {A.shape}"
        )
    if np.linalg.matrix_rank(A) < spec.sources:
        raise SpecError("mixing matrix must have full column rank")
    return A


def add_sensor_noise(rng: np.random.Generator, X: FloatArray, snr_db: float) -> FloatArray:
    """Per-channel white Gaussian noise at ``snr_db`` relative to that channel's power."""
    if math.isinf(snr_db) and snr_db > 0:
        return X
    power = np.mean(X * X, axis=1)
    sigma = np.sqrt(power / 10.0 ** (snr_db / 10.0))
    return X + sigma[:, None] * rng.standard_normal(X.shape)


def band_limited_noise(
    rng: np.random.Generator, n_samples: int, sample_rate: float, band_hz: Tuple[float, float]
) -> FloatArray:
    """Unit-RMS Gaussian noise restricted to ``band_hz``."""
    high = min(band_hz[1], 0.45 * sample_rate)
    low = min(band_hz[0], 0.5 * high)
    sos = signal.butter(4, [low, high], btype="bandpass", fs=sample_rate, output="sos")
    x = signal.sosfilt(sos, rng.standard_normal(n_samples + 2048))[2048:]
    return x / np.sqrt(np.mean(x * x))


def gating_curve(spec: SynthSpec) -> Tuple[FloatArray, np.ndarray]:
    """
    Respiratory drive: raised-cosine-edged bursts, one per breath.

    Returns:
        (curve in [0, 1] per sample, burst onset sample indices)
    """
    n = spec.n_samples
    fs = spec.sample_rate
    period = 60.0 / spec.breath_rate_bpm
    burst = BURST_DUTY * period
    edge = min(BURST_EDGE_S, 0.5 * burst)
    burst_len = max(2, int(round(burst * fs)))
    window = tukey(burst_len, alpha=min(1.0, 2.0 * edge / burst))
    curve = np.zeros(n)
    onsets = []
    t = 0.25 * period
    while t < spec.duration_s:
        start = int(round(t * fs))
        if start >= n:
            break
        stop = min(start + burst_len, n)
        curve[start:stop] = window[: stop - start]
        onsets.append(start)
        t += period
    return curve, np.asarray(onsets, dtype=np.int64)


def ecg_template(sample_rate: float) -> Tuple[FloatArray, int]:
    """Q-R-S-T complex from Gaussian bumps; returns (template, R index)."""
    t = np.arange(-0.1, 0.45, 1.0 / sample_rate)
    waves = (
        (-0.15, -0.025, 0.008),  # Q
        (1.00, 0.000, 0.008),  # R
        (-0.25, 0.025, 0.008),  # S
        (0.30, 0.250, 0.040),  # T
    )
    k = sum(a * np.exp(-0.5 * ((t - mu) / sd) ** 2) for a, mu, sd in waves)
    r_index = int(np.argmin(np.abs(t)))
    return np.asarray(k) / k[r_index], r_index


# ============================================================================
# GENERATORS
# ============================================================================


def gen_mu_recording(spec: SynthSpec) -> Tuple[Recording, GroundTruth]:
    """
    Motor-unit decomposition recording.

    Raises:
        SpecError: inconsistent spec or wrong task.
    """
    spec.check()
    if spec.task != "semg-decomposition":
        raise SpecError(f"gen_mu_recording needs task semg-decomposition, got {spec.task}")
    rng = np.random.default_rng(spec.seed)
    n, fs = spec.n_samples, spec.sample_rate

    sources = np.zeros((spec.sources, n))
    trains: List[SpikeTrain] = []
    lo, hi = spec.firing_rate_hz
    for i in range(spec.sources):
        kernel, peak = biphasic_kernel(rng, fs)
        base_rate = rng.uniform(lo, hi)
        idx = discharge_samples(discharge_times(rng, base_rate, spec), fs, n)
        sources[i] = place_kernel(n, idx, kernel, peak)
        trains.append(SpikeTrain(i, idx, fs))

    A = resolve_mixing(rng, spec)
    X = add_sensor_noise(rng, A @ sources, spec.snr_db)
    logger.info(
        "recording_generated",
        task=spec.task,
        n_ch=spec.n_ch,
        n_sources=spec.sources,
        n_samples=n,
        seed=spec.seed,
        condition=float(np.linalg.cond(A)),
    )
    truth = GroundTruth(
        task=spec.task,
        sample_rate=fs,
        n_samples=n,
        mixing=A,
        spike_trains=trains,
        sources=sources,
        spec=spec.model_dump(),
    )
    return Recording(X, fs), truth


def gen_emgdi_recording(spec: SynthSpec) -> Tuple[Recording, GroundTruth]:
    """
    Diaphragm EMG monitoring recording: source 0 is the gated EMGdi, source 1
    the ECG artefact, further sources un-gated background activity.

    Raises:
        SpecError: inconsistent spec or wrong task.
    """
    spec.check()
    if spec.task != "emgdi-monitoring":
        raise SpecError(f"gen_emgdi_recording needs task emgdi-monitoring, got {spec.task}")
    rng = np.random.default_rng(spec.seed)
    n, fs = spec.n_samples, spec.sample_rate

    curve, breath_onsets = gating_curve(spec)
    emg = band_limited_noise(rng, n, fs, EMG_BAND_HZ) * curve
    emg_rms = float(np.sqrt(np.mean(emg * emg)))

    template, r_index = ecg_template(fs)
    period = 60.0 / spec.ecg_rate_bpm
    beats: List[int] = []
    t = rng.uniform(0.0, period)
    while t < spec.duration_s:
        beats.append(int(round(t * fs)))
        t += period * (1.0 + ECG_JITTER * rng.standard_normal())
    r_peaks = np.asarray([b for b in beats if b < n], dtype=np.int64)
    ecg = place_kernel(n, r_peaks, template, r_index) * spec.ecg_ratio * emg_rms

    rows = [emg]
    if spec.sources >= 2:
        rows.append(ecg)
    for _ in range(spec.sources - 2):
        rows.append(0.3 * emg_rms * band_limited_noise(rng, n, fs, EMG_BAND_HZ))
    sources = np.vstack(rows)

    A = resolve_mixing(rng, spec)
    X = add_sensor_noise(rng, A @ sources, spec.snr_db)
    logger.info(
        "recording_generated",
        task=spec.task,
        n_ch=spec.n_ch,
        n_sources=spec.sources,
        n_samples=n,
        seed=spec.seed,
        breaths=int(breath_onsets.size),
        heartbeats=int(r_peaks.size),
    )
    truth = GroundTruth(
        task=spec.task,
        sample_rate=fs,
        n_samples=n,
        mixing=A,
        gating_curve=curve,
        ecg_onsets=TriggerTrain(r_peaks, fs),
        breath_onsets=TriggerTrain(breath_onsets, fs),
        sources=sources,
        spec=spec.model_dump(),
    )
    return Recording(X, fs), truth


def generate(spec: SynthSpec) -> Tuple[Recording, GroundTruth]:
    """Dispatch on ``spec.task``."""
    if spec.task == "semg-decomposition":
        return gen_mu_recording(spec)
    return gen_emgdi_recording(spec)


def truth_path_for(signal_path: Union[str, Path]) -> Path:
    p = Path(signal_path)
    return p.with_name(p.stem + ".truth.json")


def write_recording(
    signal_path: Union[str, Path], recording: Recording, truth: GroundTruth
) -> Tuple[Path, Path]:
    """Write ``<stem>.sig`` and its ``<stem>.truth.json`` sidecar."""
    from src.signal_io import write_signal

    sig = write_signal(signal_path, recording.data, recording.sample_rate)
    sidecar = truth_path_for(sig)
    sidecar.write_text(truth.to_json(), encoding="utf-8")
    return sig, sidecar


def load_truth(path: Union[str, Path]) -> GroundTruth:
    return GroundTruth.from_json(Path(path).read_text(encoding="utf-8"))


__all__ = [
    "GroundTruth",
    "Recording",
    "SynthSpec",
    "biphasic_kernel",
    "gating_curve",
    "gen_emgdi_recording",
    "gen_mu_recording",
    "generate",
    "load_truth",
    "truth_path_for",
    "write_recording",
]
