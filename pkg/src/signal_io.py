"""
Self-describing multichannel signal files.

Layout: one ASCII header line

    CORSSSIG v1 n_ch=<int> sample_rate=<float> sample_count=<12 digits> encoding=f32le

followed by the channel-interleaved (sample-major) little-endian float32 payload.
The sample count is fixed-width so a streaming writer can rewrite it in place
after every block; an interrupted writer leaves a file whose header describes
only complete samples.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from types import TracebackType
from typing import BinaryIO, Optional, Tuple, Type, Union

import numpy as np

from src.core.signals import FloatArray
from src.errors import ShapeError, SignalFileError
from src.observability.structured_logging import get_logger

logger = get_logger(__name__)

MAGIC = "CORSSSIG"
VERSION = "v1"
ENCODING = "f32le"
PAYLOAD_DTYPE = np.dtype("<f4")
COUNT_WIDTH = 12
MAX_HEADER_BYTES = 256

_HEADER_RE = re.compile(
    rf"^{MAGIC} (?P<version>v\d+) n_ch=(?P<n_ch>\d+) sample_rate=(?P<rate>[0-9.eE+-]+) "
    rf"sample_count=(?P<count>\d{{{COUNT_WIDTH}}}) encoding=(?P<encoding>\w+)$"
)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class SignalHeader:
    n_ch: int
    sample_rate: float
    sample_count: int
    encoding: str = ENCODING

    def prefix(self) -> str:
        """Header text up to (excluding) the sample-count digits."""
        return f"{MAGIC} {VERSION} n_ch={self.n_ch} sample_rate={self.sample_rate!r} sample_count="

    def to_line(self) -> bytes:
        text = f"{self.prefix()}{self.sample_count:0{COUNT_WIDTH}d} encoding={self.encoding}\n"
        return text.encode("ascii")

    @property
    def payload_bytes(self) -> int:
        return self.n_ch * self.sample_count * PAYLOAD_DTYPE.itemsize

    @classmethod
    def parse(cls, line: bytes, path: Optional[PathLike] = None) -> "SignalHeader":
        try:
            text = line.decode("ascii").rstrip("\n")
        except UnicodeDecodeError as exc:
            raise SignalFileError("header is not ASCII", path=str(path)) from exc
        match = _HEADER_RE.match(text)
        if match is None:
            raise SignalFileError(f"unrecognised header: {text[:80]!r}", path=str(path))
        if match["version"] != VERSION:
            raise SignalFileError(f"unsupported version {match['version']}", path=str(path))
        if match["encoding"] != ENCODING:
            raise SignalFileError(f"unsupported encoding {match['encoding']}", path=str(path))
        try:
            rate = float(match["rate"])
        except ValueError as exc:
            raise SignalFileError(f"bad sample_rate {match['rate']!r}", path=str(path)) from exc
        n_ch = int(match["n_ch"])
        if n_ch < 1 or not rate > 0:
            raise SignalFileError("n_ch and sample_rate must be positive", path=str(path))
        return cls(n_ch=n_ch, sample_rate=rate, sample_count=int(match["count"]))


class SignalWriter:
    """
    Append-only writer. Every :meth:`append` writes the samples, then rewrites
    the sample count, so readers always see whole samples only.

    Usage:
        with SignalWriter(path, n_ch=8, sample_rate=1000.0) as w:
            for block in blocks:
                w.append(block.data)
    """

    def __init__(self, path: PathLike, n_ch: int, sample_rate: float):
        if n_ch < 1 or not sample_rate > 0:
            raise SignalFileError(
                "n_ch and sample_rate must be positive", n_ch=n_ch, sample_rate=sample_rate
            )
        self.path = Path(path)
        self.header = SignalHeader(n_ch=n_ch, sample_rate=float(sample_rate), sample_count=0)
        self._count_offset = len(self.header.prefix().encode("ascii"))
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh: Optional[BinaryIO] = open(self.path, "wb")
        self._fh.write(self.header.to_line())
        self._fh.flush()

    @property
    def sample_count(self) -> int:
        return self.header.sample_count

    def append(self, data: FloatArray) -> None:
        """Append samples shaped (n_ch, L)."""
        if self._fh is None:
            raise SignalFileError("writer is closed", path=str(self.path))
        arr = np.asarray(data)
        if arr.ndim != 2 or arr.shape[0] != self.header.n_ch:
            raise ShapeError(
                f"expected ({self.header.n_ch}, L) samples, got {arr.shape}",
                path=str(self.path),
            )
        if arr.shape[1] == 0:
            return
        self._fh.seek(0, 2)
        self._fh.write(np.ascontiguousarray(arr.T, dtype=PAYLOAD_DTYPE).tobytes())
        self._fh.flush()
        count = self.header.sample_count + arr.shape[1]
        self._fh.seek(self._count_offset)
        self._fh.write(f"{count:0{COUNT_WIDTH}d}".encode("ascii"))
        self._fh.flush()
        self.header = SignalHeader(self.header.n_ch, self.header.sample_rate, count)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "SignalWriter":
        return self

    def __exit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc: Optional[BaseException],
        tb: Optional[TracebackType],
    ) -> None:
        self.close()


def write_signal(path: PathLike, data: FloatArray, sample_rate: float) -> Path:
    """Write a whole (n_ch, N) array in one go."""
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise ShapeError(f"signal must be 2-D (n_ch, N), got shape {arr.shape}")
    with SignalWriter(path, arr.shape[0], sample_rate) as writer:
        writer.append(arr)
    return Path(path)


def read_header(path: PathLike) -> SignalHeader:
    with open(path, "rb") as fh:
        return SignalHeader.parse(fh.readline(MAX_HEADER_BYTES), path)


def read_signal(path: PathLike, allow_partial: bool = False) -> Tuple[FloatArray, float]:
    """
    Load a signal file.

    Args:
        path: File to read.
        allow_partial: Accept a payload length that disagrees with the header.
            A short payload yields the whole samples present; a longer one
            yields the committed ``sample_count`` samples.

    Returns:
        (data as float64 (n_ch, N), sample_rate)

    Raises:
        SignalFileError: missing file, bad header, or payload length mismatch.
    """
    p = Path(path)
    if not p.is_file():
        raise SignalFileError(f"no such signal file: {p}", path=str(p))
    with open(p, "rb") as fh:
        line = fh.readline(MAX_HEADER_BYTES)
        header = SignalHeader.parse(line, p)
        payload = fh.read()

    frame = header.n_ch * PAYLOAD_DTYPE.itemsize
    if len(payload) != header.payload_bytes:
        available = len(payload) // frame
        if not allow_partial:
            raise SignalFileError(
                f"payload has {len(payload)} bytes, header promises {header.payload_bytes}",
                path=str(p),
                sample_count=header.sample_count,
            )
        if available >= header.sample_count:
            # payload written but the sample count not yet committed
            logger.warning(
                "signal_file_uncommitted_payload",
                path=str(p),
                committed=header.sample_count,
                available=available,
            )
            available = header.sample_count
        else:
            logger.warning(
                "signal_file_truncated",
                path=str(p),
                expected=header.sample_count,
                available=available,
            )
        payload = payload[: available * frame]
    samples = np.frombuffer(payload, dtype=PAYLOAD_DTYPE).reshape(-1, header.n_ch)
    return samples.T.astype(np.float64), header.sample_rate


# ============================================================================
# CSV CONVERTER
# ============================================================================


def export_csv(signal_path: PathLike, csv_path: PathLike) -> Path:
    """Signal file -> CSV with a ``time_s,ch0,ch1,...`` header row."""
    data, rate = read_signal(signal_path)
    t = np.arange(data.shape[1]) / rate
    header = ",".join(["time_s"] + [f"ch{i}" for i in range(data.shape[0])])
    out = Path(csv_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(
        out, np.column_stack([t, data.T]), delimiter=",", header=header, comments="",
        fmt="%.9g",
    )
    return out


def import_csv(
    csv_path: PathLike, signal_path: PathLike, sample_rate: Optional[float] = None
) -> Path:
    """
    CSV (first column time in seconds, one column per channel) -> signal file.

    The sample rate is inferred from the time column unless given.
    """
    p = Path(csv_path)
    if not p.is_file():
        raise SignalFileError(f"no such CSV file: {p}", path=str(p))
    try:
        table = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise SignalFileError(f"unparseable CSV: {exc}", path=str(p)) from exc
    if table.shape[1] < 2 or table.shape[0] < 1:
        raise SignalFileError("CSV needs a time column and at least one channel", path=str(p))
    if sample_rate is None:
        if table.shape[0] < 2:
            raise SignalFileError("cannot infer sample rate from a single row", path=str(p))
        step = float(np.median(np.diff(table[:, 0])))
        if not step > 0:
            raise SignalFileError("time column must increase", path=str(p))
        sample_rate = 1.0 / step
    return write_signal(signal_path, table[:, 1:].T, sample_rate)


__all__ = [
    "SignalHeader",
    "SignalWriter",
    "export_csv",
    "import_csv",
    "read_header",
    "read_signal",
    "write_signal",
]
