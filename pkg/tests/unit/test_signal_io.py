"""
Unit tests for signal files and the CSV converter
Юнит-тесты для сигнальных файлов и CSV-конвертера
"""

import numpy as np
import pytest

from src.errors import ErrorCode, ShapeError, SignalFileError
from src.signal_io import (
    SignalHeader,
    SignalWriter,
    export_csv,
    import_csv,
    read_header,
    read_signal,
    write_signal,
)


@pytest.mark.unit
class TestSignalFileUnit:
    def test_header_line(self):
        line = SignalHeader(n_ch=3, sample_rate=2000.0, sample_count=42).to_line()
        assert line == (
            b"CORSSSIG v1 n_ch=3 sample_rate=2000.0 sample_count=000000000042 encoding=f32le\n"
        )
        assert SignalHeader.parse(line) == SignalHeader(3, 2000.0, 42)

    def test_write_then_read(self, tmp_path, rng):
        X = rng.standard_normal((4, 321))
        path = write_signal(tmp_path / "x.sig", X, 1000.0)
        header = read_header(path)
        assert (header.n_ch, header.sample_rate, header.sample_count) == (4, 1000.0, 321)
        data, fs = read_signal(path)
        assert fs == 1000.0
        assert data.dtype == np.float64
        np.testing.assert_array_equal(data, X.astype(np.float32).astype(np.float64))

    def test_streaming_writer_matches_one_shot(self, tmp_path, rng):
        X = rng.standard_normal((2, 500))
        write_signal(tmp_path / "whole.sig", X, 500.0)
        with SignalWriter(tmp_path / "blocks.sig", 2, 500.0) as w:
            for start in range(0, 500, 64):
                w.append(X[:, start : start + 64])
            assert w.sample_count == 500
        assert (tmp_path / "whole.sig").read_bytes() == (tmp_path / "blocks.sig").read_bytes()

    def test_unclosed_writer_is_readable(self, tmp_path, rng):
        w = SignalWriter(tmp_path / "live.sig", 2, 100.0)
        w.append(rng.standard_normal((2, 30)))
        data, _ = read_signal(tmp_path / "live.sig")
        assert data.shape == (2, 30)
        w.close()
        with pytest.raises(SignalFileError):
            w.append(np.zeros((2, 1)))

    def test_writer_rejects_wrong_shape(self, tmp_path):
        with SignalWriter(tmp_path / "s.sig", 3, 100.0) as w, pytest.raises(ShapeError):
            w.append(np.zeros((2, 10)))

    def test_truncated_payload(self, tmp_path, rng):
        path = write_signal(tmp_path / "t.sig", rng.standard_normal((3, 100)), 1000.0)
        path.write_bytes(path.read_bytes()[:-5])

        with pytest.raises(SignalFileError) as exc:
            read_signal(path)
        assert exc.value.code is ErrorCode.INVALID_SIGNAL_FILE

        data, _ = read_signal(path, allow_partial=True)
        assert data.shape == (3, 99)

    def test_extra_payload_needs_allow_partial(self, tmp_path, rng):
        X = rng.standard_normal((2, 10))
        path = write_signal(tmp_path / "e.sig", X, 1000.0)
        path.write_bytes(path.read_bytes() + b"\x00" * 8)
        with pytest.raises(SignalFileError):
            read_signal(path)
        data, _ = read_signal(path, allow_partial=True)
        np.testing.assert_array_equal(data, X.astype(np.float32).astype(np.float64))

    def test_append_interrupted_before_count_update(self, tmp_path, rng):
        first, second = rng.standard_normal((3, 40)), rng.standard_normal((3, 25))
        w = SignalWriter(tmp_path / "live.sig", 3, 500.0)
        w.append(first)
        # a process killed inside append leaves the new frames without the new count
        with open(w.path, "ab") as fh:
            fh.write(np.ascontiguousarray(second.T, dtype="<f4").tobytes()[:-3])
        assert read_header(w.path).sample_count == 40

        data, fs = read_signal(w.path, allow_partial=True)
        assert fs == 500.0
        np.testing.assert_array_equal(data, first.astype(np.float32).astype(np.float64))
        w.close()

    def test_bad_header_and_missing_file(self, tmp_path):
        bogus = tmp_path / "bogus.sig"
        bogus.write_bytes(b"NOTASIGNAL\n\x00\x00")
        with pytest.raises(SignalFileError):
            read_signal(bogus)
        with pytest.raises(SignalFileError):
            read_signal(tmp_path / "missing.sig")


@pytest.mark.unit
class TestCsvConverterUnit:
    def test_export_and_import(self, tmp_path, rng):
        X = rng.standard_normal((2, 200))
        sig = write_signal(tmp_path / "a.sig", X, 1000.0)
        csv_path = export_csv(sig, tmp_path / "a.csv")
        assert csv_path.read_text().splitlines()[0] == "time_s,ch0,ch1"

        back = import_csv(csv_path, tmp_path / "b.sig")
        data, fs = read_signal(back)
        assert fs == pytest.approx(1000.0)
        np.testing.assert_allclose(data, X, rtol=1e-6, atol=1e-6)

    def test_explicit_rate(self, tmp_path):
        csv_path = tmp_path / "one.csv"
        csv_path.write_text("time_s,ch0\n0,1.5\n")
        data, fs = read_signal(import_csv(csv_path, tmp_path / "one.sig", sample_rate=250.0))
        assert fs == 250.0
        np.testing.assert_array_equal(data, [[1.5]])

    def test_bad_csv(self, tmp_path):
        csv_path = tmp_path / "bad.csv"
        csv_path.write_text("time_s,ch0\n0,1.5\n")
        with pytest.raises(SignalFileError):
            import_csv(csv_path, tmp_path / "x.sig")
        with pytest.raises(SignalFileError):
            import_csv(tmp_path / "none.csv", tmp_path / "x.sig")
