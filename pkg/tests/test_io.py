import numpy as np
import pytest

from refspo2 import io
from refspo2.preprocess import PpgRecord
from refspo2.ratio import WindowSample


def test_waveform_roundtrip(tmp_path, tiny_record):
    path = tmp_path / "P01" / "reflectance.csv"
    io.write_waveform(path, tiny_record)
    back = io.read_waveform(path)
    assert back.patient_id == "P01" and back.rate == tiny_record.rate
    np.testing.assert_allclose(back.red, tiny_record.red, rtol=1e-11)
    np.testing.assert_allclose(back.ir, tiny_record.ir, rtol=1e-11)


def test_gzip_byte_identical(tmp_path, tiny_record):
    a, b = tmp_path / "a.csv.gz", tmp_path / "b.csv.gz"
    io.write_waveform(a, tiny_record)
    io.write_waveform(b, tiny_record)
    assert a.read_bytes() == b.read_bytes()
    np.testing.assert_allclose(io.read_waveform(a).red, tiny_record.red, rtol=1e-11)


def test_truth_roundtrip(tmp_path):
    t, s = np.arange(5) / 600, np.array([97.0, 96.5, 96.0, 95.5, 95.0])
    io.write_truth(tmp_path / "truth.csv", t, s)
    t2, s2 = io.read_truth(tmp_path / "truth.csv")
    np.testing.assert_allclose(t2, t)
    np.testing.assert_array_equal(s2, s)


def test_pairs_roundtrip(tmp_path):
    samples = [WindowSample(0, 0.61, 94.75), WindowSample(1800, 0.72, None, {"high_dc_anomaly": True})]
    io.write_pairs(tmp_path / "pairs.csv", samples)
    back = io.read_pairs(tmp_path / "pairs.csv")
    assert [(s.window_start, s.r_value, s.ref_spo2, s.high_dc_anomaly) for s in back] == [
        (0, 0.61, 94.75, False),
        (1800, 0.72, None, True),
    ]


def test_malformed_numeric_reports_line(tmp_path):
    path = tmp_path / "w.csv"
    path.write_text("t,red,ir\n0,1,2\n0.1,oops,2\n")
    with pytest.raises(io.CsvFormatError, match="line 3"):
        io.read_waveform(path)


def test_wrong_header_and_field_count(tmp_path):
    path = tmp_path / "w.csv"
    path.write_text("t,green,ir\n0,1,2\n")
    with pytest.raises(io.CsvFormatError, match="line 1"):
        io.read_waveform(path)
    path.write_text("window_start,r_value,ref_spo2,high_dc_anomaly\n0,1,95,0\n1800,1\n")
    with pytest.raises(io.CsvFormatError, match="line 3"):
        io.read_pairs(path)


def test_nonfinite_rejected(tmp_path):
    path = tmp_path / "w.csv"
    path.write_text("t,red,ir\n0,1,2\n0.1,nan,2\n")
    with pytest.raises(io.CsvFormatError, match="line 3"):
        io.read_waveform(path)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        io.read_pairs(tmp_path / "absent.csv")


def test_fmt():
    assert [io.fmt(v) for v in (True, None, 3, 0.1, "x")] == ["1", "", "3", "0.1", "x"]


def test_calibration_csv(tmp_path):
    path = tmp_path / "cal.csv"
    path.write_text("r_value,spo2\n0.6,95\n0.7,92.5\n")
    assert io.read_calibration_csv(path) == [(0.6, 95.0), (0.7, 92.5)]


def test_rate_inferred_from_time(tmp_path):
    rec = PpgRecord("x", 250.0, np.ones(100), np.ones(100))
    io.write_waveform(tmp_path / "x.csv", rec)
    assert io.read_waveform(tmp_path / "x.csv").rate == 250.0
