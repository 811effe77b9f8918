import csv
import json

import numpy as np
import pytest

from conftest import sine_record
from refspo2 import io
from refspo2.cli import FEATURES_HEADER, PREDICTIONS_HEADER, main
from refspo2.preprocess import PpgRecord

CLEAN = {"noise_sigma": 0.0, "wander_amplitude": 0.0, "duration_s": 300.0}


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cohort.json"
    cfg.write_text(json.dumps(CLEAN))
    out = root / "cohort"
    assert main(["synth", "--patients", "4", "--seed", "3", "--out", str(out), "--cohort-config", str(cfg)]) == 0
    assert main(["pipeline", "--cohort", str(out)]) == 0
    return out


def test_synth_layout_and_manifest(cohort):
    manifest = json.loads((cohort / "manifest.json").read_text())
    ids = [p["patient_id"] for p in manifest["patients"]]
    assert ids == ["P01", "P02", "P03", "P04"] and manifest["seed"] == 3
    for pid in ids:
        for name in ("transmittance", "reflectance", "truth"):
            assert (cohort / pid / f"{name}.csv").exists()
        assert _rows(cohort / pid / "pairs.csv")


def test_synth_rerun_byte_identical(tmp_path):
    args = ["synth", "--patients", "2", "--seed", "9", "--duration", "60", "--compress"]
    main(args + ["--out", str(tmp_path / "a")])
    main(args + ["--out", str(tmp_path / "b")])
    for rel in ("P01/reflectance.csv.gz", "P02/truth.csv.gz", "manifest.json"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_synth_zero_patients_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--patients", "0", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_missing_input_exits_1(tmp_path, capsys):
    code = main(["pipeline", "--reflectance", str(tmp_path / "none.csv"), "--out-dir", str(tmp_path)])
    assert code == 1 and "no such file" in capsys.readouterr().err


def test_pipeline_features_header(cohort):
    with open(cohort / "P01" / "features.csv") as fh:
        assert fh.readline().strip().split(",") == FEATURES_HEADER


def test_pipeline_all_windows_fail_quality(tmp_path, caplog):
    _, red = sine_record(seconds=20.0)
    path = tmp_path / "bad" / "reflectance.csv"
    io.write_waveform(path, PpgRecord("bad", 600.0, red, 5.0 - red))
    code = main(["pipeline", "--reflectance", str(path), "--out-dir", str(tmp_path / "out")])
    assert code == 0
    assert _rows(tmp_path / "out" / "pairs.csv") == []
    assert "no usable windows" in caplog.text


def test_trainset_calibrate_report(cohort, tmp_path):
    ts = tmp_path / "ts.json"
    assert main(["trainset", "--cohort", str(cohort), "--out", str(ts)]) == 0
    lines = json.loads(ts.read_text())["lines"]
    assert {ln["patient_id"] for ln in lines} == {"P01", "P02", "P03", "P04"}

    pred = tmp_path / "pred.csv"
    assert main(["calibrate", "--trainset", str(ts), "--pairs", str(cohort / "P02" / "pairs.csv"),
                 "--out", str(pred)]) == 0
    rows = _rows(pred)
    assert list(rows[0]) == PREDICTIONS_HEADER
    assert sum(r["calibration_point"] == "1" for r in rows) == 5
    # A noise-free patient recovers its own line, so estimates match the reference.
    assert {r["selected_line"] for r in rows} == {"P02"}
    err = [abs(float(r["predicted_spo2"]) - float(r["ref_spo2"])) for r in rows]
    assert max(err) < 1e-6

    rep = tmp_path / "rep"
    assert main(["report", "--predictions", str(pred), "--out-dir", str(rep)]) == 0
    mae = _rows(rep / "per_patient_mae.csv")
    assert [r["patient_id"] for r in mae] == ["P02", "average"] and float(mae[0]["mae"]) < 1e-6
    assert _rows(rep / "box_stats.csv")[0]["patient_id"] == "P02"
    summary = [r for r in _rows(rep / "bland_altman.csv") if r["row"] == "summary"]
    assert len(summary) == 1 and float(summary[0]["pct_within_band"]) == 1.0


def test_calibrate_explicit_points(cohort, tmp_path):
    ts = tmp_path / "ts.json"
    main(["trainset", "--cohort", str(cohort), "--out", str(ts)])
    line = next(ln for ln in json.loads(ts.read_text())["lines"] if ln["patient_id"] == "P03")
    cal = []
    for s in np.linspace(90, 95, 5):
        cal += ["--cal", f"{(s - line['intercept']) / line['slope']:.12g},{s:.12g}"]
    pred = tmp_path / "p.csv"
    assert main(["calibrate", "--trainset", str(ts), "--pairs", str(cohort / "P01" / "pairs.csv"),
                 "--out", str(pred)] + cal) == 0
    assert {r["selected_line"] for r in _rows(pred)} == {"P03"}


def test_calibrate_insufficient_band_windows(tmp_path, cohort, capsys):
    ts = tmp_path / "ts.json"
    main(["trainset", "--cohort", str(cohort), "--out", str(ts)])
    pairs = tmp_path / "x" / "pairs.csv"
    io.write_rows(pairs, io.PAIRS_HEADER, [(i * 1800, 0.5, 97.0 if i > 2 else 92.0, 0) for i in range(10)])
    code = main(["calibrate", "--trainset", str(ts), "--pairs", str(pairs), "--out", str(tmp_path / "o.csv")])
    assert code == 1 and "5 required" in capsys.readouterr().err


def test_calibrate_bad_cal_is_usage_error(tmp_path, cohort):
    ts = tmp_path / "ts.json"
    main(["trainset", "--cohort", str(cohort), "--out", str(ts)])
    with pytest.raises(SystemExit) as exc:
        main(["calibrate", "--trainset", str(ts), "--pairs", str(cohort / "P01" / "pairs.csv"),
              "--out", str(tmp_path / "o.csv"), "--cal", "abc"])
    assert exc.value.code == 2


def test_baseline_report(cohort, tmp_path):
    out = tmp_path / "baseline.csv"
    assert main(["baseline", "--cohort", str(cohort), "--test-patients", "P03", "P04", "--out", str(out)]) == 0
    rows = _rows(out)
    assert list(rows[0]) == ["model", "avg_mse", "avg_mae", "avg_r2", "split"]
    assert [r["split"] for r in rows] == ["validation", "test"]
    assert all(np.isfinite(float(r["avg_mae"])) for r in rows)


def test_report_svg(cohort, tmp_path):
    pytest.importorskip("matplotlib")
    ts, pred = tmp_path / "ts.json", tmp_path / "pred.csv"
    main(["trainset", "--cohort", str(cohort), "--out", str(ts)])
    main(["calibrate", "--trainset", str(ts), "--pairs", str(cohort / "P01" / "pairs.csv"), "--out", str(pred)])
    assert main(["report", "--predictions", str(pred), "--out-dir", str(tmp_path / "r"), "--svg"]) == 0
    assert (tmp_path / "r" / "bland_altman_P01.svg").exists()
    assert (tmp_path / "r" / "box_stats.svg").exists()
