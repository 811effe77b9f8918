"""CSV and JSON formats exchanged between pipeline stages.

Waveforms are ``t,red,ir``; truth series ``t,spo2``; window pairs
``window_start,r_value,ref_spo2,high_dc_anomaly``. Files ending in ``.gz``
are written with a zeroed gzip timestamp so reruns stay byte-identical.
"""
from __future__ import annotations

import csv
import gzip
import io
import json
from pathlib import Path

import numpy as np

from .preprocess import PpgRecord
from .ratio import WindowSample

FLOAT_FMT = "%.12g"


class CsvFormatError(ValueError):
    pass


class _ClosingWrapper(io.TextIOWrapper):
    """Text wrapper over a gzip stream that also closes the underlying file."""

    def __init__(self, gz, raw):
        super().__init__(gz, newline="")
        self._raw = raw

    def close(self):
        super().close()
        self._raw.close()


def _open_write(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".gz":
        raw = open(path, "wb")
        gz = gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0)
        return _ClosingWrapper(gz, raw)
    return open(path, "w", newline="")


def _open_read(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), newline="")
    return open(path, newline="")


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    return str(v)


def write_rows(path, header: list[str], rows) -> None:
    with _open_write(path) as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_columns(path, header: list[str], columns) -> None:
    """Write equally long numeric columns."""
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    with _open_write(path) as fh:
        np.savetxt(fh, data, fmt=FLOAT_FMT, delimiter=",", header=",".join(header), comments="")


def read_table(path, expected: list[str]) -> dict[str, list[str]]:
    """Read a small CSV with a required header into string columns."""
    with _open_read(path) as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        missing = [c for c in expected if c not in header]
        if missing:
            raise CsvFormatError(f"{path}: line 1: missing column(s) {missing}; header is {header}")
        cols: dict[str, list[str]] = {c: [] for c in header}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            for c, v in zip(header, row):
                cols[c].append(v)
    return cols


def read_numeric(path, expected: list[str]) -> dict[str, np.ndarray]:
    """Fast numeric CSV reader that reports the first malformed line."""
    with _open_read(path) as fh:
        header = fh.readline().strip().split(",")
        if header != expected:
            raise CsvFormatError(f"{path}: line 1: expected header {','.join(expected)}, got {','.join(header)}")
        text = fh.read()
    try:
        data = np.loadtxt(io.StringIO(text), delimiter=",", ndmin=2)
    except ValueError:
        data = None
    if data is None or data.shape[1:] != (len(expected),) or not np.all(np.isfinite(data)):
        for lineno, line in enumerate(text.splitlines(), start=2):
            parts = line.split(",")
            try:
                ok = len(parts) == len(expected) and all(np.isfinite(float(p)) for p in parts)
            except ValueError:
                ok = False
            if not ok:
                raise CsvFormatError(f"{path}: line {lineno}: cannot parse {line!r}")
        raise CsvFormatError(f"{path}: malformed numeric table")
    return {c: data[:, i] for i, c in enumerate(expected)}


def write_waveform(path, rec: PpgRecord) -> None:
    t = np.arange(len(rec)) / rec.rate
    write_columns(path, ["t", "red", "ir"], [t, rec.red, rec.ir])


def read_waveform(path, patient_id: str = "", site: str = "finger", rate: float | None = None) -> PpgRecord:
    """Load ``t,red,ir``; the rate is inferred from the time column if not given."""
    cols = read_numeric(path, ["t", "red", "ir"])
    if rate is None:
        if cols["t"].size < 2:
            raise CsvFormatError(f"{path}: need two samples to infer the sampling rate")
        span = cols["t"][-1] - cols["t"][0]
        if not span > 0:
            raise CsvFormatError(f"{path}: time column must increase")
        rate = float(round((cols["t"].size - 1) / span, 6))
    return PpgRecord(patient_id or Path(path).parent.name, rate, cols["red"], cols["ir"], site=site)


def write_truth(path, t, spo2) -> None:
    write_columns(path, ["t", "spo2"], [t, spo2])


def read_truth(path) -> tuple[np.ndarray, np.ndarray]:
    cols = read_numeric(path, ["t", "spo2"])
    return cols["t"], cols["spo2"]


PAIRS_HEADER = ["window_start", "r_value", "ref_spo2", "high_dc_anomaly"]


def write_pairs(path, samples: list[WindowSample]) -> None:
    write_rows(
        path,
        PAIRS_HEADER,
        ((s.window_start, s.r_value, s.ref_spo2, s.high_dc_anomaly) for s in samples),
    )


def read_pairs(path) -> list[WindowSample]:
    cols = read_table(path, PAIRS_HEADER)
    out = []
    for lineno, (ws, r, ref, flag) in enumerate(
        zip(cols["window_start"], cols["r_value"], cols["ref_spo2"], cols["high_dc_anomaly"]), start=2
    ):
        try:
            out.append(
                WindowSample(
                    int(ws),
                    float(r),
                    float(ref) if ref != "" else None,
                    {"high_dc_anomaly": flag.strip().lower() in ("1", "true")},
                )
            )
        except ValueError as exc:
            raise CsvFormatError(f"{path}: line {lineno}: {exc}") from None
    return out


def read_calibration_csv(path) -> list[tuple[float, float]]:
    cols = read_table(path, ["r_value", "spo2"])
    try:
        return [(float(r), float(s)) for r, s in zip(cols["r_value"], cols["spo2"])]
    except ValueError as exc:
        raise CsvFormatError(f"{path}: {exc}") from None


def write_json(path, doc) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return json.loads(path.read_text())
