"""Per-patient SpO2-vs-R lines and five-point lateral-distance matching.

A training set holds one least-squares line per wide-range patient. A new
patient supplies five (R, SpO2) calibration pairs from the 90-95 % band; each
pair votes for the line closest to it along the R axis, and the line with
the most votes models the patient from then on.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ratio import SPO2_MAX, SPO2_MIN

MIN_SLOPE = 1e-6
MIN_RANGE_SPO2 = 15.0
CALIBRATION_BAND = (90.0, 95.0)
N_CALIBRATION = 5


class DegenerateFit(ValueError):
    pass


class DegenerateLine(ValueError):
    pass


class RangeTooNarrow(ValueError):
    pass


class EmptyTrainingSet(ValueError):
    pass


class InsufficientCalibrationPoints(ValueError):
    pass


@dataclass(frozen=True)
class PatientLine:
    patient_id: str
    slope: float
    intercept: float
    n_points: int
    fit_r2: float

    def __post_init__(self):
        if abs(self.slope) < MIN_SLOPE:
            raise DegenerateLine(f"|slope| < {MIN_SLOPE} for patient {self.patient_id}")
        if self.n_points < 2:
            raise ValueError("a line needs at least 2 points")

    def r_at(self, spo2):
        """R on this line at the given SpO2."""
        return (np.asarray(spo2, dtype=float) - self.intercept) / self.slope


@dataclass(frozen=True)
class Exclusion:
    patient_id: str
    reason: str
    detail: str = ""


@dataclass(frozen=True)
class TrainingSet:
    lines: tuple
    min_range_spo2: float = MIN_RANGE_SPO2
    exclusions: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "exclusions", tuple(self.exclusions))
        ids = [ln.patient_id for ln in self.lines]
        if len(set(ids)) != len(ids):
            raise ValueError("patient ids in a training set must be unique")

    def __len__(self):
        return len(self.lines)

    def to_json(self) -> str:
        doc = {
            "min_range_spo2": self.min_range_spo2,
            "lines": [asdict(ln) for ln in self.lines],
            "exclusions": [asdict(e) for e in self.exclusions],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TrainingSet":
        doc = json.loads(text)
        return cls(
            lines=tuple(PatientLine(**d) for d in doc["lines"]),
            min_range_spo2=float(doc.get("min_range_spo2", MIN_RANGE_SPO2)),
            exclusions=tuple(Exclusion(**d) for d in doc.get("exclusions", [])),
        )

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "TrainingSet":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class CalibrationSet:
    points: tuple
    band: tuple = CALIBRATION_BAND
    window_starts: tuple = field(default=(), compare=False)

    def __post_init__(self):
        pts = tuple((float(r), float(s)) for r, s in self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) != N_CALIBRATION:
            raise ValueError(f"a calibration set has exactly {N_CALIBRATION} points, got {len(pts)}")
        lo, hi = self.band
        for r, s in pts:
            if not (np.isfinite(r) and r > 0):
                raise ValueError(f"calibration R must be finite and positive, got {r}")
            if not lo <= s <= hi:
                raise ValueError(f"calibration SpO2 {s} outside [{lo}, {hi}]")


def fit_patient_line(pairs, patient_id: str = "", min_range: float | None = None) -> PatientLine:
    """Ordinary least squares of SpO2 on R.

    With ``min_range`` set, the pairs' SpO2 span must exceed it strictly, as
    required for admission to a training set.
    """
    arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
    r, s = arr[:, 0], arr[:, 1]
    if min_range is not None:
        span = float(np.ptp(s)) if s.size else 0.0
        if not span > min_range:
            raise RangeTooNarrow(f"SpO2 span {span:.3f} does not exceed {min_range}")
    if r.size < 2 or np.all(r == r[0]):
        raise DegenerateFit("need at least two distinct R values")
    rc = r - r.mean()
    sc = s - s.mean()
    slope = float(np.dot(rc, sc) / np.dot(rc, rc))
    intercept = float(s.mean() - slope * r.mean())
    if abs(slope) < MIN_SLOPE:
        raise DegenerateFit(f"fitted slope {slope} is degenerate")
    ss_tot = float(np.dot(sc, sc))
    resid = s - (slope * r + intercept)
    fit_r2 = 1.0 - float(np.dot(resid, resid)) / ss_tot if ss_tot > 0 else 1.0
    return PatientLine(patient_id, slope, intercept, int(r.size), fit_r2)


def lateral_distance(p, line: PatientLine) -> float:
    """Gap along the R axis between point ``(r, spo2)`` and ``line``."""
    if abs(line.slope) < MIN_SLOPE:
        raise DegenerateLine("cannot measure lateral distance to a flat line")
    r, spo2 = p
    return abs(r - (spo2 - line.intercept) / line.slope)


def ld_table(g: CalibrationSet, lines) -> np.ndarray:
    """Lateral distances, shape ``(n_points, n_lines)``."""
    pts = np.asarray(g.points)
    slopes = np.array([ln.slope for ln in lines])
    intercepts = np.array([ln.intercept for ln in lines])
    if np.any(np.abs(slopes) < MIN_SLOPE):
        raise DegenerateLine("training set contains a flat line")
    return np.abs(pts[:, :1] - (pts[:, 1:] - intercepts) / slopes)


@dataclass(frozen=True)
class Match:
    line: PatientLine
    votes: dict
    total_ld: dict


def match(g: CalibrationSet, t: TrainingSet) -> Match:
    """Vote-based line selection with full bookkeeping.

    Each point votes for its nearest line. Ties in votes go to the smaller
    summed distance over all points, then to the smaller patient id; a point
    equidistant to several lines votes for the smallest id.
    """
    if len(t) == 0:
        raise EmptyTrainingSet("training set has no lines")
    lines = sorted(t.lines, key=lambda ln: ln.patient_id)
    table = ld_table(g, lines)
    votes = np.bincount(np.argmin(table, axis=1), minlength=len(lines))
    totals = table.sum(axis=0)
    best = min(range(len(lines)), key=lambda j: (-votes[j], totals[j], lines[j].patient_id))
    return Match(
        line=lines[best],
        votes={ln.patient_id: int(v) for ln, v in zip(lines, votes)},
        total_ld={ln.patient_id: float(d) for ln, d in zip(lines, totals)},
    )


def match_line(g: CalibrationSet, t: TrainingSet) -> PatientLine:
    return match(g, t).line


def estimate_spo2(line: PatientLine, r):
    """``slope * r + intercept`` clamped to [50, 100]."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0):
        raise ValueError("R must be positive")
    out = np.clip(line.slope * r_arr + line.intercept, SPO2_MIN, SPO2_MAX)
    return float(out) if out.ndim == 0 else out


def build_training_set(patient_series: dict, min_range: float = MIN_RANGE_SPO2) -> TrainingSet:
    """Fit one line per patient whose SpO2 span exceeds ``min_range``.

    ``patient_series`` maps patient id to a sequence of ``(r, spo2)`` pairs.
    Patients that fail admission are listed in ``exclusions``.
    """
    if not patient_series:
        raise ValueError("no patients given")
    lines, excluded = [], []
    for pid in sorted(patient_series):
        try:
            lines.append(fit_patient_line(patient_series[pid], pid, min_range=min_range))
        except (RangeTooNarrow, DegenerateFit, DegenerateLine) as exc:
            excluded.append(Exclusion(pid, type(exc).__name__, str(exc)))
    if not lines:
        raise EmptyTrainingSet(f"no patient has an SpO2 span above {min_range}")
    return TrainingSet(tuple(lines), min_range, tuple(excluded))


def select_calibration_points(
    r_values, spo2, window_starts=None, band: tuple = CALIBRATION_BAND
) -> CalibrationSet:
    """Pick five windows whose SpO2 is nearest to evenly spaced band targets.

    Each target takes the closest unused in-band window; ties go to the
    earlier window.
    """
    r_values = np.asarray(r_values, dtype=float)
    spo2 = np.asarray(spo2, dtype=float)
    starts = np.arange(r_values.size) if window_starts is None else np.asarray(window_starts)
    lo, hi = band
    in_band = np.flatnonzero((spo2 >= lo) & (spo2 <= hi))
    if in_band.size < N_CALIBRATION:
        raise InsufficientCalibrationPoints(
            f"{in_band.size} window(s) in the [{lo}, {hi}] band; {N_CALIBRATION} required"
        )
    chosen: list[int] = []
    for target in np.linspace(lo, hi, N_CALIBRATION):
        free = [i for i in in_band if i not in chosen]
        chosen.append(min(free, key=lambda i: (abs(spo2[i] - target), starts[i])))
    chosen.sort(key=lambda i: starts[i])
    return CalibrationSet(
        points=tuple((r_values[i], spo2[i]) for i in chosen),
        band=tuple(band),
        window_starts=tuple(int(starts[i]) for i in chosen),
    )
