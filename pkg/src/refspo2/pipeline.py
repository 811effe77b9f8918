"""Record-level analysis and the calibrate-then-estimate experiment.

``analyze_pair`` turns a reflectance record (plus an optional transmittance
record for labels) into per-window R values, reference SpO2, anomaly flags
and baseline features. ``calibrate_patient`` and ``run_calibration`` chain
those results through the training-set / five-point matching method.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baseline import FeatureVector
from .calibrate import (
    CalibrationSet,
    Match,
    TrainingSet,
    build_training_set,
    estimate_spo2,
    match,
    select_calibration_points,
)
from .config import RunConfig
from .preprocess import PEAK, PpgRecord, Window, segment_windows
from .ratio import AcDc, WindowSample, compute_r, extract_ac_dc, flag_high_dc, reference_spo2


@dataclass(frozen=True)
class Diagnostic:
    start_index: int
    score: float
    passed: bool
    n_peaks_red: int
    n_peaks_ir: int


@dataclass
class PairAnalysis:
    patient_id: str
    samples: list[WindowSample]
    acdc: list[AcDc]
    features: list[FeatureVector | None]
    diagnostics: list[Diagnostic]
    skipped: list[tuple[int, str]] = field(default_factory=list)

    def labelled(self, exclude_anomalies: bool = True) -> list[WindowSample]:
        return [
            s
            for s in self.samples
            if s.ref_spo2 is not None and not (exclude_anomalies and s.high_dc_anomaly)
        ]

    def series(self, exclude_anomalies: bool = True) -> np.ndarray:
        """``(n, 2)`` array of (R, reference SpO2) pairs."""
        rows = [(s.r_value, s.ref_spo2) for s in self.labelled(exclude_anomalies)]
        return np.asarray(rows, dtype=float).reshape(-1, 2)


def _windows(rec: PpgRecord, cfg: RunConfig) -> list[Window]:
    return segment_windows(rec, cfg.window_s, cfg.overlap, cfg.quality_threshold, cfg.smooth_len)


def _try_acdc(w: Window) -> tuple[AcDc | None, str]:
    try:
        return extract_ac_dc(w), ""
    except ValueError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _heart_rate_hz(w: Window, rate: float) -> float:
    peaks = [e.index for e in w.ir_extrema if e.kind == PEAK]
    return float(rate / np.median(np.diff(peaks)))


def analyze_pair(
    reflectance: PpgRecord, transmittance: PpgRecord | None = None, config: RunConfig | None = None
) -> PairAnalysis:
    """Window both records and compute per-window R and reference SpO2.

    Windows failing the quality gate or beat requirements in either record are
    skipped with a reason. Anomaly flags need at least three usable windows.
    """
    cfg = config or RunConfig()
    if transmittance is not None and len(transmittance) != len(reflectance):
        raise ValueError("transmittance and reflectance records must have equal length")
    refl_windows = _windows(reflectance, cfg)
    trans_windows = {w.start_index: w for w in _windows(transmittance, cfg)} if transmittance else {}

    samples, acdcs, windows, skipped = [], [], [], []
    for w in refl_windows:
        c, why = _try_acdc(w)
        if c is None:
            skipped.append((w.start_index, f"reflectance {why}"))
            continue
        ref = None
        if transmittance is not None:
            ct, why_t = _try_acdc(trans_windows[w.start_index])
            if ct is None:
                skipped.append((w.start_index, f"transmittance {why_t}"))
                continue
            ref = reference_spo2(compute_r(ct), *cfg.reference_curve)
        samples.append(WindowSample(w.start_index, compute_r(c), ref))
        acdcs.append(c)
        windows.append(w)

    if len(samples) >= 3:
        samples = flag_high_dc(samples, [c.red_dc for c in acdcs], cfg.high_dc_k)

    features = [
        FeatureVector.from_window(c, s.r_value, _heart_rate_hz(w, reflectance.rate), s.ref_spo2)
        if s.ref_spo2 is not None
        else None
        for s, c, w in zip(samples, acdcs, windows)
    ]
    diagnostics = [
        Diagnostic(w.start_index, w.quality.score, w.quality.passed, w.n_peaks_red, w.n_peaks_ir)
        for w in refl_windows
    ]
    return PairAnalysis(reflectance.patient_id, samples, acdcs, features, diagnostics, skipped)


@dataclass
class PatientEstimate:
    patient_id: str
    match: Match
    calibration: CalibrationSet
    window_start: np.ndarray
    r_value: np.ndarray
    ref_spo2: np.ndarray
    predicted: np.ndarray
    anomaly: np.ndarray

    @property
    def line_id(self) -> str:
        return self.match.line.patient_id

    def errors(self, include_anomalies: bool = True) -> np.ndarray:
        keep = np.ones_like(self.anomaly) if include_anomalies else ~self.anomaly
        return (self.predicted - self.ref_spo2)[keep.astype(bool)]

    def mae(self, include_anomalies: bool = True) -> float:
        return float(np.mean(np.abs(self.errors(include_anomalies))))


def calibrate_patient(
    analysis: PairAnalysis, trainset: TrainingSet, config: RunConfig | None = None
) -> PatientEstimate:
    """Select a line from five in-band windows and estimate every labelled window.

    Calibration points never come from anomaly-flagged windows; estimates are
    produced for all labelled windows, flagged or not, so that the effect of
    excluding them can be measured.
    """
    cfg = config or RunConfig()
    usable = analysis.labelled(exclude_anomalies=cfg.exclude_anomalies)
    g = select_calibration_points(
        [s.r_value for s in usable],
        [s.ref_spo2 for s in usable],
        [s.window_start for s in usable],
        band=cfg.calibration_band,
    )
    m = match(g, trainset)
    every = analysis.labelled(exclude_anomalies=False)
    r = np.array([s.r_value for s in every])
    return PatientEstimate(
        patient_id=analysis.patient_id,
        match=m,
        calibration=g,
        window_start=np.array([s.window_start for s in every], dtype=int),
        r_value=r,
        ref_spo2=np.array([s.ref_spo2 for s in every]),
        predicted=np.atleast_1d(estimate_spo2(m.line, r)),
        anomaly=np.array([s.high_dc_anomaly for s in every], dtype=bool),
    )


def training_set_from(analyses, config: RunConfig | None = None) -> TrainingSet:
    cfg = config or RunConfig()
    series = {a.patient_id: a.series(cfg.exclude_anomalies) for a in analyses}
    return build_training_set(series, cfg.min_range_spo2)


def run_calibration(train, test, config: RunConfig | None = None) -> tuple[TrainingSet, list[PatientEstimate]]:
    """Build the training set from ``train`` analyses and estimate each of ``test``."""
    cfg = config or RunConfig()
    trainset = training_set_from(train, cfg)
    return trainset, [calibrate_patient(a, trainset, cfg) for a in test]
