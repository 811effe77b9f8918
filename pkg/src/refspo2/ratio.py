"""AC/DC extraction, ratio-of-ratios and the reference transmittance curve."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .preprocess import PEAK, VALLEY, Extremum, Window, condition, detect_extrema

# Classical linear approximation SpO2 = 110 - 25 R.
REFERENCE_OFFSET = 110.0
REFERENCE_SLOPE = 25.0
SPO2_MIN = 50.0
SPO2_MAX = 100.0
HIGH_DC_K = 2.0


class InsufficientBeats(ValueError):
    pass


class QualityFailed(ValueError):
    pass


@dataclass(frozen=True)
class AcDc:
    red_ac: float
    red_dc: float
    ir_ac: float
    ir_dc: float
    n_beats: int

    def __post_init__(self):
        for name in ("red_ac", "red_dc", "ir_ac", "ir_dc"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and positive, got {v}")
        if self.n_beats < 2:
            raise ValueError(f"n_beats must be >= 2, got {self.n_beats}")


@dataclass(frozen=True)
class WindowSample:
    window_start: int
    r_value: float
    ref_spo2: float | None = None
    flags: dict = field(default_factory=lambda: {"high_dc_anomaly": False})

    @property
    def high_dc_anomaly(self) -> bool:
        return bool(self.flags.get("high_dc_anomaly", False))


def pulse_amplitude(detrended, extrema: list[Extremum]) -> tuple[float, int]:
    """Mean peak-to-following-valley height and the number of such beats."""
    x = np.asarray(detrended)
    heights = [
        x[a.index] - x[b.index]
        for a, b in zip(extrema, extrema[1:])
        if a.kind == PEAK and b.kind == VALLEY
    ]
    if not heights:
        return 0.0, 0
    return float(np.mean(heights)), len(heights)


def _check_beats(extrema: list[Extremum], channel: str):
    n_peaks = sum(1 for e in extrema if e.kind == PEAK)
    n_valleys = len(extrema) - n_peaks
    if n_peaks < 2 or n_valleys < 2:
        raise InsufficientBeats(
            f"{channel} channel has {n_peaks} peaks and {n_valleys} valleys; need 2 of each"
        )


def extract_ac_dc(w: Window) -> AcDc:
    """Pulsatile amplitude (detrended) and mean level (raw) of both channels."""
    if w.quality is None or not w.quality.passed:
        score = None if w.quality is None else w.quality.score
        raise QualityFailed(f"window at {w.start_index} failed the quality gate (score={score})")
    _check_beats(w.red_extrema, "red")
    _check_beats(w.ir_extrema, "ir")
    red_ac, red_n = pulse_amplitude(w.detrended_red, w.red_extrema)
    ir_ac, ir_n = pulse_amplitude(w.detrended_ir, w.ir_extrema)
    n_beats = min(red_n, ir_n)
    if n_beats < 2:
        raise InsufficientBeats(f"window at {w.start_index} has only {n_beats} complete beat(s)")
    return AcDc(
        red_ac=red_ac,
        red_dc=float(np.mean(w.raw_red)),
        ir_ac=ir_ac,
        ir_dc=float(np.mean(w.raw_ir)),
        n_beats=n_beats,
    )


def channel_ac_dc(raw, rate: float, smooth_len: int = 50) -> tuple[float, float, int]:
    """AC, DC and beat count of a single raw channel slice.

    Uses the same conditioning and extrema rules as :func:`extract_ac_dc`,
    without the cross-channel quality gate.
    """
    raw = np.asarray(raw, dtype=float)
    det = condition(raw, rate, smooth_len)
    ac, n = pulse_amplitude(det, detect_extrema(det, rate))
    return ac, float(raw.mean()), n


def compute_r(c: AcDc) -> float:
    return (c.red_ac / c.red_dc) / (c.ir_ac / c.ir_dc)


def reference_spo2(r, offset: float = REFERENCE_OFFSET, slope: float = REFERENCE_SLOPE):
    """Transmittance SpO2 from R via ``offset - slope * R``, clamped to [50, 100]."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0):
        raise ValueError("R must be positive")
    out = np.clip(offset - slope * r_arr, SPO2_MIN, SPO2_MAX)
    return float(out) if out.ndim == 0 else out


def reference_r(spo2, offset: float = REFERENCE_OFFSET, slope: float = REFERENCE_SLOPE):
    """Inverse of the unclamped reference curve."""
    return (offset - np.asarray(spo2, dtype=float)) / slope


def flag_high_dc(samples: list[WindowSample], raw_dc, k: float = HIGH_DC_K) -> list[WindowSample]:
    """Flag windows whose red DC exceeds ``k`` times the record median."""
    raw_dc = np.asarray(raw_dc, dtype=float)
    if len(samples) < 3:
        raise ValueError(f"need at least 3 windows to flag DC anomalies, got {len(samples)}")
    if raw_dc.size != len(samples):
        raise ValueError("raw_dc must align with samples")
    limit = k * np.median(raw_dc)
    return [
        replace(s, flags={**s.flags, "high_dc_anomaly": bool(dc > limit)})
        for s, dc in zip(samples, raw_dc)
    ]
