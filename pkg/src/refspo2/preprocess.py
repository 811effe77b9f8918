"""Windowed preprocessing of two-channel (red/IR) PPG records.

The chain applied to every analysis window is

1. a centered moving-average smoother (50 samples by default),
2. baseline removal by subtracting a 1 s moving average,
3. peak/valley detection with spacing-based pruning,
4. a red-vs-IR correlation quality gate.

Records are cut into 4 s windows with 25 % overlap before the chain runs, so
every window is processed independently of its neighbours.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.signal import find_peaks

DEFAULT_RATE = 600.0
SMOOTH_LEN = 50
WINDOW_S = 4.0
OVERLAP = 0.25
QUALITY_THRESHOLD = 0.9
PROMINENCE_FRACTION = 0.25
PRUNE_FRACTION = 0.5

SITES = ("finger", "wrist", "forehead", "transmittance-finger")

PEAK = "peak"
VALLEY = "valley"


class Extremum(NamedTuple):
    index: int
    kind: str


@dataclass(frozen=True)
class PpgRecord:
    """Raw red/IR intensity samples for one patient and probe."""

    patient_id: str
    rate: float
    red: np.ndarray
    ir: np.ndarray
    site: str = "finger"

    def __post_init__(self):
        red = np.asarray(self.red, dtype=float)
        ir = np.asarray(self.ir, dtype=float)
        if red.ndim != 1 or ir.ndim != 1:
            raise ValueError("red and ir must be one-dimensional")
        if red.size < 1 or red.size != ir.size:
            raise ValueError(
                f"red and ir must have equal non-zero length, got {red.size} and {ir.size}"
            )
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        if not (np.all(np.isfinite(red)) and np.all(np.isfinite(ir))):
            raise ValueError("samples must be finite")
        if self.site not in SITES:
            raise ValueError(f"unknown site {self.site!r}; expected one of {SITES}")
        object.__setattr__(self, "red", red)
        object.__setattr__(self, "ir", ir)

    def __len__(self):
        return self.red.size

    @property
    def duration(self) -> float:
        return self.red.size / self.rate


@dataclass(frozen=True)
class Quality:
    passed: bool
    score: float


@dataclass
class Window:
    """One analysis segment of a record."""

    start_index: int
    raw_red: np.ndarray
    raw_ir: np.ndarray
    detrended_red: np.ndarray
    detrended_ir: np.ndarray
    red_extrema: list[Extremum] = field(default_factory=list)
    ir_extrema: list[Extremum] = field(default_factory=list)
    quality: Quality | None = None

    @property
    def n_peaks_red(self) -> int:
        return sum(1 for e in self.red_extrema if e.kind == PEAK)

    @property
    def n_peaks_ir(self) -> int:
        return sum(1 for e in self.ir_extrema if e.kind == PEAK)


def moving_average(x, length: int = SMOOTH_LEN) -> np.ndarray:
    """Centered moving average whose window shrinks at the series edges.

    Element ``i`` is the mean of ``x[i - length//2 : i + length - length//2]``
    clipped to the valid index range. For even ``length`` the window reaches
    one sample further back than forward.
    """
    x = np.asarray(x, dtype=float)
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    if x.size == 0:
        raise ValueError("series must be non-empty")
    n = x.size
    # Removing the mean first keeps the running sum small, which bounds the
    # cancellation error of the cumulative-sum trick.
    offset = x.mean()
    csum = np.concatenate(([0.0], np.cumsum(x - offset)))
    idx = np.arange(n)
    lo = np.clip(idx - length // 2, 0, n)
    hi = np.clip(idx + length - length // 2, 0, n)
    out = (csum[hi] - csum[lo]) / (hi - lo) + offset
    # Averages can overshoot the data range by an ulp; the bound is a contract.
    return np.clip(out, x.min(), x.max())


def detrend(x, rate: float) -> np.ndarray:
    """Subtract a 1 s moving-average baseline."""
    x = np.asarray(x, dtype=float)
    baseline_len = int(round(rate))
    if baseline_len < 1:
        raise ValueError(f"rate too low for a 1 s baseline: {rate}")
    if x.size < baseline_len:
        raise ValueError(
            f"series of {x.size} samples is shorter than the {baseline_len}-sample baseline window"
        )
    return x - moving_average(x, baseline_len)


def _prune_by_spacing(indices: np.ndarray) -> np.ndarray:
    if indices.size < 2:
        return indices
    min_gap = PRUNE_FRACTION * np.median(np.diff(indices))
    kept = [indices[0]]
    for i in indices[1:]:
        if i - kept[-1] >= min_gap:
            kept.append(i)
    return np.asarray(kept, dtype=int)


def detect_extrema(x, rate: float) -> list[Extremum]:
    """Find alternating peaks and valleys of a detrended pulse waveform.

    Candidates need a prominence of at least a quarter of the series'
    peak-to-peak amplitude, so the result does not change when ``x`` is scaled
    by a positive factor. Candidates closer than half the median same-kind
    spacing to the previously kept one are dropped, and runs of same-kind
    extrema collapse to the most extreme member.

    Returns an empty list when fewer than two peaks survive.
    """
    x = np.asarray(x, dtype=float)
    min_len = int(np.ceil(2 * 60.0 / 40.0 * rate))
    if x.size < min_len:
        raise ValueError(
            f"need at least {min_len} samples (two beats at 40 bpm), got {x.size}"
        )
    amp = float(np.ptp(x))
    if amp == 0.0:
        return []
    prominence = PROMINENCE_FRACTION * amp
    peaks, _ = find_peaks(x, prominence=prominence)
    valleys, _ = find_peaks(-x, prominence=prominence)
    peaks = _prune_by_spacing(peaks)
    valleys = _prune_by_spacing(valleys)

    merged = sorted(
        [Extremum(int(i), PEAK) for i in peaks] + [Extremum(int(i), VALLEY) for i in valleys]
    )
    out: list[Extremum] = []
    for e in merged:
        if out and out[-1].kind == e.kind:
            prev = out[-1]
            more_extreme = x[e.index] > x[prev.index] if e.kind == PEAK else x[e.index] < x[prev.index]
            if more_extreme:
                out[-1] = e
            continue
        out.append(e)

    if sum(1 for e in out if e.kind == PEAK) < 2:
        return []
    return out


def quality_check(w: Window, threshold: float = QUALITY_THRESHOLD) -> Window:
    """Set ``w.quality`` from the zero-lag Pearson correlation of the channels."""
    red = np.asarray(w.detrended_red, dtype=float)
    ir = np.asarray(w.detrended_ir, dtype=float)
    if red.size == 0 or red.size != ir.size:
        raise ValueError("both detrended channels must be present and equally long")
    rc = red - red.mean()
    ic = ir - ir.mean()
    denom = np.sqrt(np.dot(rc, rc) * np.dot(ic, ic))
    if denom == 0.0:
        w.quality = Quality(passed=False, score=0.0)
        return w
    score = float(np.clip(np.dot(rc, ic) / denom, -1.0, 1.0))
    w.quality = Quality(passed=score >= threshold, score=score)
    return w


def window_geometry(rate: float, win_s: float = WINDOW_S, overlap: float = OVERLAP) -> tuple[int, int]:
    """Return ``(length, hop)`` in samples."""
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")
    length = int(round(win_s * rate))
    if length < 1:
        raise ValueError("window length rounds to zero samples")
    hop = int(round(length * (1.0 - overlap)))
    if hop < 1:
        raise ValueError("hop rounds to zero samples")
    return length, hop


def window_starts(n: int, rate: float, win_s: float = WINDOW_S, overlap: float = OVERLAP) -> np.ndarray:
    length, hop = window_geometry(rate, win_s, overlap)
    if n < length:
        raise ValueError(f"record of {n} samples is shorter than one {length}-sample window")
    count = (n - length) // hop + 1
    return np.arange(count) * hop


def condition(raw, rate: float, smooth_len: int = SMOOTH_LEN) -> np.ndarray:
    """Smooth then detrend one raw channel slice."""
    return detrend(moving_average(raw, smooth_len), rate)


def process_window(
    raw_red,
    raw_ir,
    rate: float,
    start_index: int = 0,
    threshold: float = QUALITY_THRESHOLD,
    smooth_len: int = SMOOTH_LEN,
) -> Window:
    raw_red = np.asarray(raw_red, dtype=float)
    raw_ir = np.asarray(raw_ir, dtype=float)
    w = Window(
        start_index=int(start_index),
        raw_red=raw_red,
        raw_ir=raw_ir,
        detrended_red=condition(raw_red, rate, smooth_len),
        detrended_ir=condition(raw_ir, rate, smooth_len),
    )
    w.red_extrema = detect_extrema(w.detrended_red, rate)
    w.ir_extrema = detect_extrema(w.detrended_ir, rate)
    return quality_check(w, threshold)


def segment_windows(
    rec: PpgRecord,
    win_s: float = WINDOW_S,
    overlap: float = OVERLAP,
    threshold: float = QUALITY_THRESHOLD,
    smooth_len: int = SMOOTH_LEN,
) -> list[Window]:
    """Cut ``rec`` into overlapping windows and run the full chain on each."""
    length, _ = window_geometry(rec.rate, win_s, overlap)
    return [
        process_window(
            rec.red[s : s + length],
            rec.ir[s : s + length],
            rec.rate,
            start_index=int(s),
            threshold=threshold,
            smooth_len=smooth_len,
        )
        for s in window_starts(len(rec), rec.rate, win_s, overlap)
    ]
