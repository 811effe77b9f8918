"""Seeded synthetic cohorts of paired transmittance/reflectance PPG records.

Each patient carries a straight SpO2-vs-R line for the reflectance probe. The
generator builds waveforms whose per-window ratio-of-ratios, measured with
the same preprocessing the analysis uses, equals the value implied by the
SpO2 trajectory. Noise, baseline wander and high-DC anomalies are added after
that inversion, so they perturb the measurement exactly as they would for
real data.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .preprocess import OVERLAP, SMOOTH_LEN, WINDOW_S, PpgRecord, window_geometry
from .ratio import REFERENCE_OFFSET, REFERENCE_SLOPE, SPO2_MAX, SPO2_MIN, channel_ac_dc

UPSTROKE = 0.3
DECAY = 0.25
RAMP_S = 0.1
SOLVE_RTOL = 1e-13
SOLVE_MAXITER = 40
SCAN_POINTS = 201


@dataclass(frozen=True)
class PatientProfile:
    """Optical and physiological parameters of one synthetic patient.

    ``reflectance_slope`` and ``reflectance_intercept`` define the patient's
    reflectance line ``SpO2 = slope * R + intercept``. Anomaly segments are
    ``(start_s, end_s, dc_multiplier)`` steps in the reflectance red DC.
    """

    patient_id: str
    reflectance_slope: float
    reflectance_intercept: float
    heart_rate: float = 75.0
    ir_perfusion: float = 0.08
    red_dc_level: float = 1000.0
    ir_dc_level: float = 1500.0
    wander_amplitude: float = 0.0
    wander_frequency: float = 0.2
    noise_sigma: float = 0.0
    anomaly_segments: tuple = ()

    def __post_init__(self):
        segs = tuple(tuple(float(v) for v in s) for s in self.anomaly_segments)
        object.__setattr__(self, "anomaly_segments", segs)
        if not self.reflectance_slope < 0:
            raise ValueError(f"reflectance_slope must be negative, got {self.reflectance_slope}")
        if not 0 < self.ir_perfusion <= 0.2:
            raise ValueError(f"ir_perfusion must be in (0, 0.2], got {self.ir_perfusion}")
        if not 40 <= self.heart_rate <= 180:
            raise ValueError(f"heart_rate must be in [40, 180], got {self.heart_rate}")
        if not (self.red_dc_level > 0 and self.ir_dc_level > 0):
            raise ValueError("DC levels must be positive")
        if self.noise_sigma < 0 or self.wander_amplitude < 0:
            raise ValueError("noise_sigma and wander_amplitude must be non-negative")
        for start, end, mult in segs:
            if not end > start:
                raise ValueError(f"anomaly segment ({start}, {end}) is empty")
            if not mult > 1:
                raise ValueError(f"anomaly dc_multiplier must exceed 1, got {mult}")

    def r_for_spo2(self, spo2):
        return (np.asarray(spo2, dtype=float) - self.reflectance_intercept) / self.reflectance_slope

    def to_dict(self) -> dict:
        d = asdict(self)
        d["anomaly_segments"] = [list(s) for s in self.anomaly_segments]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PatientProfile":
        return cls(**{**d, "anomaly_segments": tuple(tuple(s) for s in d.get("anomaly_segments", ()))})


@dataclass(frozen=True)
class Spo2Trajectory:
    """Piecewise-linear SpO2 course: ``(duration_s, start, end)`` segments."""

    segments: tuple

    def __post_init__(self):
        segs = tuple(tuple(float(v) for v in s) for s in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ValueError("trajectory needs at least one segment")
        for dur, a, b in segs:
            if not dur > 0:
                raise ValueError(f"segment durations must be positive, got {dur}")
            for v in (a, b):
                if not SPO2_MIN <= v <= SPO2_MAX:
                    raise ValueError(f"SpO2 {v} outside [{SPO2_MIN}, {SPO2_MAX}]")
        for (_, _, end), (_, start, _) in zip(segs, segs[1:]):
            if end != start:
                raise ValueError(f"discontinuous trajectory: {end} -> {start}")

    @classmethod
    def flat(cls, spo2: float, total: float) -> "Spo2Trajectory":
        return cls(((total, spo2, spo2),))

    @property
    def duration(self) -> float:
        return sum(s[0] for s in self.segments)

    def value_at(self, t):
        """SpO2 at times ``t`` (seconds); held constant past the last segment."""
        t = np.asarray(t, dtype=float)
        bounds = np.concatenate(([0.0], np.cumsum([s[0] for s in self.segments])))
        seg = np.clip(np.searchsorted(bounds, t, side="right") - 1, 0, len(self.segments) - 1)
        dur = np.array([s[0] for s in self.segments])[seg]
        a = np.array([s[1] for s in self.segments])[seg]
        b = np.array([s[2] for s in self.segments])[seg]
        frac = np.clip((t - bounds[seg]) / dur, 0.0, 1.0)
        return a + (b - a) * frac

    def to_list(self) -> list:
        return [list(s) for s in self.segments]


def default_trajectory(baseline: float, trough: float, total: float) -> Spo2Trajectory:
    """Plateau, descent, trough hold and recovery, each a quarter of ``total``.

    ``trough == baseline`` yields a flat course with a zero-height descent.
    """
    if trough > baseline:
        raise ValueError(f"trough ({trough}) must not exceed baseline ({baseline})")
    if not (SPO2_MIN <= trough and baseline <= SPO2_MAX):
        raise ValueError("baseline and trough must lie in [50, 100]")
    if total < 60:
        raise ValueError(f"total duration must be >= 60 s, got {total}")
    q = total / 4.0
    return Spo2Trajectory(
        ((q, baseline, baseline), (q, baseline, trough), (q, trough, trough), (q, trough, baseline))
    )


def beat_template(phase) -> np.ndarray:
    """One cardiac cycle on ``phase`` in [0, 1): valley 0, peak 1.

    A raised-cosine upstroke over the first 30 % of the cycle followed by an
    exponential run-off that returns to zero at the end of the period.
    """
    phase = np.mod(np.asarray(phase, dtype=float), 1.0)
    tail_end = math.exp(-(1.0 - UPSTROKE) / DECAY)
    up = 0.5 * (1.0 - np.cos(np.pi * phase / UPSTROKE))
    down = (np.exp(-(phase - UPSTROKE) / DECAY) - tail_end) / (1.0 - tail_end)
    return np.where(phase < UPSTROKE, up, down)


@dataclass
class SynthPair:
    transmittance: PpgRecord
    reflectance: PpgRecord
    truth: np.ndarray
    profile: PatientProfile
    trajectory: Spo2Trajectory
    seed: int = 0
    # per-window |R_measured / R_target - 1| after inversion, before noise
    solve_residuals: dict = field(default_factory=dict)

    @property
    def rate(self) -> float:
        return self.reflectance.rate

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.truth.size) / self.rate

    def window_truth(self, start_index: int, win_s: float = WINDOW_S, overlap: float = OVERLAP) -> float:
        """Truth SpO2 the generator targeted for the window at ``start_index``."""
        length, _ = window_geometry(self.rate, win_s, overlap)
        return float(self.truth[start_index + length // 2])


def _cores(starts: np.ndarray, length: int, n: int) -> list[tuple[int, int]]:
    """Sample ranges owned by exactly one window."""
    out = []
    for k, s in enumerate(starts):
        lo = 0 if k == 0 else starts[k - 1] + length
        hi = starts[k + 1] if k + 1 < len(starts) else min(s + length, n)
        out.append((int(max(lo, s)), int(min(hi, s + length))))
    return out


def _secant(base, delta, rate, smooth_len, target_index) -> tuple[float, float]:
    """Bump height ``c`` with ``AC/DC(base + c * delta) == target_index``; returns (c, rel. error)."""

    def err(c: float) -> float:
        ac, dc, nb = channel_ac_dc(base + c * delta, rate, smooth_len)
        if nb == 0:
            raise ValueError("no beats")
        return (ac / dc) / target_index - 1.0

    c0, e0 = 0.0, err(0.0)
    best_c, best_e = c0, e0
    c1 = -2.0 * e0
    for _ in range(SOLVE_MAXITER):
        if abs(best_e) < SOLVE_RTOL:
            break
        e1 = err(c1)
        if abs(e1) < abs(best_e):
            best_c, best_e = c1, e1
        if e1 == e0:
            break
        c0, c1, e0 = c1, c1 - e1 * (c1 - c0) / (e1 - e0), e1
        # Keep the pulse amplitude positive inside the bump.
        c1 = max(c1, -0.9)
    return best_c, best_e


def _bracketed(base, delta, rate, smooth_len, target_index) -> tuple[float, float]:
    """Grid scan for a sign change at a constant beat count, then Brent refinement."""

    def evaluate(c: float) -> tuple[float, int]:
        ac, dc, nb = channel_ac_dc(base + c * delta, rate, smooth_len)
        return ((ac / dc) / target_index - 1.0 if nb else np.nan), nb

    grid = np.linspace(-0.5, 0.5, SCAN_POINTS)
    vals = [evaluate(c) for c in grid]
    best_c, best_e = 0.0, np.inf
    for (c0, (e0, n0)), (c1, (e1, n1)) in zip(zip(grid, vals), zip(grid[1:], vals[1:])):
        if n0 == n1 and n0 > 0 and e0 * e1 <= 0:
            c = brentq(lambda c: evaluate(c)[0], c0, c1, xtol=1e-15, rtol=4 * np.finfo(float).eps)
            e, _ = evaluate(c)
            if abs(e) < abs(best_e):
                best_c, best_e = c, e
    return best_c, best_e


def _invert_channel(
    red_dc: float,
    perfusion: np.ndarray,
    pulse: np.ndarray,
    ir: np.ndarray,
    targets: np.ndarray,
    starts: np.ndarray,
    length: int,
    rate: float,
    smooth_len: int,
) -> tuple[np.ndarray, dict]:
    """Red channel whose per-window ratio-of-ratios hits ``targets``.

    Starts from ``red_dc * (1 + perfusion * pulse)`` and rescales the pulsatile
    part inside each window's private core with a smooth bump, solving for
    the bump height by secant iteration. Cores never overlap, so windows are
    solved independently.

    When the detected beat count flips across the root, narrower pulse bumps
    and smooth level bumps are tried, first by secant and then by a bracketed
    grid search. A window near such a flip can stay unsolved; its relative
    error is returned in the residual map.
    """
    n = pulse.size
    red = red_dc * (1.0 + perfusion * pulse)
    residuals = {}
    for (lo, hi), s, target in zip(_cores(starts, length, n), starts, targets):
        s = int(s)
        if hi - lo < 2:
            continue
        try:
            ir_ac, ir_dc, _ = channel_ac_dc(ir[s : s + length], rate, smooth_len)
        except ValueError:
            continue
        if ir_ac <= 0:
            continue
        ir_index = ir_ac / ir_dc
        base = red[s : s + length].copy()
        scaled = red_dc * perfusion[s : s + length] * pulse[s : s + length]
        best_c, best_e, best_delta = 0.0, np.inf, np.zeros(length)
        # A beat-count change can step the error across zero; other bump placements move the step.
        cuts = [lo + (hi - lo) * j // 6 for j in range(7)]
        spans = [(0, 6), (0, 3), (3, 6), (0, 4), (2, 6), (1, 5)]
        shapes = []
        for (i, j), level in [(sp, False) for sp in spans] + [(sp, True) for sp in spans]:
            a, b = cuts[i], cuts[j]
            if b - a < 2:
                continue
            delta = np.zeros(length)
            delta[a - s : b - s] = np.sin(np.pi * (np.arange(b - a) + 0.5) / (b - a)) ** 2
            delta *= red_dc if level else scaled
            shapes.append(delta)
            try:
                c, e = _secant(base, delta, rate, smooth_len, ir_index * target)
            except ValueError:
                continue
            if abs(e) < abs(best_e):
                best_c, best_e, best_delta = c, e, delta
            if abs(best_e) < SOLVE_RTOL:
                break
        if not abs(best_e) < SOLVE_RTOL:
            for delta in shapes:
                c, e = _bracketed(base, delta, rate, smooth_len, ir_index * target)
                if abs(e) < abs(best_e):
                    best_c, best_e, best_delta = c, e, delta
                if abs(best_e) < SOLVE_RTOL:
                    break
        if not np.isfinite(best_e):
            continue
        red[s : s + length] = base + best_c * best_delta
        residuals[s] = abs(best_e)
    return red, residuals


def _anomaly_gain(t: np.ndarray, segments) -> np.ndarray:
    """Multiplicative DC envelope with short raised-cosine edges."""
    gain = np.ones_like(t)
    for start, end, mult in segments:
        ramp = min(RAMP_S, (end - start) / 2)
        up = np.clip((t - start) / ramp, 0, 1)
        down = np.clip((end - t) / ramp, 0, 1)
        env = np.minimum(0.5 - 0.5 * np.cos(np.pi * up), 0.5 - 0.5 * np.cos(np.pi * down))
        gain += (mult - 1.0) * env
    return gain


def synthesize(
    profile: PatientProfile,
    trajectory: Spo2Trajectory,
    rate: float = 600.0,
    seed: int = 0,
    win_s: float = WINDOW_S,
    overlap: float = OVERLAP,
    smooth_len: int = SMOOTH_LEN,
    reference: tuple[float, float] = (REFERENCE_OFFSET, REFERENCE_SLOPE),
) -> SynthPair:
    """Generate one patient's transmittance/reflectance records.

    Parameters
    ----------
    profile : PatientProfile
    trajectory : Spo2Trajectory
        Ground-truth SpO2 course; the record lasts ``trajectory.duration``.
    rate : float
        Sampling rate in Hz, at least 100.
    seed : int
        Seeds beat phase, wander phase and noise.
    win_s, overlap, smooth_len
        Windowing used by the downstream analysis. The per-window inversion is
        exact only when the analysis uses the same values.
    reference : (offset, slope)
        Transmittance curve ``SpO2 = offset - slope * R``.

    Returns
    -------
    SynthPair
    """
    if rate < 100:
        raise ValueError(f"rate must be >= 100 Hz, got {rate}")
    n = int(round(trajectory.duration * rate))
    if n < 1:
        raise ValueError("trajectory is shorter than one sample")
    t = np.arange(n) / rate
    truth = trajectory.value_at(t)

    ref_offset, ref_slope = reference
    r_trans = (ref_offset - truth) / ref_slope
    r_refl = profile.r_for_spo2(truth)
    for name, r in (("transmittance", r_trans), ("reflectance", r_refl)):
        if np.any(r <= 0) or np.any(r * profile.ir_perfusion >= 1):
            raise ValueError(f"trajectory leaves the invertible range of the {name} line")

    rng = np.random.default_rng(seed)
    beat_phase = rng.uniform()
    pulse = beat_template(t * profile.heart_rate / 60.0 + beat_phase)
    ir_clean = profile.ir_dc_level * (1.0 + profile.ir_perfusion * pulse)

    length, hop = window_geometry(rate, win_s, overlap)
    starts = np.arange((n - length) // hop + 1) * hop if n >= length else np.array([], dtype=int)
    centers = starts + length // 2

    def build(r_series: np.ndarray) -> tuple[np.ndarray, dict]:
        if starts.size == 0:
            return profile.red_dc_level * (1.0 + r_series * profile.ir_perfusion * pulse), {}
        targets = r_series[centers]
        perfusion = np.interp(np.arange(n), centers, targets * profile.ir_perfusion)
        return _invert_channel(
            profile.red_dc_level, perfusion, pulse, ir_clean, targets, starts, length, rate, smooth_len
        )

    red_t, res_t = build(r_trans)
    red_r, res_r = build(r_refl)

    def finish(red: np.ndarray, anomalies) -> tuple[np.ndarray, np.ndarray]:
        wander = profile.wander_amplitude * np.sin(
            2 * np.pi * profile.wander_frequency * t + rng.uniform(0, 2 * np.pi)
        )
        red = red * (1.0 + wander)
        ir = ir_clean * (1.0 + wander)
        if anomalies:
            red = red + profile.red_dc_level * (_anomaly_gain(t, anomalies) - 1.0)
        red = red + rng.normal(0.0, profile.noise_sigma * profile.red_dc_level, n)
        ir = ir + rng.normal(0.0, profile.noise_sigma * profile.ir_dc_level, n)
        # Intensities stay strictly positive even under extreme noise draws.
        red = np.maximum(red, 1e-6 * profile.red_dc_level)
        ir = np.maximum(ir, 1e-6 * profile.ir_dc_level)
        return red, ir

    tr_red, tr_ir = finish(red_t, ())
    rf_red, rf_ir = finish(red_r, profile.anomaly_segments)
    return SynthPair(
        transmittance=PpgRecord(profile.patient_id, rate, tr_red, tr_ir, site="transmittance-finger"),
        reflectance=PpgRecord(profile.patient_id, rate, rf_red, rf_ir, site="finger"),
        truth=truth,
        profile=profile,
        trajectory=trajectory,
        seed=int(seed),
        solve_residuals={"transmittance": res_t, "reflectance": res_r},
    )


@dataclass(frozen=True)
class CohortConfig:
    """Ranges the cohort generator draws patient profiles from.

    Reflectance lines follow ``SpO2 = intercept - (25 / k) * R`` where the
    path factor ``k`` scales the reflectance R relative to transmittance, and
    the intercept is jittered around 110.
    """

    duration_s: float = 600.0
    rate: float = 600.0
    path_factor_range: tuple = (0.75, 1.3)
    intercept_jitter: float = 0.5
    heart_rate_range: tuple = (55.0, 100.0)
    ir_perfusion_range: tuple = (0.08, 0.15)
    red_dc_range: tuple = (800.0, 1600.0)
    ir_dc_range: tuple = (1200.0, 2400.0)
    noise_sigma: float = 0.01
    wander_amplitude: float = 0.02
    wander_frequency_range: tuple = (0.1, 0.3)
    baseline_range: tuple = (95.0, 99.0)
    span_range: tuple = (16.0, 30.0)
    anomaly_fraction: float = 0.0
    anomaly_multiplier: float = 3.0
    anomaly_windows: int = 4
    stratify_path_factor: bool = True
    shared_line: tuple | None = None
    id_prefix: str = "P"

    def __post_init__(self):
        for name in (
            "path_factor_range",
            "heart_rate_range",
            "ir_perfusion_range",
            "red_dc_range",
            "ir_dc_range",
            "wander_frequency_range",
            "baseline_range",
            "span_range",
        ):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} has lo > hi: {(lo, hi)}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.shared_line is not None:
            object.__setattr__(self, "shared_line", tuple(float(v) for v in self.shared_line))
        if self.duration_s < 60:
            raise ValueError("duration_s must be >= 60")
        if self.rate < 100:
            raise ValueError("rate must be >= 100")
        if self.path_factor_range[0] <= 0:
            raise ValueError("path factors must be positive")
        if not 0 <= self.intercept_jitter < REFERENCE_OFFSET - SPO2_MAX:
            raise ValueError("intercept_jitter must keep intercepts above 100")
        if not 0 <= self.anomaly_fraction <= 1:
            raise ValueError("anomaly_fraction must be in [0, 1]")
        if self.anomaly_multiplier <= 1:
            raise ValueError("anomaly_multiplier must exceed 1")
        if self.anomaly_windows < 2:
            raise ValueError("anomaly_windows must be >= 2")
        if self.span_range[0] < 0 or self.baseline_range[1] > SPO2_MAX:
            raise ValueError("invalid SpO2 ranges")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CohortConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown cohort config keys: {sorted(unknown)}")
        return cls(**d)


def aligned_anomaly_segment(
    first_window: int, n_windows: int, rate: float, win_s: float = WINDOW_S, overlap: float = OVERLAP
) -> tuple[float, float]:
    """Anomaly span touching windows ``first_window .. first_window + n_windows - 1``.

    Windows are ``[k*hop, k*hop + L)``. The span starts where window
    ``first_window - 1`` ends and stops where window ``first_window + n_windows``
    begins, so the two edge windows see ``hop / L`` of it and interior windows
    lie fully inside.
    """
    if n_windows < 2:
        raise ValueError("an aligned anomaly needs at least two windows")
    if first_window < 1:
        raise ValueError("first_window must be >= 1")
    length, hop = window_geometry(rate, win_s, overlap)
    start = ((first_window - 1) * hop + length) / rate
    end = (first_window + n_windows) * hop / rate
    return (start, end)


def synth_cohort(n_patients: int, seed: int, config: CohortConfig | None = None) -> list[SynthPair]:
    """Draw ``n_patients`` profiles and synthesize their records."""
    if n_patients < 1:
        raise ValueError(f"n_patients must be >= 1, got {n_patients}")
    cfg = config or CohortConfig()
    children = np.random.SeedSequence(seed).spawn(n_patients + 1)
    cohort_rng = np.random.default_rng(children.pop())
    # Stratified draws spread the path factors evenly over their range.
    strata = (cohort_rng.permutation(n_patients) + cohort_rng.uniform(size=n_patients)) / n_patients
    length, hop = window_geometry(cfg.rate)
    n_windows = (int(round(cfg.duration_s * cfg.rate)) - length) // hop + 1

    pairs = []
    seen_lines = set()
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        u = strata[i] if cfg.stratify_path_factor else rng.uniform()
        while True:
            if cfg.shared_line is not None:
                slope, intercept = cfg.shared_line
            else:
                lo, hi = cfg.path_factor_range
                slope = -REFERENCE_SLOPE / (lo + u * (hi - lo))
                intercept = REFERENCE_OFFSET + rng.uniform(-1, 1) * cfg.intercept_jitter
            line = (round(slope, 12), round(intercept, 12))
            if cfg.shared_line is not None or line not in seen_lines:
                break
            u = rng.uniform()
        seen_lines.add(line)

        baseline = rng.uniform(*cfg.baseline_range)
        trough = max(SPO2_MIN, baseline - rng.uniform(*cfg.span_range))
        anomalies = ()
        if rng.uniform() < cfg.anomaly_fraction:
            first = int(rng.integers(2, max(3, n_windows - cfg.anomaly_windows - 2)))
            anomalies = (aligned_anomaly_segment(first, cfg.anomaly_windows, cfg.rate) + (cfg.anomaly_multiplier,),)
        profile = PatientProfile(
            patient_id=f"{cfg.id_prefix}{i + 1:02d}",
            reflectance_slope=slope,
            reflectance_intercept=intercept,
            heart_rate=rng.uniform(*cfg.heart_rate_range),
            ir_perfusion=rng.uniform(*cfg.ir_perfusion_range),
            red_dc_level=rng.uniform(*cfg.red_dc_range),
            ir_dc_level=rng.uniform(*cfg.ir_dc_range),
            wander_amplitude=cfg.wander_amplitude,
            wander_frequency=rng.uniform(*cfg.wander_frequency_range),
            noise_sigma=cfg.noise_sigma,
            anomaly_segments=anomalies,
        )
        traj = default_trajectory(baseline, trough, cfg.duration_s)
        pairs.append(synthesize(profile, traj, cfg.rate, seed=int(rng.integers(2**31))))
    return pairs
