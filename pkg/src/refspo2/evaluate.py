"""Error metrics, box-plot summaries and Bland-Altman agreement."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOA_Z = 1.96
CLINICAL_BAND = 2.0


def _paired(y, y_pred) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if y.size == 0 or y.size != y_pred.size:
        raise ValueError(f"need equal non-zero lengths, got {y.size} and {y_pred.size}")
    return y, y_pred


def metrics(y, y_pred) -> tuple[float, float, float]:
    """Return ``(mse, mae, r2)``; R² is undefined for a constant ``y``."""
    y, y_pred = _paired(y, y_pred)
    resid = y_pred - y
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("R^2 is undefined when the true values have zero variance")
    mse = float(np.mean(resid**2))
    mae = float(np.mean(np.abs(resid)))
    return mse, mae, 1.0 - float(np.sum(resid**2)) / ss_tot


def mae(y, y_pred) -> float:
    y, y_pred = _paired(y, y_pred)
    return float(np.mean(np.abs(y_pred - y)))


@dataclass(frozen=True)
class AgreementReport:
    mean_diff: float
    sd_diff: float
    loa_low: float
    loa_high: float
    pct_within_loa: float
    pct_within_band: float
    n: int
    band: float = CLINICAL_BAND

    @property
    def loa_inside_band(self) -> bool:
        return -self.band <= self.loa_low and self.loa_high <= self.band


def bland_altman(y, y_pred, band: float = CLINICAL_BAND) -> tuple[AgreementReport, np.ndarray]:
    """Agreement of ``y_pred`` with ``y``.

    Differences are ``y_pred - y``; the spread uses the population standard
    deviation (divide by n). The second return value holds one
    ``(mean_of_pair, diff)`` row per point for plotting.
    """
    y, y_pred = _paired(y, y_pred)
    if y.size < 3:
        raise ValueError(f"Bland-Altman needs at least 3 pairs, got {y.size}")
    diff = y_pred - y
    md = float(diff.mean())
    sd = float(diff.std())
    lo, hi = md - LOA_Z * sd, md + LOA_Z * sd
    report = AgreementReport(
        mean_diff=md,
        sd_diff=sd,
        loa_low=lo,
        loa_high=hi,
        pct_within_loa=float(np.mean((diff >= lo) & (diff <= hi))),
        pct_within_band=float(np.mean(np.abs(diff) <= band)),
        n=int(y.size),
        band=band,
    )
    points = np.column_stack(((y + y_pred) / 2.0, diff))
    return report, points


@dataclass(frozen=True)
class BoxStats:
    patient_id: str
    q1: float
    median: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: tuple


def quartiles(values) -> tuple[float, float, float]:
    """Quartiles by linear interpolation between order statistics."""
    s = np.sort(np.asarray(values, dtype=float))
    pos = np.array([0.25, 0.5, 0.75]) * (s.size - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, s.size - 1)
    frac = pos - lo
    q = s[lo] + frac * (s[hi] - s[lo])
    return float(q[0]), float(q[1]), float(q[2])


def box_stats(abs_errors: dict) -> list[BoxStats]:
    """Tukey box summaries, one per patient, in patient-id order.

    Whiskers reach the most extreme observations within 1.5 IQR of the
    quartiles; anything beyond is an outlier.
    """
    out = []
    for pid in sorted(abs_errors):
        e = np.asarray(abs_errors[pid], dtype=float)
        if e.size < 4:
            raise ValueError(f"patient {pid}: box statistics need at least 4 values, got {e.size}")
        q1, med, q3 = quartiles(e)
        iqr = q3 - q1
        lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
        inside = e[(e >= lo_fence) & (e <= hi_fence)]
        out.append(
            BoxStats(
                patient_id=pid,
                q1=q1,
                median=med,
                q3=q3,
                whisker_low=float(min(inside.min(), q1)),
                whisker_high=float(max(inside.max(), q3)),
                outliers=tuple(float(v) for v in np.sort(e[(e < lo_fence) | (e > hi_fence)])),
            )
        )
    return out


def per_patient_mae(windows: dict) -> tuple[list[tuple[str, float]], float]:
    """MAE per patient plus the unweighted average across patients.

    ``windows`` maps patient id to ``(y_true, y_pred)``.
    """
    if not windows:
        raise ValueError("no patients")
    rows = [(pid, mae(*windows[pid])) for pid in sorted(windows)]
    return rows, float(np.mean([m for _, m in rows]))
