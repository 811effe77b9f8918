"""Run-wide settings shared by the library entry points and the CLI."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from . import calibrate, preprocess, ratio


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    rate: float = preprocess.DEFAULT_RATE
    window_s: float = preprocess.WINDOW_S
    overlap: float = preprocess.OVERLAP
    quality_threshold: float = preprocess.QUALITY_THRESHOLD
    smooth_len: int = preprocess.SMOOTH_LEN
    high_dc_k: float = ratio.HIGH_DC_K
    min_range_spo2: float = calibrate.MIN_RANGE_SPO2
    calibration_band: tuple = calibrate.CALIBRATION_BAND
    reference_curve: tuple = (ratio.REFERENCE_OFFSET, ratio.REFERENCE_SLOPE)
    exclude_anomalies: bool = True
    knn_k: int = 5

    def __post_init__(self):
        object.__setattr__(self, "calibration_band", tuple(float(v) for v in self.calibration_band))
        object.__setattr__(self, "reference_curve", tuple(float(v) for v in self.reference_curve))
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        if self.window_s <= 0:
            raise ValueError("window_s must be positive")
        if not 0 <= self.overlap < 1:
            raise ValueError("overlap must be in [0, 1)")
        if not -1 <= self.quality_threshold <= 1:
            raise ValueError("quality_threshold must be in [-1, 1]")
        if self.smooth_len < 1:
            raise ValueError("smooth_len must be >= 1")
        if self.high_dc_k <= 1:
            raise ValueError("high_dc_k must exceed 1")
        if self.min_range_spo2 < 0:
            raise ValueError("min_range_spo2 must be non-negative")
        lo, hi = self.calibration_band
        if not ratio.SPO2_MIN <= lo < hi <= ratio.SPO2_MAX:
            raise ValueError("calibration_band must be an increasing pair inside [50, 100]")
        if len(self.reference_curve) != 2 or self.reference_curve[1] <= 0:
            raise ValueError("reference_curve is (offset, positive slope)")
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def override(self, **kwargs) -> "RunConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})
