"""Reflectance SpO2 estimation from a five-point calibration against transmittance lines."""
from .baseline import FeatureVector, KNNRegressor, make_split_plan, run_protocol, undersample
from .calibrate import (
    CalibrationSet,
    PatientLine,
    TrainingSet,
    build_training_set,
    estimate_spo2,
    fit_patient_line,
    lateral_distance,
    match_line,
    select_calibration_points,
)
from .config import RunConfig
from .evaluate import bland_altman, box_stats, metrics, per_patient_mae, quartiles
from .pipeline import analyze_pair, calibrate_patient, run_calibration, training_set_from
from .preprocess import PpgRecord, detect_extrema, detrend, moving_average, quality_check, segment_windows
from .ratio import compute_r, extract_ac_dc, flag_high_dc, reference_spo2
from .synthgen import CohortConfig, PatientProfile, Spo2Trajectory, synth_cohort, synthesize

__version__ = "0.1.0"
