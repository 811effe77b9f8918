import numpy as np
import pytest

from refspo2.preprocess import PpgRecord
from refspo2.synthgen import PatientProfile, Spo2Trajectory, default_trajectory, synthesize


def naive_moving_average(x, length):
    x = np.asarray(x, dtype=float)
    n = x.size
    out = np.empty(n)
    for i in range(n):
        lo = max(0, i - length // 2)
        hi = min(n, i + length - length // 2)
        out[i] = sum(x[lo:hi]) / (hi - lo)
    return out


def sine_record(f=1.25, seconds=4.0, rate=600.0, dc=2.0, amp=0.1, phase=0.0):
    t = np.arange(int(round(seconds * rate))) / rate
    return t, dc + amp * np.sin(2 * np.pi * f * t + phase)


@pytest.fixture(scope="session")
def clean_profile():
    return PatientProfile(
        patient_id="Z01",
        reflectance_slope=-22.0,
        reflectance_intercept=108.0,
        heart_rate=72.0,
        ir_perfusion=0.1,
        red_dc_level=1100.0,
        ir_dc_level=1700.0,
    )


@pytest.fixture(scope="session")
def clean_pair(clean_profile):
    return synthesize(clean_profile, default_trajectory(97.0, 72.0, 120.0), seed=3)


@pytest.fixture(scope="session")
def flat_pair(clean_profile):
    return synthesize(clean_profile, Spo2Trajectory.flat(95.0, 60.0), seed=5)


@pytest.fixture
def tiny_record():
    t, red = sine_record(seconds=10.0)
    _, ir = sine_record(seconds=10.0, dc=3.0, amp=0.2)
    return PpgRecord("X", 600.0, red, ir)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
