"""Walk one noise-free patient through the whole chain and show that it closes.

Run: python demos/closed_loop.py
"""
import numpy as np

from refspo2 import CohortConfig, analyze_pair, calibrate_patient, synth_cohort, training_set_from


def main():
    cfg = CohortConfig(duration_s=300.0, noise_sigma=0.0, wander_amplitude=0.0)
    pairs = synth_cohort(3, 21, cfg)
    analyses = [analyze_pair(p.reflectance, p.transmittance) for p in pairs]
    ts = training_set_from(analyses)
    for line in ts.lines:
        print(f"line {line.patient_id}: SpO2 = {line.intercept:.2f} {line.slope:+.2f} * R")

    est = calibrate_patient(analyses[0], ts)
    print("calibration points (R, SpO2):", [(round(r, 4), round(s, 2)) for r, s in est.calibration.points])
    print("votes:", est.match.votes, "selected:", est.line_id)

    truth = np.array([pairs[0].window_truth(int(s)) for s in est.window_start])
    print(f"{truth.size} windows, max |estimate - truth| = {np.max(np.abs(est.predicted - truth)):.2e}")


if __name__ == "__main__":
    main()
