"""Calibrate-then-estimate on a synthetic cohort next to the pooled-window baseline.

Run: python demos/cohort_experiment.py [--seed 7] [--duration 600]
"""
import argparse

import numpy as np

from refspo2 import (
    CohortConfig,
    analyze_pair,
    bland_altman,
    make_split_plan,
    quartiles,
    run_calibration,
    run_protocol,
    synth_cohort,
)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--duration", type=float, default=600.0)
    args = ap.parse_args(argv)

    train = synth_cohort(10, args.seed, CohortConfig(duration_s=args.duration, id_prefix="T"))
    test = synth_cohort(12, args.seed + 1000, CohortConfig(duration_s=args.duration, span_range=(11.0, 25.0), id_prefix="U"))
    a_train = [analyze_pair(p.reflectance, p.transmittance) for p in train]
    a_test = [analyze_pair(p.reflectance, p.transmittance) for p in test]
    ts, estimates = run_calibration(a_train, a_test)

    print("patient  line  MAE   q3    LoA")
    for e in estimates:
        rep, _ = bland_altman(e.ref_spo2, e.predicted)
        q3 = quartiles(np.abs(e.errors()))[2]
        print(f"{e.patient_id:7}  {e.line_id:4}  {e.mae():.2f}  {q3:.2f}  [{rep.loa_low:+.2f}, {rep.loa_high:+.2f}]")
    print(f"average MAE {np.mean([e.mae() for e in estimates]):.2f} over {len(estimates)} patients")

    feats = {a.patient_id: [f for f in a.features if f is not None] for a in a_train + a_test}
    test_ids = [a.patient_id for a in a_test[:4]]
    rep = run_protocol(feats, make_split_plan(feats, test_ids, args.seed), args.seed)
    print(f"baseline KNN: validation MAE {rep.validation.avg_mae:.2f}, test MAE {rep.test.avg_mae:.2f}")


if __name__ == "__main__":
    main()
