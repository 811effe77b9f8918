"""Command-line driver: synth, pipeline, trainset, calibrate, baseline, report.

Exit codes: 0 success, 1 data or runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .baseline import FeatureVector, make_split_plan, run_protocol
from .calibrate import CalibrationSet, TrainingSet, build_training_set, estimate_spo2, match, select_calibration_points
from .config import RunConfig
from .evaluate import bland_altman, box_stats, per_patient_mae
from .pipeline import analyze_pair
from .synthgen import CohortConfig, synth_cohort

log = logging.getLogger("refspo2")

MANIFEST = "manifest.json"
PREDICTIONS_HEADER = [
    "patient_id",
    "window_start",
    "r_value",
    "ref_spo2",
    "predicted_spo2",
    "high_dc_anomaly",
    "calibration_point",
    "selected_line",
]
FEATURES_HEADER = ["window_start"] + FeatureVector.feature_names() + ["label"]


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.override(
        seed=args.seed,
        rate=args.rate,
        window_s=args.window_s,
        overlap=args.overlap,
        quality_threshold=args.quality_threshold,
        high_dc_k=args.high_dc_k,
        min_range_spo2=args.min_range,
        calibration_band=tuple(args.band) if args.band else None,
        reference_curve=tuple(args.reference) if args.reference else None,
    )


def _manifest(cohort: Path) -> dict:
    return io.read_json(cohort / MANIFEST)


def _cohort_ids(cohort: Path, wanted) -> list[str]:
    ids = [p["patient_id"] for p in _manifest(cohort)["patients"]]
    if not wanted:
        return ids
    unknown = [w for w in wanted if w not in ids]
    if unknown:
        raise UsageError(f"patients not in {cohort / MANIFEST}: {unknown}")
    return list(wanted)


# --- synth -----------------------------------------------------------------


def cmd_synth(args, cfg: RunConfig) -> int:
    cohort_cfg = CohortConfig.from_dict(io.read_json(args.cohort_config)) if args.cohort_config else CohortConfig()
    overrides = {"rate": args.rate, "duration_s": args.duration}
    cohort_cfg = CohortConfig.from_dict({**cohort_cfg.to_dict(), **{k: v for k, v in overrides.items() if v is not None}})
    out = Path(args.out)
    pairs = synth_cohort(args.patients, cfg.seed, cohort_cfg)
    ext = ".csv.gz" if args.compress else ".csv"
    entries = []
    for sp in pairs:
        pid = sp.profile.patient_id
        pdir = out / pid
        io.write_waveform(pdir / f"transmittance{ext}", sp.transmittance)
        io.write_waveform(pdir / f"reflectance{ext}", sp.reflectance)
        io.write_truth(pdir / f"truth{ext}", sp.t, sp.truth)
        entries.append(
            {
                "patient_id": pid,
                "profile": sp.profile.to_dict(),
                "trajectory": sp.trajectory.to_list(),
                "seed": sp.seed,
                "files": {
                    "transmittance": f"{pid}/transmittance{ext}",
                    "reflectance": f"{pid}/reflectance{ext}",
                    "truth": f"{pid}/truth{ext}",
                },
            }
        )
    io.write_json(
        out / MANIFEST,
        {"seed": cfg.seed, "rate": cohort_cfg.rate, "cohort_config": cohort_cfg.to_dict(), "patients": entries},
    )
    print(f"wrote {len(entries)} patients to {out}")
    return 0


# --- pipeline --------------------------------------------------------------


def _write_analysis(out_dir: Path, analysis) -> None:
    io.write_pairs(out_dir / "pairs.csv", analysis.samples)
    io.write_rows(
        out_dir / "features.csv",
        FEATURES_HEADER,
        (
            [s.window_start] + [getattr(fv, name) for name in FeatureVector.feature_names()] + [fv.label]
            for s, fv in zip(analysis.samples, analysis.features)
            if fv is not None
        ),
    )
    io.write_rows(
        out_dir / "diagnostics.csv",
        ["start_index", "score", "passed", "n_peaks_red", "n_peaks_ir"],
        ((d.start_index, d.score, d.passed, d.n_peaks_red, d.n_peaks_ir) for d in analysis.diagnostics),
    )
    (out_dir / "skipped.log").write_text("".join(f"{start}\t{why}\n" for start, why in analysis.skipped))


def _pipeline_one(refl_path, trans_path, out_dir: Path, pid: str, cfg: RunConfig) -> None:
    refl = io.read_waveform(refl_path, pid, site="finger")
    trans = io.read_waveform(trans_path, pid, site="transmittance-finger") if trans_path else None
    if abs(refl.rate - cfg.rate) > 1e-6:
        log.info("%s: record rate %.6g Hz differs from configured %.6g Hz; using record rate", pid, refl.rate, cfg.rate)
    analysis = analyze_pair(refl, trans, cfg)
    _write_analysis(out_dir, analysis)
    n_windows = len(analysis.diagnostics)
    if not analysis.samples:
        log.warning("%s: no usable windows out of %d; wrote an empty pairs file", pid, n_windows)
    print(f"{pid}: {len(analysis.samples)}/{n_windows} windows usable")


def cmd_pipeline(args, cfg: RunConfig) -> int:
    if args.cohort:
        cohort = Path(args.cohort)
        manifest = {p["patient_id"]: p for p in _manifest(cohort)["patients"]}
        for pid in _cohort_ids(cohort, args.patients):
            files = manifest[pid]["files"]
            _pipeline_one(cohort / files["reflectance"], cohort / files["transmittance"], cohort / pid, pid, cfg)
        return 0
    if not (args.reflectance and args.out_dir):
        raise UsageError("pipeline needs --cohort, or --reflectance and --out-dir")
    pid = args.patient_id or Path(args.reflectance).parent.name
    _pipeline_one(args.reflectance, args.transmittance, Path(args.out_dir), pid, cfg)
    return 0


# --- trainset --------------------------------------------------------------


def _pairs_sources(args) -> dict[str, Path]:
    if args.cohort:
        cohort = Path(args.cohort)
        return {pid: cohort / pid / "pairs.csv" for pid in _cohort_ids(cohort, args.patients)}
    if not args.pairs:
        raise UsageError("need --cohort or --pairs")
    return {Path(p).parent.name if Path(p).parent.name else Path(p).stem: Path(p) for p in args.pairs}


def _series(samples, exclude_anomalies: bool) -> np.ndarray:
    rows = [
        (s.r_value, s.ref_spo2)
        for s in samples
        if s.ref_spo2 is not None and not (exclude_anomalies and s.high_dc_anomaly)
    ]
    return np.asarray(rows, dtype=float).reshape(-1, 2)


def cmd_trainset(args, cfg: RunConfig) -> int:
    sources = _pairs_sources(args)
    series = {pid: _series(io.read_pairs(path), cfg.exclude_anomalies) for pid, path in sources.items()}
    ts = build_training_set(series, cfg.min_range_spo2)
    ts.save(args.out)
    for e in ts.exclusions:
        log.warning("excluded %s: %s", e.patient_id, e.reason)
    print(f"training set: {len(ts)} line(s), {len(ts.exclusions)} exclusion(s) -> {args.out}")
    return 0


# --- calibrate -------------------------------------------------------------


def _calibration_from_args(args, cfg: RunConfig) -> CalibrationSet | None:
    if args.calibration:
        return CalibrationSet(io.read_calibration_csv(args.calibration), band=cfg.calibration_band)
    if args.cal:
        points = []
        for item in args.cal:
            try:
                r, s = (float(v) for v in item.split(","))
            except ValueError:
                raise UsageError(f"--cal expects R,SPO2, got {item!r}") from None
            points.append((r, s))
        return CalibrationSet(points, band=cfg.calibration_band)
    return None


def _calibrate_one(pairs_path: Path, out_path: Path, pid: str, ts: TrainingSet, g, cfg: RunConfig) -> None:
    samples = [s for s in io.read_pairs(pairs_path) if s.ref_spo2 is not None]
    if g is None:
        usable = [s for s in samples if not (cfg.exclude_anomalies and s.high_dc_anomaly)]
        g = select_calibration_points(
            [s.r_value for s in usable],
            [s.ref_spo2 for s in usable],
            [s.window_start for s in usable],
            band=cfg.calibration_band,
        )
    m = match(g, ts)
    chosen = set(g.window_starts)
    rows = []
    for s in samples:
        rows.append(
            (
                pid,
                s.window_start,
                s.r_value,
                s.ref_spo2,
                estimate_spo2(m.line, s.r_value),
                s.high_dc_anomaly,
                s.window_start in chosen,
                m.line.patient_id,
            )
        )
    io.write_rows(out_path, PREDICTIONS_HEADER, rows)
    print(f"{pid}: selected line {m.line.patient_id} ({m.votes[m.line.patient_id]} of 5 votes)")


def cmd_calibrate(args, cfg: RunConfig) -> int:
    ts = TrainingSet.load(args.trainset)
    g = _calibration_from_args(args, cfg)
    if args.cohort:
        cohort = Path(args.cohort)
        for pid in _cohort_ids(cohort, args.patients):
            _calibrate_one(cohort / pid / "pairs.csv", cohort / pid / "predictions.csv", pid, ts, g, cfg)
        return 0
    if not (args.pairs and args.out):
        raise UsageError("calibrate needs --cohort, or --pairs and --out")
    pid = args.patient_id or Path(args.pairs).parent.name
    _calibrate_one(Path(args.pairs), Path(args.out), pid, ts, g, cfg)
    return 0


# --- baseline --------------------------------------------------------------


def _read_features(path: Path) -> list[FeatureVector]:
    cols = io.read_table(path, FEATURES_HEADER)
    names = FeatureVector.feature_names() + ["label"]
    n = len(cols["window_start"])
    return [FeatureVector(**{k: float(cols[k][i]) for k in names}) for i in range(n)]


def cmd_baseline(args, cfg: RunConfig) -> int:
    cohort = Path(args.cohort)
    ids = _cohort_ids(cohort, None)
    features = {pid: _read_features(cohort / pid / "features.csv") for pid in ids}
    if args.test_patients:
        test = _cohort_ids(cohort, args.test_patients)
    else:
        if args.n_test >= len(ids):
            raise UsageError(f"--n-test {args.n_test} leaves no training patients")
        order = np.random.default_rng(cfg.seed).permutation(len(ids))
        test = [ids[i] for i in sorted(order[: args.n_test])]
    plan = make_split_plan(features, test, cfg.seed)
    report = run_protocol(features, plan, cfg.seed, k=cfg.knn_k)
    io.write_rows(
        args.out,
        ["model", "avg_mse", "avg_mae", "avg_r2", "split"],
        ((r["model"], r["avg_mse"], r["avg_mae"], r["avg_r2"], r["split"]) for r in report.rows()),
    )
    for r in report.rows():
        print(f"{r['split']:>10}: MSE {r['avg_mse']:.3f}  MAE {r['avg_mae']:.3f}  R2 {r['avg_r2']:.3f}")
    return 0


# --- report ----------------------------------------------------------------


def _read_predictions(path: Path) -> dict[str, dict[str, np.ndarray]]:
    cols = io.read_table(path, PREDICTIONS_HEADER)
    by_patient: dict[str, dict[str, list]] = {}
    for i, pid in enumerate(cols["patient_id"]):
        d = by_patient.setdefault(pid, {"y": [], "y_pred": [], "anomaly": []})
        d["y"].append(float(cols["ref_spo2"][i]))
        d["y_pred"].append(float(cols["predicted_spo2"][i]))
        d["anomaly"].append(cols["high_dc_anomaly"][i] == "1")
    return {pid: {k: np.asarray(v) for k, v in d.items()} for pid, d in by_patient.items()}


def _svg(out_dir: Path, agreements: dict, boxes) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "refspo2"
    for pid, (rep, pts) in agreements.items():
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.scatter(pts[:, 0], pts[:, 1], s=6, color="0.3")
        ax.axhline(rep.mean_diff, color="black")
        for v in (rep.loa_low, rep.loa_high):
            ax.axhline(v, color="grey", linestyle="--")
        for v in (-rep.band, rep.band):
            ax.axhline(v, color="red")
        ax.set_xlabel("(y + y') / 2  [% SpO2]")
        ax.set_ylabel("y' - y  [%]")
        ax.set_title(f"Bland-Altman, patient {pid}")
        fig.tight_layout()
        fig.savefig(out_dir / f"bland_altman_{pid}.svg", metadata={"Date": None})
        plt.close(fig)
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(boxes)), 3.5))
    ax.bxp(
        [
            {
                "label": b.patient_id,
                "q1": b.q1,
                "med": b.median,
                "q3": b.q3,
                "whislo": b.whisker_low,
                "whishi": b.whisker_high,
                "fliers": list(b.outliers),
            }
            for b in boxes
        ]
    )
    ax.set_ylabel("|y - y'|  [%]")
    fig.tight_layout()
    fig.savefig(out_dir / "box_stats.svg", metadata={"Date": None})
    plt.close(fig)


def cmd_report(args, cfg: RunConfig) -> int:
    data: dict[str, dict[str, np.ndarray]] = {}
    for path in args.predictions:
        data.update(_read_predictions(Path(path)))
    if not data:
        raise ValueError("no predictions to report")
    if args.exclude_anomalies:
        data = {pid: {k: v[~d["anomaly"]] for k, v in d.items()} for pid, d in data.items()}
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rows, avg = per_patient_mae({pid: (d["y"], d["y_pred"]) for pid, d in data.items()})
    io.write_rows(out / "per_patient_mae.csv", ["patient_id", "mae"], rows + [("average", avg)])

    boxes = box_stats({pid: np.abs(d["y_pred"] - d["y"]) for pid, d in data.items()})
    io.write_rows(
        out / "box_stats.csv",
        ["patient_id", "q1", "median", "q3", "whisker_low", "whisker_high", "n_outliers", "outliers"],
        (
            (b.patient_id, b.q1, b.median, b.q3, b.whisker_low, b.whisker_high, len(b.outliers),
             " ".join(io.fmt(v) for v in b.outliers))
            for b in boxes
        ),
    )

    agreements = {pid: bland_altman(d["y"], d["y_pred"]) for pid, d in sorted(data.items())}
    ba_rows = []
    for pid, (rep, pts) in agreements.items():
        ba_rows.extend((pid, "point", m, dval, "", "", "", "", "") for m, dval in pts)
        ba_rows.append(
            (pid, "summary", "", rep.mean_diff, rep.sd_diff, rep.loa_low, rep.loa_high,
             rep.pct_within_loa, rep.pct_within_band)
        )
    io.write_rows(
        out / "bland_altman.csv",
        ["patient_id", "row", "mean_of_pair", "diff", "sd_diff", "loa_low", "loa_high",
         "pct_within_loa", "pct_within_band"],
        ba_rows,
    )
    if args.svg:
        _svg(out, agreements, boxes)
    for pid, m in rows:
        print(f"{pid}\t{m:.2f}")
    print(f"average\t{avg:.2f}")
    return 0


# --- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON; flags below override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--rate", type=float, help="sampling rate in Hz")
    common.add_argument("--window-s", type=float)
    common.add_argument("--overlap", type=float)
    common.add_argument("--quality-threshold", type=float)
    common.add_argument("--high-dc-k", type=float)
    common.add_argument("--min-range", type=float, help="SpO2 span a training patient must exceed")
    common.add_argument("--band", type=float, nargs=2, metavar=("LOW", "HIGH"), help="calibration band")
    common.add_argument("--reference", type=float, nargs=2, metavar=("OFFSET", "SLOPE"))
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="refspo2", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    p.add_argument("--patients", type=_positive_int, required=True)
    p.add_argument("--out", default="cohort")
    p.add_argument("--cohort-config", help="CohortConfig JSON")
    p.add_argument("--duration", type=float, help="record length in seconds")
    p.add_argument("--compress", action="store_true", help="write .csv.gz files")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", parents=[common], help="windowing, quality and R values")
    p.add_argument("--cohort")
    p.add_argument("--patients", nargs="+")
    p.add_argument("--reflectance")
    p.add_argument("--transmittance")
    p.add_argument("--out-dir")
    p.add_argument("--patient-id")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("trainset", parents=[common], help="fit per-patient lines")
    p.add_argument("--cohort")
    p.add_argument("--patients", nargs="+")
    p.add_argument("--pairs", nargs="+")
    p.add_argument("--out", default="trainset.json")
    p.set_defaults(func=cmd_trainset)

    p = sub.add_parser("calibrate", parents=[common], help="match a line and estimate SpO2")
    p.add_argument("--trainset", required=True)
    p.add_argument("--cohort")
    p.add_argument("--patients", nargs="+")
    p.add_argument("--pairs")
    p.add_argument("--out")
    p.add_argument("--patient-id")
    p.add_argument("--calibration", help="5-row CSV r_value,spo2")
    p.add_argument("--cal", action="append", metavar="R,SPO2", help="calibration pair; give five")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("baseline", parents=[common], help="pooled-window regression protocol")
    p.add_argument("--cohort", required=True)
    p.add_argument("--test-patients", nargs="+")
    p.add_argument("--n-test", type=_positive_int, default=8)
    p.add_argument("--k", type=_positive_int, dest="knn_k")
    p.add_argument("--out", default="baseline_report.csv")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("report", parents=[common], help="MAE table, box stats, Bland-Altman")
    p.add_argument("--predictions", nargs="+", required=True)
    p.add_argument("--out-dir", default="report")
    p.add_argument("--exclude-anomalies", action="store_true", help="drop high-DC windows before scoring")
    p.add_argument("--svg", action="store_true", help="also render SVG figures (needs matplotlib)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s"
    )
    try:
        cfg = _run_config(args)
        if getattr(args, "knn_k", None):
            cfg = cfg.override(knn_k=args.knn_k)
        return args.func(args, cfg)
    except UsageError as exc:
        parser.error(str(exc))
    except (ValueError, OSError) as exc:
        print(f"refspo2 {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
