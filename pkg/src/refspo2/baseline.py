"""Pooled-window regression baseline evaluated with patient-wise splits.

The protocol mirrors the usual way window-level SpO2 models are validated:
training patients' windows are shuffled into ten folds for validation, and a
disjoint set of patients is held out for testing. A k-nearest-neighbour
regressor stands in for the tree ensembles; any object with ``fit`` and
``predict`` can be swapped in through ``model_factory``.
"""
from __future__ import annotations

from dataclasses import astuple, dataclass, fields
from typing import Callable, Protocol

import numpy as np

from .evaluate import metrics

N_FOLDS = 10


@dataclass(frozen=True)
class FeatureVector:
    r_value: float
    red_ac: float
    red_dc: float
    ir_ac: float
    ir_dc: float
    red_ac_over_dc: float
    ir_ac_over_dc: float
    heart_rate_hz: float
    label: float

    def __post_init__(self):
        if not all(np.isfinite(v) for v in astuple(self)):
            raise ValueError("features must be finite")
        if not 50 <= self.label <= 100:
            raise ValueError(f"label {self.label} outside [50, 100]")

    @classmethod
    def from_window(cls, acdc, r_value: float, heart_rate_hz: float, label: float) -> "FeatureVector":
        return cls(
            r_value=r_value,
            red_ac=acdc.red_ac,
            red_dc=acdc.red_dc,
            ir_ac=acdc.ir_ac,
            ir_dc=acdc.ir_dc,
            red_ac_over_dc=acdc.red_ac / acdc.red_dc,
            ir_ac_over_dc=acdc.ir_ac / acdc.ir_dc,
            heart_rate_hz=heart_rate_hz,
            label=label,
        )

    @classmethod
    def feature_names(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.name != "label"]


def to_arrays(data) -> tuple[np.ndarray, np.ndarray]:
    rows = np.array([astuple(fv) for fv in data], dtype=float).reshape(-1, len(fields(FeatureVector)))
    return rows[:, :-1], rows[:, -1]


class Regressor(Protocol):
    def fit(self, X: np.ndarray, y: np.ndarray) -> "Regressor": ...

    def predict(self, X: np.ndarray) -> np.ndarray: ...


class KNNRegressor:
    """Mean label of the k nearest rows under train-set z-scored distance."""

    def __init__(self, k: int = 5):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.shape[0] < self.k:
            raise ValueError(f"k={self.k} exceeds the {X.shape[0]} training rows")
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        # Constant features carry no distance information.
        self.scale_ = np.where(scale > 0, scale, 1.0)
        self.X_ = (X - self.mean_) / self.scale_
        self.y_ = y.copy()
        return self

    def predict(self, X, batch: int = 256):
        Z = (np.asarray(X, dtype=float) - self.mean_) / self.scale_
        out = np.empty(Z.shape[0])
        for i in range(0, Z.shape[0], batch):
            diff = Z[i : i + batch, None, :] - self.X_[None, :, :]
            d2 = np.einsum("ijk,ijk->ij", diff, diff)
            nearest = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
            out[i : i + batch] = self.y_[nearest].mean(axis=1)
        return out


def fit_knn(train, k: int = 5) -> KNNRegressor:
    X, y = to_arrays(train)
    return KNNRegressor(k).fit(X, y)


def undersample(data, seed: int) -> list:
    """Downsample every rounded-label class to the smallest class count."""
    data = list(data)
    if not data:
        raise ValueError("nothing to undersample")
    classes: dict[int, list[int]] = {}
    for i, fv in enumerate(data):
        classes.setdefault(int(np.rint(fv.label)), []).append(i)
    if len(classes) == 1:
        return data
    n_min = min(len(v) for v in classes.values())
    rng = np.random.default_rng(seed)
    keep = []
    for label in sorted(classes):
        idx = classes[label]
        keep.extend(idx if len(idx) == n_min else rng.choice(idx, n_min, replace=False).tolist())
    return [data[i] for i in sorted(keep)]


@dataclass(frozen=True)
class SplitPlan:
    """Patient-disjoint split; ``val_folds`` partitions the train windows.

    Each fold is a tuple of ``(patient_id, window_position)`` keys.
    """

    train_patients: tuple
    val_folds: tuple
    test_patients: tuple

    def __post_init__(self):
        if set(self.train_patients) & set(self.test_patients):
            raise ValueError("train and test patients overlap")
        keys = [key for fold in self.val_folds for key in fold]
        if len(keys) != len(set(keys)):
            raise ValueError("validation folds overlap")
        if any(pid not in self.train_patients for pid, _ in keys):
            raise ValueError("validation folds reference non-train patients")


def make_split_plan(
    features: dict, test_patients, seed: int, n_folds: int = N_FOLDS
) -> SplitPlan:
    """Shuffle every train window into one of ``n_folds`` folds."""
    test = tuple(sorted(test_patients))
    train = tuple(sorted(pid for pid in features if pid not in test))
    keys = [(pid, i) for pid in train for i in range(len(features[pid]))]
    order = np.random.default_rng(seed).permutation(len(keys))
    folds = tuple(tuple(sorted(keys[j] for j in order[f::n_folds])) for f in range(n_folds))
    return SplitPlan(train, folds, test)


@dataclass(frozen=True)
class SplitMetrics:
    avg_mse: float
    avg_mae: float
    avg_r2: float


@dataclass(frozen=True)
class ProtocolReport:
    model: str
    validation: SplitMetrics
    test: SplitMetrics
    n_train_rows: tuple

    @property
    def generalization_ratio(self) -> float:
        return self.test.avg_mae / self.validation.avg_mae

    def rows(self) -> list[dict]:
        return [
            {"model": self.model, "avg_mse": m.avg_mse, "avg_mae": m.avg_mae, "avg_r2": m.avg_r2, "split": split}
            for split, m in (("validation", self.validation), ("test", self.test))
        ]


def _average(rows) -> SplitMetrics:
    arr = np.asarray(rows, dtype=float)
    return SplitMetrics(*(float(v) for v in arr.mean(axis=0)))


def run_protocol(
    features: dict,
    plan: SplitPlan,
    seed: int,
    k: int = 5,
    model_factory: Callable[[], Regressor] | None = None,
    model_name: str = "kNN Regressor",
) -> ProtocolReport:
    """Ten-fold validation on train patients plus scoring on held-out patients.

    For each fold the model is fit on the undersampled remaining train
    windows and scored on the fold and on every test-patient window. The
    reported values are fold averages. Test windows never touch
    normalization, undersampling or fitting.
    """
    if len(plan.test_patients) < 2:
        raise ValueError("the protocol needs at least two test patients")
    factory = model_factory or (lambda: KNNRegressor(k))
    X_test, y_test = to_arrays([fv for pid in plan.test_patients for fv in features[pid]])

    val_rows, test_rows, sizes = [], [], []
    for f, fold in enumerate(plan.val_folds):
        held = set(fold)
        train = [
            fv
            for pid in plan.train_patients
            for i, fv in enumerate(features[pid])
            if (pid, i) not in held
        ]
        train = undersample(train, seed + f)
        X_tr, y_tr = to_arrays(train)
        model = factory().fit(X_tr, y_tr)
        X_val, y_val = to_arrays([features[pid][i] for pid, i in fold])
        val_rows.append(metrics(y_val, model.predict(X_val)))
        test_rows.append(metrics(y_test, model.predict(X_test)))
        sizes.append(len(train))
    return ProtocolReport(model_name, _average(val_rows), _average(test_rows), tuple(sizes))
