"""Drift correction by modelling each response coefficient as a GP over time.

One GP per coefficient is trained on the calibration history (coefficient
estimates as targets, squared standard errors as noise variances). The
analyte is recovered by inverting the affine response with the GP means,
``y = (x - beta0(t)) / beta1(t)``, and its uncertainty by first-order
propagation of the two posterior variances.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .calibration import Calibration, calibration_arrays
from .gpr import HeteroscedasticGP
from .kernels import KernelSpec

MODES = ("offline", "online", "stepwise", "linear")
SLOPE_FLOOR = 1e-6
OUTPUT_COLUMNS = ("t_hours", "y_hat", "sigma_y", "mode", "valid")


@dataclass
class CoefficientModel:
    coefficient_index: int
    gp: HeteroscedasticGP

    def predict(self, t):
        """Posterior ``(mean, variance)`` of the coefficient at times ``t``."""
        return self.gp.predict(t, return_var=True)


@dataclass
class CorrectionResult:
    t: np.ndarray
    y_hat: np.ndarray
    sigma_y: np.ndarray
    valid: np.ndarray
    mode: str

    def __len__(self):
        return self.t.size

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(OUTPUT_COLUMNS)
            for t, y, s, ok in zip(self.t, self.y_hat, self.sigma_y, self.valid):
                w.writerow([f"{t:.17g}", f"{y:.17g}", f"{s:.17g}", self.mode, int(ok)])


def read_corrections(path) -> CorrectionResult:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(OUTPUT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing column(s) {sorted(missing)}")
        rows = list(reader)
    mode = rows[0]["mode"] if rows else "offline"
    return CorrectionResult(
        np.array([float(r["t_hours"]) for r in rows]),
        np.array([float(r["y_hat"]) for r in rows]),
        np.array([float(r["sigma_y"]) for r in rows]),
        np.array([r["valid"] == "1" for r in rows], dtype=bool),
        mode,
    )


def train_models(cals, kernel: KernelSpec | None = None, optimize_variance: bool = True) -> list[CoefficientModel]:
    """Fit one GP per response coefficient on the calibration history."""
    if len(cals) == 0:
        raise ValueError("need at least one calibration")
    kernel = kernel if kernel is not None else KernelSpec()
    t, beta, se = calibration_arrays(cals)
    models = []
    for i in range(beta.shape[1]):
        k = kernel
        if t.size == 1 and optimize_variance:
            # one calibration: its own standard error sets the prior scale
            k = kernel.with_variance(max(se[0, i] ** 2, 1e-12 * max(1.0, beta[0, i] ** 2)))
        gp = HeteroscedasticGP(k, optimize_variance=optimize_variance).fit(t, beta[:, i], se[:, i] ** 2)
        models.append(CoefficientModel(i, gp))
    return models


def _cached_models(cals, kernel, optimize_variance, cache):
    if cache is None:
        return train_models(cals, kernel, optimize_variance)
    key = (tuple(cals), kernel, optimize_variance)
    if key not in cache:
        cache[key] = train_models(cals, kernel, optimize_variance)
    return cache[key]


def _invert(t, x, b0, v0, b1, v1, valid, slope_floor, mode) -> CorrectionResult:
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    ok = np.isfinite(x) & (np.abs(b1) >= slope_floor)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    y = np.full(t.shape, np.nan)
    s = np.full(t.shape, np.nan)
    y[ok] = (x[ok] - b0[ok]) / b1[ok]
    s[ok] = np.sqrt(v0[ok] + y[ok] ** 2 * v1[ok]) / np.abs(b1[ok])
    return CorrectionResult(t, y, s, ok, mode)


def correct(models, t, x, valid=None, slope_floor: float = SLOPE_FLOOR, mode: str = "offline") -> CorrectionResult:
    """Invert the affine response at each record using the coefficient models."""
    t = np.asarray(t, dtype=float)
    if t.size == 0:
        e = np.empty(0)
        return CorrectionResult(e, e.copy(), e.copy(), np.empty(0, dtype=bool), mode)
    b0, v0 = models[0].predict(t)
    b1, v1 = models[1].predict(t)
    return _invert(t, x, b0, v0, b1, v1, valid, slope_floor, mode)


def correct_offline(
    cals, kernel, t, x, valid=None, optimize_variance=True, slope_floor=SLOPE_FLOOR, model_cache=None
) -> CorrectionResult:
    """Train once on every calibration, past and future, and correct all records.

    ``model_cache`` is an optional dict reused across calls to skip retraining
    on calibration sets seen before.
    """
    if len(cals) == 0:
        raise ValueError("offline correction needs at least one calibration")
    models = _cached_models(sorted(cals, key=lambda c: c.t), kernel, optimize_variance, model_cache)
    return correct(models, t, x, valid, slope_floor, "offline")


def correct_online(
    cals, kernel, t, x, valid=None, optimize_variance=True, slope_floor=SLOPE_FLOOR, model_cache=None
) -> CorrectionResult:
    """Correct each record with models trained only on calibrations at or before it.

    Models are retrained at calibration times only; records before the first
    calibration are invalid.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    valid = np.ones(t.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    cals = sorted(cals, key=lambda c: c.t)
    cal_t = np.array([c.t for c in cals], dtype=float)
    n_known = np.searchsorted(cal_t, t, side="right")
    y = np.full(t.shape, np.nan)
    s = np.full(t.shape, np.nan)
    ok = np.zeros(t.shape, dtype=bool)
    for k in np.unique(n_known):
        if k == 0:
            continue
        idx = np.flatnonzero(n_known == k)
        part = correct_offline(cals[:k], kernel, t[idx], x[idx], valid[idx], optimize_variance, slope_floor, model_cache)
        y[idx], s[idx], ok[idx] = part.y_hat, part.sigma_y, part.valid
    return CorrectionResult(t, y, s, ok, "online")


def baseline_stepwise(cals, t, x, valid=None, slope_floor=SLOPE_FLOOR) -> CorrectionResult:
    """Carry each calibration forward until the next one.

    Before the first calibration its values are carried backwards.
    """
    if len(cals) == 0:
        raise ValueError("stepwise baseline needs at least one calibration")
    t = np.asarray(t, dtype=float)
    ct, beta, se = calibration_arrays(cals)
    k = np.clip(np.searchsorted(ct, t, side="right") - 1, 0, ct.size - 1)
    return _invert(t, x, beta[k, 0], se[k, 0] ** 2, beta[k, 1], se[k, 1] ** 2, valid, slope_floor, "stepwise")


def baseline_linear(cals, t, x, valid=None, slope_floor=SLOPE_FLOOR) -> CorrectionResult:
    """Linear interpolation of coefficients between calibrations, flat outside."""
    if len(cals) < 2:
        res = baseline_stepwise(cals, t, x, valid, slope_floor)
        res.mode = "linear"
        return res
    t = np.asarray(t, dtype=float)
    ct, beta, se = calibration_arrays(cals)
    ct, first = np.unique(ct, return_index=True)
    beta, se = beta[first], se[first]
    b0 = np.interp(t, ct, beta[:, 0])
    b1 = np.interp(t, ct, beta[:, 1])
    s0 = np.interp(t, ct, se[:, 0])
    s1 = np.interp(t, ct, se[:, 1])
    return _invert(t, x, b0, s0**2, b1, s1**2, valid, slope_floor, "linear")


def run_mode(mode: str, cals, kernel, t, x, valid=None, optimize_variance=True, slope_floor=SLOPE_FLOOR) -> CorrectionResult:
    if mode == "offline":
        return correct_offline(cals, kernel, t, x, valid, optimize_variance, slope_floor)
    if mode == "online":
        return correct_online(cals, kernel, t, x, valid, optimize_variance, slope_floor)
    if mode == "stepwise":
        return baseline_stepwise(cals, t, x, valid, slope_floor)
    if mode == "linear":
        return baseline_linear(cals, t, x, valid, slope_floor)
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


class DriftCorrector(BaseEstimator):
    """Estimator wrapper around the correction modes.

    ``fit`` takes a list of :class:`Calibration`; ``predict`` takes an
    ``(n, 2)`` array of ``[t_hours, signal]`` rows and returns the corrected
    analyte values (NaN where no valid prediction exists).
    """

    def __init__(self, kernel=None, mode="offline", optimize_variance=True, slope_floor=SLOPE_FLOOR):
        self.kernel = kernel
        self.mode = mode
        self.optimize_variance = optimize_variance
        self.slope_floor = slope_floor

    def fit(self, calibrations, y=None):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        cals = list(calibrations)
        if not cals or not all(isinstance(c, Calibration) for c in cals):
            raise ValueError("fit expects a non-empty sequence of Calibration objects")
        self.calibrations_ = sorted(cals, key=lambda c: c.t)
        self.kernel_ = self.kernel if self.kernel is not None else KernelSpec()
        self.models_ = train_models(self.calibrations_, self.kernel_, self.optimize_variance)
        return self

    def correct(self, t, x, valid=None) -> CorrectionResult:
        if not hasattr(self, "calibrations_"):
            raise NotFittedError("DriftCorrector is not fitted yet")
        if self.mode == "offline":
            return correct(self.models_, t, x, valid, self.slope_floor, "offline")
        return run_mode(self.mode, self.calibrations_, self.kernel_, t, x, valid, self.optimize_variance, self.slope_floor)

    def predict(self, X, return_std=False):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValueError(f"expected an (n, 2) array of [t_hours, signal], got shape {X.shape}")
        res = self.correct(X[:, 0], X[:, 1])
        return (res.y_hat, res.sigma_y) if return_std else res.y_hat

    def coefficient_band(self, ts, index: int) -> dict:
        """Posterior mean and 95% band of one coefficient (offline models)."""
        if not hasattr(self, "models_"):
            raise NotFittedError("DriftCorrector is not fitted yet")
        mean, var = self.models_[index].predict(ts)
        half = 1.959963984540054 * np.sqrt(var)
        return {"t_hours": np.asarray(ts, dtype=float), "mean": mean, "lo95": mean - half, "hi95": mean + half}


def write_band_csv(path, band: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ("t_hours", "mean", "lo95", "hi95")
        w.writerow(cols)
        for row in zip(*(band[c] for c in cols)):
            w.writerow([f"{v:.17g}" for v in row])
