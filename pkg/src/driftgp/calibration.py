"""Affine two-level calibration: x = beta0 + beta1 * y fitted by least squares."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

CSV_COLUMNS = ("t_hours", "beta0", "beta1", "se0", "se1", "n_samples")


class InsufficientDataError(ValueError):
    pass


class SingularDesignError(ValueError):
    pass


class CalibrationUnavailable(ValueError):
    """Not enough qualifying samples at one of the two levels."""


@dataclass(frozen=True)
class Calibration:
    t: float
    beta0: float
    beta1: float
    se0: float
    se1: float
    n_samples: int

    @property
    def coefficients(self):
        return np.array([self.beta0, self.beta1])

    @property
    def standard_errors(self):
        return np.array([self.se0, self.se1])


@dataclass(frozen=True)
class LineFit:
    intercept: float
    slope: float
    se_intercept: float
    se_slope: float
    rss: float
    n: int


def ols_line(u, v) -> LineFit:
    """Least-squares line v = a + b*u with classical standard errors.

    Standard errors are only defined with n > 2; with exactly two points
    they are reported as zero.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n = u.size
    if n < 2:
        raise InsufficientDataError(f"need at least 2 points for a line, got {n}")
    u_bar, v_bar = u.mean(), v.mean()
    du = u - u_bar
    suu = float(du @ du)
    if suu <= 0.0 or suu <= 1e-28 * max(1.0, float(u_bar) ** 2) * n:
        raise SingularDesignError("zero spread in the regressor")
    slope = float(du @ (v - v_bar)) / suu
    intercept = float(v_bar - slope * u_bar)
    resid = v - intercept - slope * u
    rss = float(resid @ resid)
    if n > 2:
        s2 = rss / (n - 2)
        se_slope = np.sqrt(s2 / suu)
        se_intercept = np.sqrt(s2 * (1.0 / n + u_bar**2 / suu))
    else:
        se_slope = se_intercept = 0.0
    return LineFit(intercept, slope, float(se_intercept), float(se_slope), rss, n)


def fit_affine(y_ref, x_signal, t: float) -> Calibration:
    """Fit the affine response to paired (reference, signal) samples.

    Requires at least three samples so the standard errors have a residual
    degree of freedom.
    """
    y_ref = np.asarray(y_ref, dtype=float).ravel()
    x_signal = np.asarray(x_signal, dtype=float).ravel()
    if y_ref.size != x_signal.size:
        raise ValueError("y_ref and x_signal must have equal length")
    if y_ref.size < 3:
        raise InsufficientDataError(f"calibration needs at least 3 samples, got {y_ref.size}")
    line = ols_line(y_ref, x_signal)
    return Calibration(float(t), line.intercept, line.slope, line.se_intercept, line.se_slope, int(y_ref.size))


def make_calibration_from_cycle(
    t,
    signal,
    reference,
    window,
    low_count: int = 6,
    high_count: int = 6,
    low_threshold: float = 10.0,
    high_threshold: float = 90.0,
    valid=None,
) -> Calibration:
    """Calibrate from the low and high plateaus of one saturation/anoxic cycle.

    Within ``window = (t_lo, t_hi)`` the ``low_count`` samples with reference
    at or below ``low_threshold`` and the ``high_count`` samples at or above
    ``high_threshold`` closest to the window midpoint are used. The
    calibration is stamped with the mean time of the chosen samples.
    """
    for name, c in (("low_count", low_count), ("high_count", high_count)):
        if not 3 <= c <= 6:
            raise ValueError(f"{name} must be in 3..6, got {c}")
    t = np.asarray(t, dtype=float)
    signal = np.asarray(signal, dtype=float)
    reference = np.asarray(reference, dtype=float)
    t_lo, t_hi = window
    ok = (t >= t_lo) & (t <= t_hi) & np.isfinite(signal) & np.isfinite(reference)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    mid = 0.5 * (t_lo + t_hi)
    picked = []
    for mask, count, level in (
        (ok & (reference <= low_threshold), low_count, "low"),
        (ok & (reference >= high_threshold), high_count, "high"),
    ):
        idx = np.flatnonzero(mask)
        if idx.size < count:
            raise CalibrationUnavailable(
                f"only {idx.size} {level}-level samples in window [{t_lo:g}, {t_hi:g}], need {count}"
            )
        order = np.argsort(np.abs(t[idx] - mid), kind="stable")
        picked.append(idx[order[:count]])
    sel = np.sort(np.concatenate(picked))
    return fit_affine(reference[sel], signal[sel], float(np.mean(t[sel])))


def calibration_arrays(cals):
    """Columns ``(t, beta (n, 2), se (n, 2))`` sorted by time."""
    cals = sorted(cals, key=lambda c: c.t)
    t = np.array([c.t for c in cals], dtype=float)
    beta = np.array([[c.beta0, c.beta1] for c in cals], dtype=float).reshape(-1, 2)
    se = np.array([[c.se0, c.se1] for c in cals], dtype=float).reshape(-1, 2)
    return t, beta, se


def write_calibrations(path, cals) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for c in cals:
            w.writerow([f"{c.t:.17g}", f"{c.beta0:.17g}", f"{c.beta1:.17g}", f"{c.se0:.17g}", f"{c.se1:.17g}", c.n_samples])


def read_calibrations(path) -> list[Calibration]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing calibration column(s) {sorted(missing)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(
                    Calibration(
                        float(row["t_hours"]),
                        float(row["beta0"]),
                        float(row["beta1"]),
                        float(row["se0"]),
                        float(row["se1"]),
                        int(row["n_samples"]),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out
