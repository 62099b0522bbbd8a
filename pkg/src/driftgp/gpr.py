"""Gaussian process regression with per-observation noise variances.

The model is a zero-mean GP on ``y - m`` where ``m`` is a constant offset
(the empirical mean of the targets by default). Observation ``i`` carries its
own noise variance, so the noisy Gram matrix is ``K + diag(noise) + jitter*I``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize_scalar
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from ._linalg import NumericalError, jittered_cholesky
from .kernels import KernelSpec

JITTER_START = 1e-9
JITTER_STOP = 1e-3
NOISE_FLOOR = 1e-8
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class TrainingSet:
    ts: np.ndarray
    ys: np.ndarray
    noise_vars: np.ndarray

    @property
    def n(self) -> int:
        return self.ts.size

    @property
    def sample_variance(self) -> float:
        return float(np.var(self.ys, ddof=1)) if self.n > 1 else 0.0

    @property
    def degenerate(self) -> bool:
        """True when every target is the same value."""
        scale = max(1.0, float(np.max(np.abs(self.ys))))
        return bool(np.ptp(self.ys) <= 1e-12 * scale)


def make_training_set(ts, ys, noise_vars=None) -> TrainingSet:
    """Validate, sort and deduplicate observations.

    Observations sharing a timestamp are merged by precision-weighted averaging.
    """
    ts = np.atleast_1d(np.asarray(ts, dtype=float)).ravel()
    ys = np.atleast_1d(np.asarray(ys, dtype=float)).ravel()
    if noise_vars is None:
        noise_vars = np.zeros_like(ys)
    noise_vars = np.atleast_1d(np.asarray(noise_vars, dtype=float)).ravel()
    if not (ts.size == ys.size == noise_vars.size):
        raise ValueError(
            f"ts, ys and noise_vars must have equal length, got {ts.size}, {ys.size}, {noise_vars.size}"
        )
    if ts.size == 0:
        raise ValueError("training set needs at least one observation")
    if not (np.all(np.isfinite(ts)) and np.all(np.isfinite(ys)) and np.all(np.isfinite(noise_vars))):
        raise ValueError("training data must be finite")
    if np.any(noise_vars < 0):
        raise ValueError("noise variances must be non-negative")

    order = np.argsort(ts, kind="stable")
    ts, ys, noise_vars = ts[order], ys[order], noise_vars[order]
    uniq, start = np.unique(ts, return_index=True)
    if uniq.size == ts.size:
        return TrainingSet(ts, ys, noise_vars)

    stops = np.append(start[1:], ts.size)
    out_y = np.empty(uniq.size)
    out_v = np.empty(uniq.size)
    for k, (a, b) in enumerate(zip(start, stops)):
        v = noise_vars[a:b]
        if np.any(v == 0):
            # exact observations dominate; average them equally
            w = (v == 0).astype(float)
            out_v[k] = 0.0
        else:
            w = 1.0 / v
            out_v[k] = 1.0 / w.sum()
        out_y[k] = np.dot(w, ys[a:b]) / w.sum()
    return TrainingSet(uniq, out_y, out_v)


def _resolve_mean(training: TrainingSet, mean) -> float:
    if mean is None or mean == "zero":
        return 0.0
    if mean == "empirical":
        return float(np.mean(training.ys))
    return float(mean)


def noise_floor(training: TrainingSet, variance: float) -> float:
    return NOISE_FLOOR * max(variance, training.sample_variance)


def _factorize(training: TrainingSet, kernel: KernelSpec, mean_offset: float):
    noise = np.maximum(training.noise_vars, noise_floor(training, kernel.variance))
    A = kernel.gram(training.ts) + np.diag(noise)
    L, jitter = jittered_cholesky(A, kernel.variance, JITTER_START, JITTER_STOP)
    resid = training.ys - mean_offset
    alpha = cho_solve((L, True), resid)
    return L, alpha, jitter, noise


def _lml_from_factor(L, alpha, resid) -> float:
    n = resid.size
    return float(-0.5 * resid @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI)


def log_marginal_likelihood(training: TrainingSet, kernel: KernelSpec, mean="empirical") -> float:
    """Log evidence of the targets under the GP, computed from the Cholesky factor."""
    m = _resolve_mean(training, mean)
    L, alpha, _, _ = _factorize(training, kernel, m)
    return _lml_from_factor(L, alpha, training.ys - m)


def variance_search_bounds(training: TrainingSet) -> tuple[float, float]:
    """Natural-log bounds of the kernel-variance search interval."""
    v = max(training.sample_variance, 1e-12)
    return np.log(1e-4 * v), np.log(1e4 * v)


def fit_variance(training: TrainingSet, kernel_template: KernelSpec, mean="empirical", n_grid: int = 41) -> KernelSpec:
    """Replace the template's variance by the value that maximises the LML.

    A coarse grid over log-variance locates the best cell, which is then
    refined by golden-section search between its neighbours. Length and
    family are left untouched. When all targets coincide the variance is set
    to the noise floor.
    """
    if training.n < 2:
        raise ValueError("fit_variance needs at least two observations")
    if training.degenerate:
        return kernel_template.with_variance(NOISE_FLOOR * max(kernel_template.variance, training.sample_variance))

    m = _resolve_mean(training, mean)
    resid = training.ys - m
    unit_gram = kernel_template.with_variance(1.0).gram(training.ts)

    def nlml(log_v):
        # same computation as log_marginal_likelihood, with the unit Gram reused
        v = float(np.exp(log_v))
        noise = np.maximum(training.noise_vars, noise_floor(training, v))
        try:
            L, _ = jittered_cholesky(v * unit_gram + np.diag(noise), v, JITTER_START, JITTER_STOP)
        except NumericalError:
            return np.inf
        alpha = cho_solve((L, True), resid)
        return -_lml_from_factor(L, alpha, resid)

    lo, hi = variance_search_bounds(training)
    grid = np.linspace(lo, hi, n_grid)
    vals = np.array([nlml(g) for g in grid])
    k = int(np.argmin(vals))
    best_x, best_f = grid[k], vals[k]
    if 0 < k < n_grid - 1:
        res = minimize_scalar(nlml, bracket=(grid[k - 1], grid[k], grid[k + 1]), method="golden", tol=1e-6)
        if res.fun <= best_f and grid[k - 1] <= res.x <= grid[k + 1]:
            best_x = float(res.x)
    return kernel_template.with_variance(float(np.exp(best_x)))


def _as_times(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"expected a single time column, got shape {X.shape}")
        X = X[:, 0]
    return np.atleast_1d(X).ravel()


class HeteroscedasticGP(RegressorMixin, BaseEstimator):
    """GP regressor over time with known per-observation noise variances.

    Parameters
    ----------
    kernel : KernelSpec, optional
        Kernel template. Defaults to Matern-3/2 with a 200 hour length.
    optimize_variance : bool
        Fit the kernel variance by maximising the log marginal likelihood.
        Requires at least two distinct observations; otherwise the template
        variance is used.
    mean : {"empirical", "zero"} or float
        Constant prior mean subtracted before solving.
    n_grid : int
        Grid size of the variance search.
    """

    def __init__(self, kernel=None, optimize_variance=True, mean="empirical", n_grid=41):
        self.kernel = kernel
        self.optimize_variance = optimize_variance
        self.mean = mean
        self.n_grid = n_grid

    def fit(self, X, y, noise_var=None):
        training = make_training_set(_as_times(X), y, noise_var)
        kernel = self.kernel if self.kernel is not None else KernelSpec()
        if self.optimize_variance and training.n >= 2:
            kernel = fit_variance(training, kernel, self.mean, self.n_grid)
        self.training_ = training
        self.kernel_ = kernel
        self.degenerate_ = training.degenerate
        self.mean_offset_ = _resolve_mean(training, self.mean)
        self.L_, self.alpha_, self.jitter_, self.noise_var_ = _factorize(training, kernel, self.mean_offset_)
        self.lml_ = _lml_from_factor(self.L_, self.alpha_, training.ys - self.mean_offset_)
        # explicit inverse factor so each prediction is independent of batch composition
        self.L_inv_ = solve_triangular(self.L_, np.eye(training.n), lower=True, check_finite=False)
        return self

    def _check_fitted(self):
        if not hasattr(self, "L_"):
            raise NotFittedError("HeteroscedasticGP is not fitted yet")

    def predict(self, X, return_std=False, return_var=False):
        """Posterior mean (and optionally sd or variance) at the given times."""
        self._check_fitted()
        ts = _as_times(X)
        if ts.size == 0:
            empty = np.empty(0)
            return (empty, empty) if (return_std or return_var) else empty
        Ks = self.kernel_.gram(self.training_.ts, ts)
        # accumulate over training points with elementwise ops only: every output
        # column sees the same arithmetic whatever else is in the batch
        n = self.training_.n
        mean = np.zeros(ts.size)
        for k in range(n):
            mean += self.alpha_[k] * Ks[k]
        mean += self.mean_offset_
        if not (return_std or return_var):
            return mean
        v = np.zeros((n, ts.size))
        for k in range(n):
            v += self.L_inv_[:, k, None] * Ks[k]
        explained = np.zeros(ts.size)
        for i in range(n):
            explained += v[i] * v[i]
        var = np.maximum(self.kernel_.variance - explained, 0.0)
        return mean, (np.sqrt(var) if return_std else var)

    def log_marginal_likelihood(self):
        self._check_fitted()
        return self.lml_

    @property
    def cholesky_factor_(self):
        return self.L_


def fit(training: TrainingSet, kernel: KernelSpec, mean="empirical", optimize_variance=False) -> HeteroscedasticGP:
    return HeteroscedasticGP(kernel, optimize_variance=optimize_variance, mean=mean).fit(
        training.ts, training.ys, training.noise_vars
    )


def predict(post: HeteroscedasticGP, ts_star):
    """Return ``(mean, variance)`` arrays."""
    return post.predict(ts_star, return_var=True)
