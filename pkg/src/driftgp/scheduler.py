"""Fleet-level calibration scheduling driven by prediction uncertainty.

A fixed total calibration frequency ``n / initial_interval`` is shared among
``n`` sensors. Every sensor keeps at least ``1 / max_interval``; the rest is
split in proportion to each sensor's share of total uncertainty and blended
into the previous frequency with an exponential moving average.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class ScheduleConfig:
    alpha: float = 0.1
    initial_interval: float = 50.0
    max_interval: float | None = None
    update_period: float = 1.0
    bootstrap_factor: float = 10.0
    ratio_cap: float = 1e3

    def __post_init__(self):
        if self.max_interval is None:
            object.__setattr__(self, "max_interval", 3.0 * self.initial_interval)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.initial_interval > 0:
            raise ValueError(f"initial_interval must be positive, got {self.initial_interval}")
        if not self.max_interval >= self.initial_interval:
            raise ValueError(
                f"max_interval ({self.max_interval}) must be at least initial_interval ({self.initial_interval})"
            )
        if not self.update_period > 0:
            raise ValueError(f"update_period must be positive, got {self.update_period}")

    @property
    def f_min(self) -> float:
        return 1.0 / self.max_interval

    def disposable_frequency(self, n_sensors: int) -> float:
        return n_sensors * (1.0 / self.initial_interval - self.f_min)


@dataclass
class ScheduleState:
    intervals: np.ndarray
    last_calibration: np.ndarray  # NaN until the first calibration
    counts: np.ndarray
    first_time: np.ndarray
    f_min: float
    f_avail: float

    @classmethod
    def initial(cls, cfg: ScheduleConfig, first_times) -> "ScheduleState":
        first = np.asarray(first_times, dtype=float).ravel()
        n = first.size
        return cls(
            intervals=np.full(n, float(cfg.initial_interval)),
            last_calibration=np.full(n, np.nan),
            counts=np.zeros(n, dtype=int),
            first_time=first,
            f_min=cfg.f_min,
            f_avail=cfg.disposable_frequency(n),
        )

    @property
    def n_sensors(self) -> int:
        return self.intervals.size

    def total_frequency(self) -> float:
        return float(np.sum(1.0 / self.intervals))

    def next_due(self, i: int) -> float:
        """Earliest time at which sensor ``i`` stops being within its interval."""
        if np.isnan(self.last_calibration[i]):
            return float(self.first_time[i])
        return float(self.last_calibration[i] + self.intervals[i])

    def record_calibration(self, i: int, t: float) -> None:
        self.last_calibration[i] = t
        self.counts[i] += 1

    def copy(self) -> "ScheduleState":
        return replace(
            self,
            intervals=self.intervals.copy(),
            last_calibration=self.last_calibration.copy(),
            counts=self.counts.copy(),
            first_time=self.first_time.copy(),
        )


def uncertainty_from_moments(means, sds, n_calibrations: int, ratio_cap: float = 1e3) -> float:
    """Quadratic mean of relative coefficient errors divided by ``C**2``."""
    if n_calibrations < 1:
        raise ValueError("uncertainty is undefined without calibrations")
    means = np.abs(np.asarray(means, dtype=float))
    sds = np.asarray(sds, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(means > 0, sds / means, np.where(sds > 0, np.inf, 0.0))
    ratio = np.minimum(ratio, ratio_cap)
    return float(np.sqrt(np.mean(ratio**2)) / n_calibrations**2)


def sensor_uncertainty(models, n_calibrations: int, t: float, ratio_cap: float = 1e3) -> float:
    """Uncertainty of one sensor at time ``t`` from its coefficient models."""
    means, sds = [], []
    for m in models:
        mu, var = m.predict([t])
        means.append(mu[0])
        sds.append(np.sqrt(var[0]))
    return uncertainty_from_moments(means, sds, n_calibrations, ratio_cap)


def update_intervals(state: ScheduleState, uncertainties, cfg: ScheduleConfig) -> ScheduleState:
    """One fleet-wide interval update. Returns a new state.

    Sensors that were never calibrated get ``bootstrap_factor`` times the
    largest uncertainty among calibrated sensors. If no sensor has been
    calibrated yet the state is returned unchanged. When total uncertainty is
    zero the disposable frequency is split evenly.
    """
    u = np.asarray(uncertainties, dtype=float).copy()
    if u.size != state.n_sensors:
        raise ValueError(f"expected {state.n_sensors} uncertainties, got {u.size}")
    calibrated = state.counts >= 1
    if not calibrated.any() or cfg.alpha == 0.0:
        return state.copy()
    if np.any(~np.isfinite(u[calibrated])) or np.any(u[calibrated] < 0):
        raise ValueError("uncertainties of calibrated sensors must be finite and non-negative")
    u[~calibrated] = cfg.bootstrap_factor * np.max(u[calibrated])

    total = u.sum()
    share = u / total if total > 0 else np.full(u.size, 1.0 / u.size)
    f_inst = state.f_min + state.f_avail * share
    f_old = 1.0 / state.intervals
    f_new = cfg.alpha * f_inst + (1.0 - cfg.alpha) * f_old
    new = state.copy()
    new.intervals = 1.0 / f_new
    return new


def is_calibration_due(state: ScheduleState, i: int, t: float) -> bool:
    if np.isnan(state.last_calibration[i]):
        return bool(t >= state.first_time[i])
    return bool(t - state.last_calibration[i] > state.intervals[i])
