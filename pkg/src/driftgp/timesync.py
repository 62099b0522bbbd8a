"""Clock offset estimation between a sensor stream and a reference stream.

Offsets are in seconds and follow one convention throughout: the offset is
the amount added to reference timestamps to put them on the sensor clock.
An event the sensor logs at ``t`` appears in the reference log at
``t - offset``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .calibration import InsufficientDataError, ols_line

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OffsetEstimate:
    window_center: float  # hours
    offset: float  # seconds
    correlation: float


def _minmax(v):
    lo, hi = np.min(v), np.max(v)
    return (v - lo) / (hi - lo)


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a @ a) * (b @ b))
    return float(a @ b / den) if den > 0 else np.nan


def estimate_offsets(
    sensor_t,
    sensor_v,
    ref_t,
    ref_v,
    window_hours: float = 5.0,
    search_bound_s: float = 200.0,
    grid_step_s: float = 2.0,
) -> list[OffsetEstimate]:
    """Correlation-maximising offset in each non-overlapping window.

    Within a window the sensor samples are kept at their native times and the
    reference is linearly interpolated at ``t - offset`` for every offset on
    the search grid. Both signals are min-max normalised and compared with
    the Pearson correlation; ties go to the smallest absolute offset. Windows
    where either signal is constant are skipped.
    """
    st = np.asarray(sensor_t, dtype=float)
    sv = np.asarray(sensor_v, dtype=float)
    rt = np.asarray(ref_t, dtype=float)
    rv = np.asarray(ref_v, dtype=float)
    keep = np.isfinite(st) & np.isfinite(sv)
    st, sv = st[keep], sv[keep]
    keep = np.isfinite(rt) & np.isfinite(rv)
    order = np.argsort(rt[keep], kind="stable")
    rt, rv = rt[keep][order], rv[keep][order]
    if st.size == 0 or rt.size < 2:
        return []

    n_steps = int(np.floor(search_bound_s / grid_step_s + 1e-9))
    offsets = np.arange(-n_steps, n_steps + 1) * grid_step_s
    offsets = offsets[np.argsort(np.abs(offsets), kind="stable")]  # ties -> smallest |offset|
    bound_h = offsets.max(initial=0.0) / 3600.0

    out = []
    start = st.min()
    n_win = int(np.ceil((st.max() - start) / window_hours + 1e-12)) or 1
    for k in range(n_win):
        lo, hi = start + k * window_hours, start + (k + 1) * window_hours
        in_win = (st >= lo) & ((st < hi) if k < n_win - 1 else (st <= hi))
        # every shifted sample must fall inside the reference record
        in_win &= (st - bound_h >= rt[0]) & (st + bound_h <= rt[-1])
        if in_win.sum() < 3:
            continue
        t_w, s_w = st[in_win], sv[in_win]
        if np.ptp(s_w) == 0:
            log.info("window [%g, %g) skipped: constant sensor signal", lo, hi)
            continue
        s_w = _minmax(s_w)
        best, best_c = None, -np.inf
        for off in offsets:
            r_w = np.interp(t_w - off / 3600.0, rt, rv)
            if np.ptp(r_w) == 0:
                continue
            c = _pearson(s_w, _minmax(r_w))
            if c > best_c:
                best, best_c = off, c
        if best is None:
            log.info("window [%g, %g) skipped: constant reference signal", lo, hi)
            continue
        out.append(OffsetEstimate(0.5 * (lo + hi), float(best), float(best_c)))
    return out


@dataclass(frozen=True)
class PiecewiseOffset:
    """Piecewise-linear offset in seconds as a function of time in hours.

    Segment ``i`` covers ``breakpoints[i-1] < t <= breakpoints[i]``.
    """

    breakpoints: tuple
    slopes: tuple
    intercepts: tuple

    def segment(self, t):
        return np.searchsorted(np.asarray(self.breakpoints, dtype=float), t, side="left")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        i = self.segment(t)
        a = np.asarray(self.slopes, dtype=float)[i]
        b = np.asarray(self.intercepts, dtype=float)[i]
        return a * t + b

    def __neg__(self):
        return PiecewiseOffset(self.breakpoints, tuple(-a for a in self.slopes), tuple(-b for b in self.intercepts))

    @classmethod
    def constant(cls, seconds: float) -> "PiecewiseOffset":
        return cls((), (0.0,), (float(seconds),))


def fit_offset_model(estimates, breakpoints=()) -> PiecewiseOffset:
    """Least-squares line per segment through ``(window_center, offset)`` pairs."""
    bps = tuple(sorted(float(b) for b in breakpoints))
    t = np.array([e.window_center for e in estimates], dtype=float)
    off = np.array([e.offset for e in estimates], dtype=float)
    seg = np.searchsorted(np.asarray(bps, dtype=float), t, side="left")
    slopes, intercepts = [], []
    for i in range(len(bps) + 1):
        m = seg == i
        lo = bps[i - 1] if i > 0 else -np.inf
        hi = bps[i] if i < len(bps) else np.inf
        if m.sum() < 2:
            raise InsufficientDataError(f"segment {i} ({lo:g} < t <= {hi:g}) has {int(m.sum())} estimate(s), need 2")
        line = ols_line(t[m], off[m])
        slopes.append(line.slope)
        intercepts.append(line.intercept)
    return PiecewiseOffset(bps, tuple(slopes), tuple(intercepts))


def apply_offset(t, model) -> np.ndarray:
    """Shift timestamps (hours) by ``model(t)`` seconds."""
    t = np.asarray(t, dtype=float)
    return t + model(t) / 3600.0
