"""Error metrics against ground truth, with masking of unusable periods."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EvalMask:
    """Closed time windows ``(t_lo, t_hi)`` excluded from evaluation."""

    windows: tuple = field(default_factory=tuple)

    def __post_init__(self):
        ws = tuple(sorted((float(a), float(b)) for a, b in self.windows))
        for a, b in ws:
            if not b >= a:
                raise ValueError(f"mask window ({a}, {b}) has negative length")
        object.__setattr__(self, "windows", ws)

    def covers(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=bool)
        for a, b in self.windows:
            out |= (t >= a) & (t <= b)
        return out

    @classmethod
    def parse(cls, text: str | None) -> "EvalMask":
        """Parse ``"lo:hi,lo:hi"``."""
        if not text:
            return cls()
        windows = []
        for part in text.split(","):
            try:
                lo, hi = part.split(":")
                windows.append((float(lo), float(hi)))
            except ValueError:
                raise ValueError(f"bad mask window {part!r}; expected lo:hi") from None
        return cls(tuple(windows))


def _usable(predictions, truths, t=None, mask=None, valid=None):
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(truths, dtype=float)
    if p.shape != y.shape:
        raise ValueError(f"predictions and truths differ in shape: {p.shape} vs {y.shape}")
    ok = np.isfinite(p) & np.isfinite(y)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    if mask is not None and mask.windows:
        if t is None:
            raise ValueError("a mask needs timestamps")
        ok &= ~mask.covers(t)
    if not ok.any():
        raise ValueError("no usable prediction/truth pairs")
    return p[ok] - y[ok]


def mse(predictions, truths, t=None, mask=None, valid=None) -> float:
    r = _usable(predictions, truths, t, mask, valid)
    return float(np.mean(r * r))


def rmse(predictions, truths, t=None, mask=None, valid=None) -> float:
    return float(np.sqrt(mse(predictions, truths, t, mask, valid)))


def relative_mse(method_mse: float, baseline_mse: float) -> float:
    if not baseline_mse > 0:
        raise ValueError("baseline MSE must be positive")
    return float(method_mse) / float(baseline_mse)


def residual_quantiles(predictions, truths, qs=(0.5, 0.9), t=None, mask=None, valid=None) -> np.ndarray:
    """Quantiles of absolute residuals (linear interpolation between order statistics)."""
    r = _usable(predictions, truths, t, mask, valid)
    return np.quantile(np.abs(r), qs)


def align(pred_t, ref_t, ref_y, tolerance=None) -> np.ndarray:
    """Ground truth values paired to ``pred_t``.

    Exact timestamp matches are used when present; otherwise the nearest
    reference sample within ``tolerance`` hours (default half the median
    reference spacing). Unpaired entries are NaN.
    """
    pred_t = np.asarray(pred_t, dtype=float)
    ref_t = np.asarray(ref_t, dtype=float)
    ref_y = np.asarray(ref_y, dtype=float)
    order = np.argsort(ref_t, kind="stable")
    ref_t, ref_y = ref_t[order], ref_y[order]
    if tolerance is None:
        tolerance = 0.5 * float(np.median(np.diff(ref_t))) if ref_t.size > 1 else 0.0
    out = np.full(pred_t.shape, np.nan)
    if ref_t.size == 0:
        return out
    j = np.clip(np.searchsorted(ref_t, pred_t), 0, ref_t.size - 1)
    jm = np.clip(j - 1, 0, ref_t.size - 1)
    nearest = np.where(np.abs(ref_t[jm] - pred_t) <= np.abs(ref_t[j] - pred_t), jm, j)
    exact = ref_t[j] == pred_t
    nearest = np.where(exact, j, nearest)
    ok = exact | (np.abs(ref_t[nearest] - pred_t) <= tolerance)
    out[ok] = ref_y[nearest[ok]]
    return out
