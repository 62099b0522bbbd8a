"""Stationary covariance functions over scalar time inputs (hours)."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

FAMILIES = ("rbf", "rq", "matern")
MATERN_NU = (0.5, 1.5, 2.5)

_ALIASES = {
    "rbf": "rbf",
    "se": "rbf",
    "rq": "rq",
    "rationalquadratic": "rq",
    "rational_quadratic": "rq",
    "matern": "matern",
}


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and hyperparameters.

    ``variance`` is in squared units of the modelled quantity, ``length`` in
    hours. ``alpha`` only matters for the rational quadratic family and ``nu``
    only for Matern. With ``rq_squared_distance`` off the rational quadratic
    kernel uses the distance unsquared, ``(1 + r / (2 alpha l^2))^-alpha``.
    """

    family: str = "matern"
    variance: float = 1.0
    length: float = 200.0
    alpha: float = 1.0
    nu: float = 1.5
    rq_squared_distance: bool = True

    def __post_init__(self):
        family = _ALIASES.get(str(self.family).lower().replace("é", "e"))
        if family is None:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "nu", float(self.nu))
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"kernel variance must be positive, got {self.variance}")
        if not (np.isfinite(self.length) and self.length > 0):
            raise ValueError(f"kernel length must be positive, got {self.length}")
        if family == "rq" and not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"rq alpha must be positive, got {self.alpha}")
        if family == "matern" and self.nu not in MATERN_NU:
            raise ValueError(f"matern nu must be one of {MATERN_NU}, got {self.nu}")

    @property
    def label(self) -> str:
        name = {"rbf": "RBF", "rq": "RQ", "matern": "Matern"}[self.family]
        return f"{name}-{self.length:g}"

    def with_variance(self, variance: float) -> "KernelSpec":
        return replace(self, variance=float(variance))

    def __call__(self, t, t2):
        """Evaluate k(t, t2) elementwise with numpy broadcasting."""
        r = np.abs(np.asarray(t, dtype=float) - np.asarray(t2, dtype=float))
        return self.from_distance(r)

    def from_distance(self, r):
        r = np.asarray(r, dtype=float)
        s2, ell = self.variance, self.length
        if self.family == "rbf":
            return s2 * np.exp(-0.5 * (r / ell) ** 2)
        if self.family == "rq":
            d = r**2 if self.rq_squared_distance else r
            return s2 * (1.0 + d / (2.0 * self.alpha * ell**2)) ** (-self.alpha)
        if self.nu == 0.5:
            return s2 * np.exp(-r / ell)
        if self.nu == 1.5:
            a = np.sqrt(3.0) * r / ell
            return s2 * (1.0 + a) * np.exp(-a)
        a = np.sqrt(5.0) * r / ell
        return s2 * (1.0 + a + a**2 / 3.0) * np.exp(-a)

    def gram(self, ts, ts2=None) -> np.ndarray:
        """Covariance matrix with element (i, j) = k(ts[i], ts2[j])."""
        a = np.atleast_1d(np.asarray(ts, dtype=float)).ravel()
        b = a if ts2 is None else np.atleast_1d(np.asarray(ts2, dtype=float)).ravel()
        if a.size == 0 or b.size == 0:
            raise ValueError("gram requires non-empty input lists")
        return self.from_distance(np.abs(a[:, None] - b[None, :]))

    def diag(self, ts) -> np.ndarray:
        return np.full(np.asarray(ts).size, self.variance)

    def to_dict(self) -> dict:
        out = {"family": self.family, "variance": self.variance, "length_hours": self.length}
        if self.family == "rq":
            out["alpha"] = self.alpha
            out["rq_squared_distance"] = self.rq_squared_distance
        if self.family == "matern":
            out["nu"] = str(self.nu)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        known = {"family", "variance", "length_hours", "length", "alpha", "nu", "rq_squared_distance"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown kernel key(s): {sorted(unknown)}")
        kw = {"family": d.get("family", "matern")}
        if "variance" in d:
            kw["variance"] = float(d["variance"])
        if "length_hours" in d or "length" in d:
            kw["length"] = float(d.get("length_hours", d.get("length")))
        if "alpha" in d:
            kw["alpha"] = float(d["alpha"])
        if "nu" in d:
            kw["nu"] = float(d["nu"])
        if "rq_squared_distance" in d:
            kw["rq_squared_distance"] = bool(d["rq_squared_distance"])
        return cls(**kw)


def eval_kernel(spec: KernelSpec, t: float, t2: float) -> float:
    return float(spec(t, t2))


def gram(spec: KernelSpec, ts, ts2=None) -> np.ndarray:
    return spec.gram(ts, ts2)


__all__ = ["KernelSpec", "eval_kernel", "gram", "FAMILIES", "MATERN_NU"]
