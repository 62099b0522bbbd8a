"""Probabilistic sensor drift correction with per-coefficient GP regression,
and uncertainty-driven calibration scheduling for sensor fleets."""

__version__ = "0.1.0"

from .calibration import Calibration, fit_affine, make_calibration_from_cycle
from .drift import DriftCorrector, correct_offline, correct_online
from .gpr import HeteroscedasticGP
from .kernels import KernelSpec
from .scheduler import ScheduleConfig, ScheduleState, update_intervals

__all__ = [
    "Calibration",
    "DriftCorrector",
    "HeteroscedasticGP",
    "KernelSpec",
    "ScheduleConfig",
    "ScheduleState",
    "correct_offline",
    "correct_online",
    "fit_affine",
    "make_calibration_from_cycle",
    "update_intervals",
]
