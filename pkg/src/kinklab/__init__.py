"""Structural kinks in trapped-ion Coulomb crystals.

Equilibria and their stability, bifurcation continuation, normal modes,
Peierls-Nabarro landscapes, molecular dynamics, camera imaging and trap
parameter fitting for ions in linear Paul traps.
"""

from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # pragma: no cover - running from a source tree
    __version__ = "0.1.0"

from .model import (Configuration, Evaluator, IonSpecies, PaulTrap, PseudoTrap, TensorTrap,
                    gradient, hessian, make_configuration, potential_energy)
from .statics import (CriticalPoint, SeedSpec, classify, make_seed, newton_critical, relax)
from .modes import ModeSpectrum, normal_modes, omega_low_curve
from .continuation import (BifurcationEvent, Branch, audit_event, branch_switch, index_audit,
                           trace_branch)
from .pn_landscape import PNLandscape, mass_defect_landscape, pn_extract, two_kink_analysis
from .dynamics import State, Trajectory, excite_mode, integrate, kink_position, thermal_state
from .floquet import floquet_analysis
from .imaging import CameraModel, render, spot_metrics
from .trapfit import FitParameters, Observation, fit
from .units import UnitSystem, experiment_units

__all__ = [
    "Configuration", "Evaluator", "IonSpecies", "PaulTrap", "PseudoTrap", "TensorTrap",
    "gradient", "hessian", "make_configuration", "potential_energy",
    "CriticalPoint", "SeedSpec", "classify", "make_seed", "newton_critical", "relax",
    "ModeSpectrum", "normal_modes", "omega_low_curve",
    "BifurcationEvent", "Branch", "audit_event", "branch_switch", "index_audit", "trace_branch",
    "PNLandscape", "mass_defect_landscape", "pn_extract", "two_kink_analysis",
    "State", "Trajectory", "excite_mode", "integrate", "kink_position", "thermal_state",
    "floquet_analysis", "CameraModel", "render", "spot_metrics",
    "FitParameters", "Observation", "fit", "UnitSystem", "experiment_units",
]
