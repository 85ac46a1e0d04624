"""Conversion between nondimensional crystal units and SI.

Two unit systems are used.  The pseudopotential system measures time in
``1/w_x`` and lengths in ``d = (e^2 / (4 pi eps0 m w_x^2))^(1/3)``.  The Paul
system measures time in ``2/Omega`` (so the drive is ``cos 2t``) and lengths in
``d = (4 e^2 / (4 pi eps0 m Omega^2))^(1/3)``, which keeps the Coulomb force
coefficient equal to one in the Mathieu form of the equations of motion.
Energies are ``m w^2 d^2`` with ``w`` the inverse time unit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import constants as sc

AMU = sc.physical_constants["atomic mass constant"][0]
MG24_MASS = 23.985041697 * AMU
# Mg+ 3s-3p cooling transition natural linewidth (Hz)
MG_LINEWIDTH = 41.4e6
EXPERIMENT_OMEGA_X = 2 * np.pi * 56.7e3
EXPERIMENT_OMEGA_RF = 2 * np.pi * 6.22e6


def doppler_limit(linewidth_hz: float) -> float:
    """Doppler cooling limit ``hbar Gamma / 2 k_B`` for a natural linewidth in Hz."""
    return sc.hbar * 2 * np.pi * linewidth_hz / (2 * sc.k)


@dataclass(frozen=True)
class UnitSystem:
    """Scale factors of one nondimensionalization.

    Exactly one of ``omega_x`` (pseudopotential system) or ``omega_rf`` (Paul
    system) must be given.  ``doppler_temperature`` is optional (K).
    """

    reference_mass: float
    reference_charge: float = sc.e
    omega_x: float | None = None
    omega_rf: float | None = None
    doppler_temperature: float | None = None

    def __post_init__(self):
        if (self.omega_x is None) == (self.omega_rf is None):
            raise ValueError("give exactly one of omega_x or omega_rf")
        if not self.reference_mass > 0 or not self.reference_charge > 0:
            raise ValueError("mass and charge must be positive")

    @property
    def kind(self) -> str:
        return "pseudo" if self.omega_x is not None else "paul"

    @property
    def frequency_unit(self) -> float:
        """Inverse of the time unit (rad/s)."""
        return self.omega_x if self.omega_x is not None else 0.5 * self.omega_rf

    @property
    def time_unit(self) -> float:
        return 1.0 / self.frequency_unit

    @property
    def length_unit(self) -> float:
        k = self.reference_charge**2 / (4 * np.pi * sc.epsilon_0)
        return (k / (self.reference_mass * self.frequency_unit**2)) ** (1.0 / 3.0)

    @property
    def energy_unit(self) -> float:
        return self.reference_mass * (self.frequency_unit * self.length_unit) ** 2

    def length_to_si(self, x):
        return np.asarray(x) * self.length_unit

    def length_from_si(self, x):
        return np.asarray(x) / self.length_unit

    def time_to_si(self, t):
        return np.asarray(t) * self.time_unit

    def time_from_si(self, t):
        return np.asarray(t) / self.time_unit

    def energy_to_si(self, e):
        return np.asarray(e) * self.energy_unit

    def energy_from_si(self, e):
        return np.asarray(e) / self.energy_unit

    def frequency_to_si(self, w):
        """Angular frequency (rad/s) of a nondimensional frequency."""
        return np.asarray(w) * self.frequency_unit

    def kT(self, temperature: float | None = None) -> float:
        """``k_B T`` in energy units; defaults to the Doppler temperature."""
        t = self.doppler_temperature if temperature is None else temperature
        if t is None:
            raise ValueError("no temperature given and no Doppler temperature attached")
        return float(sc.k * t / self.energy_unit)

    def in_kT(self, energy) -> np.ndarray:
        """Nondimensional energy expressed in units of ``k_B T_D``."""
        return np.asarray(energy) / self.kT()

    def pseudo_from_paul(self, beta_x: float) -> "UnitSystem":
        """Pseudopotential system whose axial frequency is ``beta_x * Omega / 2``."""
        if self.kind != "paul":
            raise ValueError("already a pseudopotential unit system")
        return UnitSystem(self.reference_mass, self.reference_charge,
                          omega_x=beta_x * self.frequency_unit,
                          doppler_temperature=self.doppler_temperature)


def experiment_units(kind: str = "pseudo") -> UnitSystem:
    """24Mg+ at the trap frequencies of the reference experiment."""
    td = doppler_limit(MG_LINEWIDTH)
    if kind == "pseudo":
        return UnitSystem(MG24_MASS, omega_x=EXPERIMENT_OMEGA_X, doppler_temperature=td)
    return UnitSystem(MG24_MASS, omega_rf=EXPERIMENT_OMEGA_RF, doppler_temperature=td)
