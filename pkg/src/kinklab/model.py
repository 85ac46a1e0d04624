"""Ion species, crystal configurations, trap models and exact potential derivatives.

All quantities are nondimensional. In the static (pseudopotential) model the
axial frequency is 1, lengths are in units of ``(e^2 / m w_x^2)^(1/3)`` and
energies in ``m w_x^2 d^2``.  In the Paul model time is in units of ``2/Omega``
and the drive is ``cos 2t``.  Coulomb energies carry no ``4 pi eps0`` factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

MIN_DISTANCE = 1e-6


class SingularGeometryError(ValueError):
    """Two ions are closer than ``MIN_DISTANCE``."""


@dataclass(frozen=True)
class IonSpecies:
    mass_ratio: float = 1.0
    charge_ratio: float = 1.0
    bright: bool = True

    def __post_init__(self):
        if not self.mass_ratio > 0 or not self.charge_ratio > 0:
            raise ValueError(f"invalid species {self}")


REFERENCE = IonSpecies()

PLANAR = (True, True, False)
FULL = (True, True, True)


@dataclass(frozen=True)
class Configuration:
    """Positions of N ions (N x 3), their species and the active axes."""

    positions: np.ndarray
    species: tuple[IonSpecies, ...] = ()
    dof_mask: tuple[bool, bool, bool] = FULL

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 3)
        mask = tuple(bool(m) for m in self.dof_mask)
        pos[:, ~np.array(mask)] = 0.0
        pos.flags.writeable = False
        species = tuple(self.species) or (REFERENCE,) * len(pos)
        if len(species) != len(pos):
            raise ValueError("species list length does not match ion count")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "species", species)
        object.__setattr__(self, "dof_mask", mask)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def masses(self) -> np.ndarray:
        return np.array([s.mass_ratio for s in self.species])

    @property
    def charges(self) -> np.ndarray:
        return np.array([s.charge_ratio for s in self.species])

    @property
    def bright(self) -> np.ndarray:
        return np.array([s.bright for s in self.species])

    @property
    def mask(self) -> np.ndarray:
        return np.array(self.dof_mask)

    @property
    def n_dof(self) -> int:
        return self.n * sum(self.dof_mask)

    def flat(self) -> np.ndarray:
        """Active coordinates, ion-major ``(x0, y0, x1, y1, ...)``."""
        return self.positions[:, self.mask].ravel().copy()

    def with_flat(self, x: np.ndarray) -> "Configuration":
        pos = np.zeros((self.n, 3))
        pos[:, self.mask] = np.asarray(x).reshape(self.n, -1)
        return replace(self, positions=pos)

    def with_positions(self, positions) -> "Configuration":
        return replace(self, positions=positions)

    def with_species(self, index: int, species: IonSpecies) -> "Configuration":
        sp = list(self.species)
        sp[index] = species
        return replace(self, species=tuple(sp))


def make_configuration(positions, species: Sequence[IonSpecies] | None = None,
                       planar: bool = False) -> Configuration:
    return Configuration(np.asarray(positions, dtype=float), tuple(species or ()),
                         PLANAR if planar else FULL)


@dataclass(frozen=True)
class PseudoTrap:
    """Static harmonic trap; ``gamma_y = w_y^2 / w_x^2`` and ``gamma_z = w_z^2 / w_x^2``."""

    gamma_y: float
    gamma_z: float

    def __post_init__(self):
        if not self.gamma_y > 0 or not self.gamma_z > 0:
            raise ValueError(f"trap strengths must be positive: {self}")

    @classmethod
    def from_ratio(cls, gamma_y: float, ratio: float) -> "PseudoTrap":
        """Trap with ``w_z / w_y = ratio``."""
        return cls(gamma_y, gamma_y * ratio**2)

    @property
    def ratio(self) -> float:
        return float(np.sqrt(self.gamma_z / self.gamma_y))

    def stiffness(self) -> np.ndarray:
        return np.array([1.0, self.gamma_y, self.gamma_z])


@dataclass(frozen=True)
class PaulTrap:
    """Linear Paul trap with a rotated DC quadrupole.

    The single-ion potential is
    ``0.5*(a_x x^2 + a_y y^2 + a_z z^2 - 2 q cos(2t) (y^2 - z^2)) + a_yz y z``
    with ``a_z = -a_x - a_y``.
    """

    a_x: float
    a_y: float
    a_yz: float
    q: float

    @property
    def a_z(self) -> float:
        return -self.a_x - self.a_y

    @classmethod
    def from_rotation(cls, a_x: float, a_y: float, q: float, a_rot: float,
                      theta: float) -> "PaulTrap":
        """Fold a DC quadrupole ``0.5*a_rot*(z'^2 - y'^2)`` rotated by ``theta`` (rad).

        Rotated axes are ``y' = c y - s z``, ``z' = s y + c z``.
        """
        c, s = np.cos(theta), np.sin(theta)
        a_y_new = a_y - (c * c - s * s) * a_rot
        return cls(a_x, a_y_new, 2.0 * a_rot * c * s, q)

    def static_matrix(self) -> np.ndarray:
        """DC curvature matrix so that the DC energy is ``0.5 r.A.r``."""
        return np.array([[self.a_x, 0.0, 0.0],
                         [0.0, self.a_y, self.a_yz],
                         [0.0, self.a_yz, self.a_z]])

    def curvature(self, t: float) -> np.ndarray:
        c = 2.0 * self.q * np.cos(2.0 * t)
        return self.static_matrix() + np.diag([0.0, -c, c])


@dataclass(frozen=True)
class TensorTrap:
    """Static harmonic trap with a full 3x3 curvature matrix per species.

    ``matrices`` maps ``(mass_ratio, charge_ratio)`` to the curvature matrix
    (energy ``0.5 r.K.r``) of that species; ``reference`` is used for
    species without an entry.  Used for rotated principal axes and for
    species whose secular frequencies come from their own Floquet analysis.
    """

    reference: tuple
    matrices: tuple = ()

    @classmethod
    def from_arrays(cls, reference: np.ndarray, matrices: dict | None = None) -> "TensorTrap":
        ref = tuple(map(tuple, np.asarray(reference, float)))
        items = tuple((k, tuple(map(tuple, np.asarray(m, float))))
                      for k, m in sorted((matrices or {}).items()))
        return cls(ref, items)

    def stiffness(self) -> np.ndarray:
        """Largest curvature per axis (used only for timestep estimates)."""
        return np.abs(np.diag(np.array(self.reference)))

    def for_config(self, config: "Configuration") -> np.ndarray:
        table = {k: np.array(m) for k, m in self.matrices}
        ref = np.array(self.reference)
        return np.array([table.get((s.mass_ratio, s.charge_ratio), ref) for s in config.species])


def _pair_geometry(pos: np.ndarray):
    diff = pos[:, None, :] - pos[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(r, np.inf)
    if r.min() < MIN_DISTANCE:
        i, j = np.unravel_index(np.argmin(r), r.shape)
        raise SingularGeometryError(f"ions {i} and {j} coincide (distance {r[i, j]:.3g})")
    return diff, r


def coulomb_energy(pos: np.ndarray, charges: np.ndarray) -> float:
    _, r = _pair_geometry(pos)
    qq = np.outer(charges, charges)
    iu = np.triu_indices(len(pos), 1)
    return float(np.sum(qq[iu] / r[iu]))


def coulomb_force(pos: np.ndarray, charges: np.ndarray) -> np.ndarray:
    diff, r = _pair_geometry(pos)
    w = np.outer(charges, charges) / r**3
    return np.einsum("ij,ijk->ik", w, diff)


def coulomb_hessian(pos: np.ndarray, charges: np.ndarray) -> np.ndarray:
    """Full (3N x 3N) second derivative of the Coulomb energy, ion-major."""
    n = len(pos)
    diff, r = _pair_geometry(pos)
    qq = np.outer(charges, charges)
    inv3 = qq / r**3
    inv5 = qq / r**5
    # d2(1/r)/dri dri = 3 d d^T / r^5 - I / r^3
    blocks = 3.0 * inv5[:, :, None, None] * diff[:, :, :, None] * diff[:, :, None, :]
    blocks -= inv3[:, :, None, None] * np.eye(3)
    h = -blocks
    diag = blocks.sum(axis=1)
    h[np.arange(n), np.arange(n)] = diag
    return h.transpose(0, 2, 1, 3).reshape(3 * n, 3 * n)


def _weights(config: Configuration) -> np.ndarray:
    """Per-ion, per-axis pseudopotential weights (N x 3).

    The axial term comes from a DC field (weight kappa); the radial
    confinement is ponderomotive, giving kappa^2 / mu.
    """
    k = config.charges
    m = config.masses
    return np.column_stack([k, k * k / m, k * k / m])


def potential_energy(config: Configuration, trap: PseudoTrap) -> float:
    if isinstance(trap, TensorTrap):
        return Evaluator(config, trap).energy(config.flat())
    pos = config.positions
    trap_e = 0.5 * np.sum(_weights(config) * trap.stiffness() * pos**2)
    return float(trap_e + coulomb_energy(pos, config.charges))


def gradient(config: Configuration, trap: PseudoTrap) -> np.ndarray:
    """N x 3 gradient; masked axes are zeroed."""
    if isinstance(trap, TensorTrap):
        g = np.zeros((config.n, 3))
        g[:, config.mask] = Evaluator(config, trap).gradient(config.flat()).reshape(config.n, -1)
        return g
    pos = config.positions
    g = _weights(config) * trap.stiffness() * pos - coulomb_force(pos, config.charges)
    g[:, ~config.mask] = 0.0
    return g


def _restrict(h_full: np.ndarray, config: Configuration) -> np.ndarray:
    idx = np.flatnonzero(np.tile(config.mask, config.n))
    return h_full[np.ix_(idx, idx)]


def hessian(config: Configuration, trap: PseudoTrap) -> np.ndarray:
    """Hessian over the active coordinates, ion-major ordering."""
    if isinstance(trap, TensorTrap):
        return Evaluator(config, trap).hessian(config.flat())
    h = coulomb_hessian(config.positions, config.charges)
    h[np.diag_indices_from(h)] += (_weights(config) * trap.stiffness()).ravel()
    h = _restrict(h, config)
    return 0.5 * (h + h.T)


def paul_potential_energy(config: Configuration, trap: PaulTrap, t: float) -> float:
    pos = config.positions
    a = trap.curvature(t)
    trap_e = 0.5 * np.einsum("i,ij,jk,ik->", config.charges, pos, a, pos)
    return float(trap_e + coulomb_energy(pos, config.charges))


def paul_force(config: Configuration, trap: PaulTrap, t: float) -> np.ndarray:
    """Force (minus gradient) at time t; masked axes are zeroed."""
    pos = config.positions
    f = -config.charges[:, None] * (pos @ trap.curvature(t)) + coulomb_force(pos, config.charges)
    f[:, ~config.mask] = 0.0
    return f


@dataclass
class Evaluator:
    """Flat-vector front end used by optimizers and integrators.

    Works on the active coordinates of a template configuration so inner
    loops avoid rebuilding dataclasses.
    """

    template: Configuration
    trap: PseudoTrap | TensorTrap
    _w: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if isinstance(self.trap, TensorTrap):
            self._k = self.trap.for_config(self.template)
            self._w = None
        else:
            self._k = None
            self._w = _weights(self.template) * self.trap.stiffness()
        self._charges = self.template.charges
        self._mask = self.template.mask
        self._idx = np.flatnonzero(np.tile(self._mask, self.template.n))

    def positions(self, x: np.ndarray) -> np.ndarray:
        pos = np.zeros((self.template.n, 3))
        pos[:, self._mask] = x.reshape(self.template.n, -1)
        return pos

    def _trap_force(self, pos: np.ndarray) -> np.ndarray:
        if self._k is None:
            return self._w * pos
        return np.einsum("iab,ib->ia", self._k, pos)

    def energy(self, x: np.ndarray) -> float:
        pos = self.positions(x)
        return float(0.5 * np.sum(self._trap_force(pos) * pos) + coulomb_energy(pos, self._charges))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        pos = self.positions(x)
        g = self._trap_force(pos) - coulomb_force(pos, self._charges)
        return g[:, self._mask].ravel()

    def hessian(self, x: np.ndarray) -> np.ndarray:
        pos = self.positions(x)
        h = coulomb_hessian(pos, self._charges)
        if self._k is None:
            h[np.diag_indices_from(h)] += self._w.ravel()
        else:
            n = self.template.n
            blocks = h.reshape(n, 3, n, 3)
            blocks[np.arange(n), :, np.arange(n), :] += self._k
        h = h[np.ix_(self._idx, self._idx)]
        return 0.5 * (h + h.T)

    def parameter_derivative(self, x: np.ndarray, parameter: str) -> np.ndarray:
        """d(gradient)/d(parameter) for a continuation parameter."""
        pos = self.positions(x)
        d = np.zeros_like(pos)
        w = _weights(self.template)
        if parameter == "gamma_y":
            d[:, 1] = w[:, 1] * pos[:, 1]
            # gamma_z follows gamma_y at fixed ratio
            d[:, 2] = w[:, 2] * pos[:, 2] * self.trap.gamma_z / self.trap.gamma_y
        elif parameter == "ratio":
            d[:, 2] = w[:, 2] * pos[:, 2] * 2.0 * self.trap.gamma_y * self.trap.ratio
        else:
            raise ValueError(f"no analytic parameter derivative for {parameter!r}")
        return d[:, self._mask].ravel()
