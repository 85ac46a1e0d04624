"""Single-ion Floquet analysis of the Paul trap.

The linear equations of motion of one ion in the time-dependent quadrupole
are integrated over one drive period (``pi`` in the nondimensional Paul time)
to obtain the monodromy matrix.  Its eigenvalues ``exp(+-i beta pi)`` give the
secular frequencies ``beta`` in units of ``Omega/2``.  The axial direction
decouples and is a static oscillator with ``beta_x = sqrt(a_x)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .model import IonSpecies, PaulTrap, PseudoTrap, REFERENCE

STABILITY_TOL = 1e-9


class InstabilityError(ValueError):
    """Mathieu parameters outside the stability region."""

    def __init__(self, message: str, modulus: float, axis: str):
        super().__init__(message)
        self.modulus = modulus
        self.axis = axis


def _scaled(trap: PaulTrap, species: IonSpecies) -> tuple[np.ndarray, float]:
    s = species.charge_ratio / species.mass_ratio
    a = trap.static_matrix() * s
    return a, trap.q * s


def _radial_rhs(a: np.ndarray, q: float):
    ar = a[1:, 1:]

    def rhs(t, s):
        c = 2.0 * q * np.cos(2.0 * t)
        k = ar + np.diag([-c, c])
        X = s.reshape(4, 4)
        out = np.empty_like(X)
        out[:2] = X[2:]
        out[2:] = -k @ X[:2]
        return out.ravel()

    return rhs


def radial_fundamental(trap: PaulTrap, species: IonSpecies = REFERENCE, samples: int = 0,
                       rtol: float = 1e-12):
    """Radial fundamental matrix over one period.

    Returns the monodromy ``X(pi)`` and, if ``samples`` > 0, the matrices at
    ``samples`` equally spaced times in ``[0, pi)``.
    """
    a, q = _scaled(trap, species)
    t_eval = np.linspace(0.0, np.pi, samples, endpoint=False) if samples else None
    sol = solve_ivp(_radial_rhs(a, q), (0.0, np.pi), np.eye(4).ravel(), method="DOP853",
                    rtol=rtol, atol=rtol * 1e-2, t_eval=None if t_eval is None else
                    np.append(t_eval, np.pi))
    mats = sol.y.T.reshape(-1, 4, 4)
    return mats[-1], (mats[:-1] if samples else None)


def monodromy(trap: PaulTrap, species: IonSpecies = REFERENCE) -> np.ndarray:
    """Full 6x6 monodromy in the ordering ``(x, y, z, vx, vy, vz)``."""
    a, _ = _scaled(trap, species)
    mr, _ = radial_fundamental(trap, species)
    m = np.zeros((6, 6))
    w2 = a[0, 0]
    # axial oscillator: exact propagator over time pi
    if w2 > 0:
        w = np.sqrt(w2)
        c, s = np.cos(w * np.pi), np.sin(w * np.pi)
        ax = np.array([[c, s / w], [-w * s, c]])
    elif w2 < 0:
        w = np.sqrt(-w2)
        c, s = np.cosh(w * np.pi), np.sinh(w * np.pi)
        ax = np.array([[c, s / w], [w * s, c]])
    else:
        ax = np.array([[1.0, np.pi], [0.0, 1.0]])
    m[np.ix_([0, 3], [0, 3])] = ax
    idx = [1, 2, 4, 5]
    m[np.ix_(idx, idx)] = mr
    return m


@dataclass(frozen=True)
class FloquetAnalysis:
    """Secular frequencies (units of Omega/2) and principal axes.

    ``axes`` rows are unit vectors in trap coordinates, ordered
    ``(x, y', z')`` with ``y'`` the weaker radial direction.  Frequencies
    of unstable directions are NaN.
    """

    frequencies: np.ndarray
    axes: np.ndarray
    multipliers: np.ndarray
    max_modulus: float
    stable: bool
    unstable_axis: str | None = None

    def pseudo_trap(self) -> PseudoTrap:
        fx, fy, fz = self.frequencies
        return PseudoTrap((fy / fx) ** 2, (fz / fx) ** 2)

    def rotation_angle(self) -> float:
        """Angle (rad) of ``y'`` from ``y`` towards ``z``."""
        return float(np.arctan2(self.axes[1, 2], self.axes[1, 1]))


def _secular_vector(mats: np.ndarray, vec: np.ndarray, mu: float) -> np.ndarray:
    """Zeroth Fourier component of the periodic Floquet factor (position part)."""
    t = np.linspace(0.0, np.pi, len(mats), endpoint=False)
    u = np.einsum("kij,j->ki", mats, vec)[:, :2]
    c0 = np.mean(np.exp(-1j * mu * t)[:, None] * u, axis=0)
    # remove the arbitrary complex phase
    c0 = c0 * np.exp(-0.5j * np.angle(np.dot(c0, c0)))
    return np.real(c0)


def floquet_analysis(trap: PaulTrap, species: IonSpecies = REFERENCE,
                     samples: int = 128) -> FloquetAnalysis:
    a, _ = _scaled(trap, species)
    mr, mats = radial_fundamental(trap, species, samples=samples)
    rho, vecs = np.linalg.eig(mr)
    mod = np.abs(rho)
    axial_ok = a[0, 0] > 0
    max_mod = float(max(mod.max(), 1.0 if axial_ok else np.exp(np.sqrt(-a[0, 0]) * np.pi)))
    radial_ok = mod.max() <= 1.0 + STABILITY_TOL
    fx = np.sqrt(a[0, 0]) if axial_ok else np.nan
    if not radial_ok:
        return FloquetAnalysis(np.array([fx, np.nan, np.nan]), np.eye(3), rho, max_mod, False,
                               "radial" if axial_ok else "x")
    mu = np.angle(rho) / np.pi
    keep = np.flatnonzero(mu > 0)
    if len(keep) != 2:
        # degenerate multipliers on the real axis: edge of a stability zone
        return FloquetAnalysis(np.array([fx, np.nan, np.nan]), np.eye(3), rho, max_mod, False,
                               "radial")
    keep = keep[np.argsort(mu[keep])]
    betas = mu[keep]
    v = np.array([_secular_vector(mats, vecs[:, k], mu[k]) for k in keep])
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    # symmetric orthogonalization keeps both vectors as close as possible
    w, u = np.linalg.eigh(v @ v.T)
    v = u @ np.diag(w**-0.5) @ u.T @ v
    # orientation: y' has a positive y component, z' completes a right-handed frame
    if v[0, 0] < 0:
        v[0] *= -1
    if v[0, 0] * v[1, 1] - v[0, 1] * v[1, 0] < 0:
        v[1] *= -1
    axes = np.eye(3)
    axes[1:, 1:] = v
    return FloquetAnalysis(np.array([fx, *betas]), axes, rho, max_mod, bool(axial_ok),
                           None if axial_ok else "x")


def pseudopotential_from_paul(trap: PaulTrap, species: IonSpecies = REFERENCE
                              ) -> tuple[np.ndarray, np.ndarray, PseudoTrap]:
    """Secular frequencies, principal axes and the equivalent static trap.

    Raises ``InstabilityError`` (carrying the largest multiplier modulus)
    when the single-ion motion is unstable.
    """
    fa = floquet_analysis(trap, species)
    if not fa.stable:
        raise InstabilityError(f"single-ion motion unstable along {fa.unstable_axis} "
                               f"(|multiplier| = {fa.max_modulus:.6g})",
                               fa.max_modulus, fa.unstable_axis)
    return fa.frequencies, fa.axes, fa.pseudo_trap()
