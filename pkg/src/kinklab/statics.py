"""Critical points of the crystal potential: relaxation, Newton refinement,
classification and seed construction."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize

from .model import (Configuration, Evaluator, IonSpecies, PLANAR, FULL,
                    PseudoTrap, SingularGeometryError)

log = logging.getLogger(__name__)

ZERO_THRESHOLD = 1e-8
GRAD_TOL = 1e-10
SYMMETRY_TOL = 1e-6


class ConvergenceError(RuntimeError):
    pass


class SaddleWarning(UserWarning):
    """Relaxation ended on a critical point that is not a minimum."""


@dataclass(frozen=True)
class SymmetryFlags:
    sym_x: bool
    sym_y: bool
    sym_z: bool
    sym_xy_combined: bool


@dataclass(frozen=True)
class CriticalPoint:
    config: Configuration
    energy: float
    grad_norm: float
    eigenvalues: np.ndarray
    n_negative: int
    local_index: int
    stable: bool
    symmetry: SymmetryFlags
    zero_threshold: float = ZERO_THRESHOLD
    at_bifurcation: bool = False
    iterations: int = 0
    trap: PseudoTrap | None = None

    @property
    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues[0])


@dataclass(frozen=True)
class DampingSchedule:
    """Linearly decaying friction for damped-dynamics relaxation.

    Friction starts at ``friction`` and reaches zero after ``periods`` axial
    periods; integration stops early once the kinetic energy drops below
    ``ke_tol`` with a small gradient.
    """

    friction: float = 0.5
    periods: float = 2000.0
    timestep: float | None = None
    ke_tol: float = 1e-12
    max_steps: int = 400_000


@dataclass(frozen=True)
class SeedSpec:
    """Recipe for an initial configuration.

    ``kind`` is one of chain, zigzag, odd_kink, extended_kink_seed, two_kink,
    displaced_kink, dark_ion.  ``offset`` moves the kink boundary (sites),
    ``width`` is the flipped block length of a two-kink seed, ``index`` and
    ``species`` define a dark ion.
    """

    kind: str
    n: int
    offset: int = 0
    width: int = 2
    index: int | None = None
    species: IonSpecies | None = None
    planar: bool = True
    mirror: bool = False
    z_kick: float = 0.0

    def __post_init__(self):
        kinds = {"chain", "zigzag", "odd_kink", "extended_kink_seed", "two_kink",
                 "displaced_kink", "dark_ion"}
        if self.kind not in kinds:
            raise ValueError(f"unknown seed kind {self.kind!r}")
        if abs(self.offset) >= self.n // 2:
            raise ValueError("kink offset outside the chain")
        if self.kind == "dark_ion" and not (self.index is not None and 0 <= self.index < self.n):
            raise ValueError("dark ion index out of range")


# --- symmetry -------------------------------------------------------------

def _matches(config: Configuration, signs, tol: float) -> bool:
    pos = config.positions
    img = pos * np.asarray(signs, dtype=float)
    labels = [(s.mass_ratio, s.charge_ratio) for s in config.species]
    for lab in set(labels):
        idx = np.array([i for i, l in enumerate(labels) if l == lab])
        a, b = pos[idx], img[idx]
        cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
        r, c = linear_sum_assignment(cost)
        if cost[r, c].max() > tol:
            return False
    return True


def symmetry_flags(config: Configuration, tol: float = SYMMETRY_TOL) -> SymmetryFlags:
    """Invariance of the ion set under x -> -x, y -> -y, z -> -z and (x, y) -> (-x, -y)."""
    return SymmetryFlags(
        _matches(config, (-1, 1, 1), tol),
        _matches(config, (1, -1, 1), tol),
        _matches(config, (1, 1, -1), tol),
        _matches(config, (-1, -1, 1), tol),
    )


# --- classification ---------------------------------------------------------

def classify(config: Configuration, trap: PseudoTrap, zero_threshold: float = ZERO_THRESHOLD,
             iterations: int = 0) -> CriticalPoint:
    ev = Evaluator(config, trap)
    x = config.flat()
    g = ev.gradient(x)
    lam = np.linalg.eigvalsh(ev.hessian(x))
    n_neg = int(np.sum(lam < -zero_threshold))
    at_bif = bool(np.any(np.abs(lam) <= zero_threshold))
    return CriticalPoint(
        config=config,
        energy=ev.energy(x),
        grad_norm=float(np.linalg.norm(g)),
        eigenvalues=lam,
        n_negative=n_neg,
        local_index=0 if at_bif else (-1) ** n_neg,
        stable=(n_neg == 0 and not at_bif),
        symmetry=symmetry_flags(config),
        zero_threshold=zero_threshold,
        at_bifurcation=at_bif,
        iterations=iterations,
        trap=trap,
    )


# --- Newton -----------------------------------------------------------------

def newton_solve(ev: Evaluator, x0: np.ndarray, tol: float = GRAD_TOL, max_iter: int = 50,
                 max_step: float = 0.2, residuals: list | None = None) -> tuple[np.ndarray, int]:
    """Plain Newton iteration on the gradient with a displacement cap."""
    x = np.array(x0, dtype=float)
    for it in range(max_iter + 1):
        g = ev.gradient(x)
        gn = float(np.linalg.norm(g))
        if residuals is not None:
            residuals.append(gn)
        if not np.isfinite(gn):
            raise ConvergenceError("non-finite gradient in Newton iteration")
        if gn < tol:
            return x, it
        if it == max_iter:
            break
        h = ev.hessian(x)
        try:
            dx = np.linalg.solve(h, -g)
        except np.linalg.LinAlgError:
            dx = -np.linalg.lstsq(h, g, rcond=None)[0]
        big = np.abs(dx).max()
        if big > max_step:
            dx *= max_step / big
        x = x + dx
    raise ConvergenceError(f"Newton did not converge (|grad| = {gn:.3e})")


def newton_critical(seed: Configuration, trap: PseudoTrap, tolerance: float = GRAD_TOL,
                    zero_threshold: float = ZERO_THRESHOLD, max_iter: int = 50,
                    max_step: float = 0.2) -> CriticalPoint:
    """Newton refinement to a critical point of any index."""
    ev = Evaluator(seed, trap)
    try:
        x, it = newton_solve(ev, seed.flat(), tolerance, max_iter, max_step)
    except SingularGeometryError as exc:
        raise ConvergenceError(f"Newton collided ions: {exc}") from exc
    return classify(seed.with_flat(x), trap, zero_threshold, iterations=it)


# --- relaxation ---------------------------------------------------------------

def default_timestep(config: Configuration, trap: PseudoTrap) -> float:
    w = np.sqrt(np.max(trap.stiffness()[config.mask]))
    # Coulomb stiffening of the fastest modes is bounded by ~sqrt(3) here
    return 2 * np.pi / (50 * np.sqrt(3.0) * max(w, 1.0))


def damped_descent(ev: Evaluator, x0: np.ndarray, schedule: DampingSchedule,
                   masses: np.ndarray | None = None) -> np.ndarray:
    """Velocity-Verlet with linearly decaying friction, from rest."""
    dt = schedule.timestep or default_timestep(ev.template, ev.trap)
    t_off = schedule.periods * 2 * np.pi
    m = np.ones_like(x0) if masses is None else masses
    x = np.array(x0, dtype=float)
    v = np.zeros_like(x)
    a = -ev.gradient(x) / m
    for step in range(schedule.max_steps):
        gam = schedule.friction * max(0.0, 1.0 - step * dt / t_off)
        # friction as an exact exponential decay split around the kick
        damp = np.exp(-0.5 * gam * dt)
        v = damp * v + 0.5 * dt * a
        x = x + dt * v
        a = -ev.gradient(x) / m
        v = damp * (v + 0.5 * dt * a)
        if step % 20 == 0:
            ke = 0.5 * np.sum(m * v * v)
            if not np.isfinite(ke):
                raise ConvergenceError("non-finite state during relaxation")
            if ke < schedule.ke_tol and np.linalg.norm(a * m) < 1e-5:
                break
    return x


def _dof_masses(config: Configuration) -> np.ndarray:
    return np.repeat(config.masses, sum(config.dof_mask))


def relax(seed: Configuration, trap: PseudoTrap, schedule: DampingSchedule | None = None,
          method: str = "damped", tolerance: float = GRAD_TOL,
          zero_threshold: float = ZERO_THRESHOLD) -> CriticalPoint:
    """Relax a seed to a nearby local minimum.

    ``method="damped"`` integrates damped equations of motion with the
    friction schedule; ``method="lbfgs"`` uses quasi-Newton descent instead
    (much faster for large inner loops).  Both finish with Newton refinement.
    """
    ev = Evaluator(seed, trap)
    x0 = seed.flat()
    try:
        if method == "damped":
            x = damped_descent(ev, x0, schedule or DampingSchedule(), _dof_masses(seed))
        elif method == "lbfgs":
            res = minimize(ev.energy, x0, jac=ev.gradient, method="L-BFGS-B",
                           options={"maxiter": 20000, "gtol": 1e-9, "ftol": 1e-16})
            x = res.x
        else:
            raise ValueError(f"unknown relaxation method {method!r}")
        x, it = newton_solve(ev, x, tolerance, max_step=0.05)
    except SingularGeometryError as exc:
        raise ConvergenceError(f"ions collided during relaxation: {exc}") from exc
    cp = classify(seed.with_flat(x), trap, zero_threshold, iterations=it)
    if not cp.stable:
        warnings.warn(f"relaxation ended on a critical point with {cp.n_negative} negative "
                      "eigenvalue(s)", SaddleWarning, stacklevel=2)
    return cp


# --- seeds --------------------------------------------------------------------

def chain_positions(n: int) -> np.ndarray:
    """Equilibrium axial positions of an n-ion chain (reference species)."""
    x0 = np.linspace(-1, 1, n) * (n ** 0.57) if n > 1 else np.zeros(1)

    def grad(x):
        d = x[:, None] - x[None, :]
        np.fill_diagonal(d, np.inf)
        return x - np.sum(np.sign(d) / d**2, axis=1)

    def hess(x):
        d = np.abs(x[:, None] - x[None, :])
        np.fill_diagonal(d, np.inf)
        h = -2.0 / d**3
        np.fill_diagonal(h, 0.0)
        h[np.diag_indices(n)] = 1.0 - h.sum(axis=1)
        return h

    x = x0
    for _ in range(100):
        g = grad(x)
        if np.linalg.norm(g) < 1e-13:
            break
        dx = np.linalg.solve(hess(x), -g)
        # keep the ordering intact
        gaps = np.diff(x)
        dgap = np.diff(dx)
        shrink = np.where(dgap < 0, -0.5 * gaps / np.minimum(dgap, -1e-300), np.inf).min()
        x = x + min(1.0, shrink) * dx
    return x


def _base_config(spec: SeedSpec) -> Configuration:
    pos = np.zeros((spec.n, 3))
    pos[:, 0] = chain_positions(spec.n)
    return Configuration(pos, (), PLANAR if spec.planar else FULL)


def _zigzag(spec: SeedSpec, trap: PseudoTrap, amp: float = 0.3) -> Configuration:
    cfg = _base_config(spec)
    pos = np.array(cfg.positions)
    pos[:, 1] = amp * (-1.0) ** np.arange(spec.n)
    if not spec.planar:
        pos[:, 2] = 1e-3 * amp * (-1.0) ** np.arange(spec.n)
    cp = relax(cfg.with_positions(pos), trap, method="lbfgs")
    return cp.config


def flip_boundary(n: int, offset: int = 0) -> int:
    """Index of the first ion whose radial coordinate is flipped.

    For odd n the centre ion is left on-axis at zero offset.
    """
    return n // 2 + offset + (n % 2)


def make_seed(spec: SeedSpec, trap: PseudoTrap) -> Configuration:
    """Deterministic seed configuration for ``spec`` at ``trap``.

    Kinks follow the flipped-half recipe: a relaxed zigzag whose radial
    coordinates beyond a boundary ion change sign.
    """
    if spec.kind == "chain":
        cfg = _base_config(spec)
    elif spec.kind == "zigzag":
        cfg = _zigzag(spec, trap)
    elif spec.kind == "dark_ion":
        base = _zigzag(spec, trap)
        cfg = base.with_species(spec.index, spec.species or IonSpecies(40 / 24, 1.0, False))
    else:
        base = _zigzag(spec, trap)
        pos = np.array(base.positions)
        n = spec.n
        if spec.kind == "two_kink":
            start = n // 2 - spec.width // 2 + spec.offset
            pos[start:start + spec.width, 1:] *= -1
        else:
            b = flip_boundary(n, spec.offset)
            pos[b:, 1:] *= -1
            if n % 2 and spec.kind in ("odd_kink", "displaced_kink"):
                pos[b - 1, 1:] = 0.0
            if spec.kind == "extended_kink_seed":
                # widen the defect: pull the core ions onto the axis region
                core = slice(max(b - 2, 0), min(b + 2, n))
                pos[core, 1] *= 0.5
        cfg = base.with_positions(pos)
    pos = np.array(cfg.positions)
    if spec.z_kick and not spec.planar:
        c = flip_boundary(spec.n, spec.offset)
        for k, i in enumerate(range(max(c - 2, 0), min(c + 2, spec.n))):
            pos[i, 2] += spec.z_kick * (-1) ** k
    if spec.mirror:
        pos[:, 1] *= -1
    return cfg.with_positions(pos)


def out_of_plane(config: Configuration) -> float:
    """Largest |z| in units of the central axial spacing."""
    x = np.sort(config.positions[:, 0])
    spacing = np.diff(x)[max(config.n // 2 - 1, 0)]
    return float(np.abs(config.positions[:, 2]).max() / spacing)


def is_quasi_3d(config: Configuration, threshold: float = 1e-3) -> bool:
    return out_of_plane(config) > threshold
