"""Time integration of the ion equations of motion.

Pseudopotential runs integrate ``m r'' = -grad V`` with velocity Verlet
(energy-conserving without damping).  Paul-trap runs use the same scheme
with the explicitly time-dependent quadrupole force evaluated at the
sub-step times.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .model import (Configuration, Evaluator, PaulTrap, PseudoTrap, coulomb_force)
from .modes import ModeSpectrum, mode_coordinates, normal_modes
from .statics import CriticalPoint, SeedSpec, flip_boundary, make_seed, relax

log = logging.getLogger(__name__)

PAUL_STEPS_PER_PERIOD = 400


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class State:
    """Positions (in ``config``), velocities (N x 3) and time."""

    config: Configuration
    velocities: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.array(self.velocities, dtype=float).reshape(self.config.n, 3)
        v[:, ~self.config.mask] = 0.0
        object.__setattr__(self, "velocities", v)

    @property
    def positions(self) -> np.ndarray:
        return self.config.positions

    @classmethod
    def at_rest(cls, config: Configuration) -> "State":
        return cls(config, np.zeros((config.n, 3)))


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    energies: np.ndarray | None
    timestep: float
    scheme: str
    template: Configuration
    trap: object = None
    meta: dict = field(default_factory=dict)

    @property
    def energy_drift(self) -> float:
        """Largest relative deviation of the total energy from its initial value."""
        if self.energies is None or len(self.energies) == 0:
            return float("nan")
        e = self.energies
        return float(np.max(np.abs(e - e[0])) / abs(e[0]))

    def state(self, k: int) -> State:
        return State(self.template.with_positions(self.positions[k]), self.velocities[k],
                     float(self.times[k]))


def default_timestep(config: Configuration, trap) -> float:
    """``2 pi / (50 w_max)`` for static traps, ``pi / 400`` for the Paul trap."""
    if isinstance(trap, PaulTrap):
        return np.pi / PAUL_STEPS_PER_PERIOD
    ev = Evaluator(config, trap)
    m = np.repeat(config.masses, sum(config.dof_mask))
    s = 1.0 / np.sqrt(m)
    lam = np.linalg.eigvalsh(ev.hessian(config.flat()) * s[:, None] * s[None, :])
    return 2 * np.pi / (50 * np.sqrt(max(lam.max(), 1.0)))


class _PaulForce:
    def __init__(self, template: Configuration, trap: PaulTrap):
        self.k = template.charges
        self.m = template.masses
        self.mask = template.mask
        self.trap = trap
        self.n = template.n

    def accel(self, x: np.ndarray, t: float) -> np.ndarray:
        pos = np.zeros((self.n, 3))
        pos[:, self.mask] = x.reshape(self.n, -1)
        f = -self.k[:, None] * (pos @ self.trap.curvature(t)) + coulomb_force(pos, self.k)
        return (f / self.m[:, None])[:, self.mask].ravel()


def integrate(initial: State, trap: PseudoTrap | PaulTrap, duration: float,
              timestep: float | None = None, damping: float = 0.0, stride: int = 1,
              record_energy: bool = True) -> Trajectory:
    """Velocity-Verlet integration from ``initial`` for ``duration``.

    ``damping`` adds a friction force ``-damping * m v``.  Samples are kept
    every ``stride`` steps (the first and last state are always kept).
    """
    config = initial.config
    dt = timestep or default_timestep(config, trap)
    n_steps = int(round(duration / dt))
    mask = config.mask
    m = np.repeat(config.masses, sum(config.dof_mask))
    paul = isinstance(trap, PaulTrap)
    if paul:
        force = _PaulForce(config, trap)
        accel = force.accel
        energy = None
    else:
        ev = Evaluator(config, trap)
        accel = lambda x, t: -ev.gradient(x) / m  # noqa: E731
        energy = lambda x, v: ev.energy(x) + 0.5 * np.sum(m * v * v)  # noqa: E731
    x = config.flat()
    v = initial.velocities[:, mask].ravel().copy()
    t = float(initial.time)
    a = accel(x, t)
    damp = np.exp(-0.5 * damping * dt)
    times, xs, vs, es = [t], [x.copy()], [v.copy()], []
    if energy is not None and record_energy:
        es.append(energy(x, v))
    for step in range(1, n_steps + 1):
        v = damp * v + 0.5 * dt * a
        x = x + dt * v
        t = initial.time + step * dt
        a = accel(x, t)
        v = damp * (v + 0.5 * dt * a)
        if step % stride == 0 or step == n_steps:
            if not np.all(np.isfinite(x)):
                raise IntegrationError(f"non-finite state at t = {t:.6g}")
            times.append(t)
            xs.append(x.copy())
            vs.append(v.copy())
            if energy is not None and record_energy:
                es.append(energy(x, v))
    nd = sum(config.dof_mask)
    pos = np.zeros((len(xs), config.n, 3))
    vel = np.zeros_like(pos)
    pos[:, :, mask] = np.array(xs).reshape(len(xs), config.n, nd)
    vel[:, :, mask] = np.array(vs).reshape(len(vs), config.n, nd)
    return Trajectory(np.array(times), pos, vel, np.array(es) if es else None, dt,
                      "velocity-verlet" + ("/paul" if paul else ""), config, trap,
                      {"damping": damping, "stride": stride, "steps": n_steps})


# --- initial conditions -----------------------------------------------------------

def _spectrum(cp: CriticalPoint, spectrum: ModeSpectrum | None) -> ModeSpectrum:
    return spectrum if spectrum is not None else normal_modes(cp)


def _state_from_modes(cp: CriticalPoint, sp: ModeSpectrum, theta, theta_dot) -> State:
    s = 1.0 / np.sqrt(sp.dof_masses)
    x = cp.config.flat() + s * (sp.mode_matrix @ theta)
    v = s * (sp.mode_matrix @ theta_dot)
    vel = np.zeros((cp.config.n, 3))
    vel[:, cp.config.mask] = v.reshape(cp.config.n, -1)
    return State(cp.config.with_flat(x), vel)


def excite_mode(cp: CriticalPoint, spectrum: ModeSpectrum | None, j: int,
                energy: float) -> State:
    """Displace along mode ``j`` with harmonic energy ``energy``, at rest."""
    sp = _spectrum(cp, spectrum)
    if not 0 <= j < len(sp.eigenvalues):
        raise ValueError(f"no mode {j}")
    if sp.eigenvalues[j] <= 0:
        raise ValueError(f"mode {j} is not stable (lambda = {sp.eigenvalues[j]:.3g})")
    theta = np.zeros(len(sp.eigenvalues))
    theta[j] = np.sqrt(2.0 * energy) / sp.frequencies[j]
    return _state_from_modes(cp, sp, theta, np.zeros_like(theta))


def thermal_state(cp: CriticalPoint, spectrum: ModeSpectrum | None, kT: float,
                  seed: int | None = None) -> State:
    """Random-phase state with Boltzmann-distributed harmonic mode energies.

    ``kT`` is in nondimensional energy units (see ``UnitSystem.kT``).
    """
    sp = _spectrum(cp, spectrum)
    if np.any(sp.eigenvalues <= 0):
        raise ValueError("thermal states need a stable critical point")
    rng = np.random.default_rng(seed)
    n = len(sp.eigenvalues)
    e = rng.exponential(kT, n) if kT > 0 else np.zeros(n)
    phase = rng.uniform(0.0, 2 * np.pi, n)
    amp = np.sqrt(2.0 * e) / sp.frequencies
    return _state_from_modes(cp, sp, amp * np.cos(phase), -amp * sp.frequencies * np.sin(phase))


def mode_energies(state: State, spectrum: ModeSpectrum) -> np.ndarray:
    """Harmonic energy of each mode, ``(theta_dot^2 + lambda theta^2) / 2``."""
    th, thd = mode_coordinates(state.positions[None], spectrum,
                               velocities=state.velocities[None])
    return 0.5 * (thd[0] ** 2 + spectrum.eigenvalues * th[0] ** 2)


# --- kink tracking and release ----------------------------------------------------

def kink_position(positions: np.ndarray, axis: int = 1) -> float:
    """Fractional ion index of the kink, measured from the crystal centre.

    The staggered radial order parameter ``(-1)^i y_i`` (ions sorted along x)
    changes sign across the kink; the domain wall is placed where the split
    into two oppositely ordered domains is most pronounced and refined by
    linear interpolation of the order parameter.
    """
    pos = np.asarray(positions)
    order = np.argsort(pos[:, 0])
    s = (-1.0) ** np.arange(len(pos)) * pos[order, axis]
    n = len(s)
    c = np.concatenate([[0.0], np.cumsum(s)])
    # contrast between the sums left and right of bond k
    contrast = np.abs(c[1:n] - (c[n] - c[1:n]))
    k = int(np.argmax(contrast))  # wall lies between ions k and k+1
    a, b = s[k], s[k + 1]
    frac = a / (a - b) if a * b < 0 else 0.5
    return float(k + frac - (n - 1) / 2.0)


def _pinned_relax(seed: Configuration, trap: PseudoTrap, frozen: np.ndarray) -> Configuration:
    ev = Evaluator(seed, trap)
    nd = sum(seed.dof_mask)
    free = np.repeat(~frozen, nd)
    x0 = seed.flat()

    def fun(y):
        x = x0.copy()
        x[free] = y
        return ev.energy(x), ev.gradient(x)[free]

    res = minimize(fun, x0[free], jac=True, method="L-BFGS-B",
                   options={"maxiter": 20000, "gtol": 1e-10, "ftol": 1e-16})
    x = x0.copy()
    x[free] = res.x
    return seed.with_flat(x)


def release_displaced_kink(trap: PseudoTrap, n: int, offset: int, duration: float,
                           timestep: float | None = None, stride: int = 10,
                           planar: bool = False) -> tuple[Trajectory, np.ndarray]:
    """Release a kink from rest ``offset`` sites away from the centre.

    The start configuration is the flipped-zigzag seed with the two core
    ions pinned while all others relax; when a local minimum with the kink
    at ``offset`` exists it is used instead (and the run stays static).
    Returns the trajectory and the kink position (sites) per sample.
    """
    spec = SeedSpec("displaced_kink", n, offset=offset, planar=planar,
                    z_kick=0.0 if planar else 0.05)
    seed = make_seed(spec, trap)
    cp = relax(seed, trap, method="lbfgs")
    target = kink_position(seed.positions)
    if cp.stable and abs(kink_position(cp.config.positions) - target) < 0.5:
        start = cp.config
        log.info("a stable kink exists at offset %d; the release is static", offset)
    else:
        b = flip_boundary(n, offset)
        frozen = np.zeros(n, bool)
        frozen[max(b - 1, 0):b + 1] = True
        start = _pinned_relax(seed, trap, frozen)
    traj = integrate(State.at_rest(start), trap, duration, timestep, stride=stride)
    kp = np.array([kink_position(p) for p in traj.positions])
    traj.meta["kink_position"] = kp
    return traj, kp


# --- anharmonicity ---------------------------------------------------------------

@dataclass(frozen=True)
class AnharmonicityReport:
    amplitude: float
    frequency: float
    ellipse_deviation: float
    share: float


def dominant_frequency(signal: np.ndarray, dt: float) -> float:
    """Spectral peak of a uniformly sampled signal (Hann window, parabolic refinement)."""
    y = (signal - signal.mean()) * np.hanning(len(signal))
    n = 8 * len(y)
    p = np.abs(np.fft.rfft(y, n))
    k = int(np.argmax(p[1:])) + 1
    if 1 <= k < len(p) - 1:
        a, b, c = np.log(p[k - 1:k + 2] + 1e-300)
        k = k + 0.5 * (a - c) / (a - 2 * b + c)
    return float(2 * np.pi * k / (n * dt))


def ellipse_deviation(theta: np.ndarray, theta_dot: np.ndarray, omega: float) -> float:
    """Normalized RMS distance of ``(theta, theta_dot / omega)`` from its best-fit circle."""
    u = theta - theta.mean()
    w = theta_dot / omega
    a = np.column_stack([u, w, np.ones_like(u)])
    sol, *_ = np.linalg.lstsq(a, u**2 + w**2, rcond=None)
    cu, cw = sol[0] / 2, sol[1] / 2
    r = np.sqrt(sol[2] + cu**2 + cw**2)
    d = np.hypot(u - cu, w - cw) - r
    return float(np.sqrt(np.mean(d**2)) / r)


def anharmonicity_report(trajectory: Trajectory, spectrum: ModeSpectrum, j: int,
                         reference: Configuration | None = None) -> AnharmonicityReport:
    th, thd = mode_coordinates(trajectory.positions, spectrum, reference,
                               velocities=trajectory.velocities)
    # Dominance is judged on the mass-weighted displacement variance: at large
    # amplitude the anharmonic coupling drives stiff modes with little motion
    # but a sizeable share of (harmonic-estimate) energy.
    var = th.var(axis=0)
    share = float(var[j] / var.sum())
    if share < 0.5:
        raise ValueError(f"mode {j} is not dominant (displacement share {share:.2f})")
    dt = float(np.mean(np.diff(trajectory.times)))
    w = dominant_frequency(th[:, j], dt)
    amp = float(np.max(np.abs(th[:, j] - th[:, j].mean())))
    return AnharmonicityReport(amp, w, ellipse_deviation(th[:, j], thd[:, j], w), share)


# --- Paul-trap structures ---------------------------------------------------------

def paul_time_average(config: Configuration, trap: PaulTrap, periods: int = 400,
                      damping: float = 0.01, average_periods: int = 20,
                      timestep: float | None = None) -> Configuration:
    """Time-averaged crystal in the full time-dependent potential.

    The damped motion settles onto the periodic micromotion orbit; positions
    are then averaged over ``average_periods`` drive periods.
    """
    dt = timestep or np.pi / PAUL_STEPS_PER_PERIOD
    traj = integrate(State.at_rest(config), trap, periods * np.pi, dt, damping=damping,
                     stride=PAUL_STEPS_PER_PERIOD)
    final = traj.state(len(traj.times) - 1)
    per = PAUL_STEPS_PER_PERIOD * average_periods
    tail = integrate(final, trap, average_periods * np.pi, dt, damping=damping, stride=1)
    return config.with_positions(tail.positions[:-1].mean(axis=0) if len(tail.positions) > per
                                 else tail.positions.mean(axis=0))
