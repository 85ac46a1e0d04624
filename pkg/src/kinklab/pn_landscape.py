"""Peierls-Nabarro landscape of kinks: site minima, barriers and interactions.

A kink "site" is the boundary index used to seed it (see ``flip_boundary``);
the relaxed kink is accepted at that site only if its measured position
lies within half a lattice site of that offset.  Barriers between adjacent
sites are index-1 saddles, found by Newton refinement of the interpolation
midpoint or, failing that, by a string path refined with partitioned
rational-function steps.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import interp1d
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .model import Configuration, Evaluator, IonSpecies, PseudoTrap, SingularGeometryError
from .statics import (ConvergenceError, CriticalPoint, SaddleWarning, SeedSpec, classify,
                      make_seed, newton_critical, relax)
from .units import UnitSystem

log = logging.getLogger(__name__)

KINK_TYPES = {
    # kind, planar, z kick
    "odd": ("odd_kink", True, 0.0),
    "extended": ("extended_kink_seed", True, 0.0),
    "blurred": ("odd_kink", False, 0.05),
}


class LandscapeError(RuntimeError):
    """Ground state or requested kink state could not be found."""


@dataclass(frozen=True)
class Site:
    offset: int
    energy: float            # relative to the zigzag ground state
    exists: bool
    stable: bool
    position: float = np.nan  # measured kink position (ion index from the centre)
    point: CriticalPoint | None = None


@dataclass(frozen=True)
class Barrier:
    sites: tuple[int, int]
    energy: float            # saddle energy relative to the ground state
    n_negative: int
    method: str
    point: CriticalPoint | None = None


@dataclass
class PNLandscape:
    trap: PseudoTrap
    n: int
    kink_type: str
    ground_energy: float
    sites: list[Site] = field(default_factory=list)
    barriers: list[Barrier] = field(default_factory=list)
    units: UnitSystem | None = None

    def site(self, offset: int) -> Site | None:
        return next((s for s in self.sites if s.offset == offset), None)

    @property
    def existing(self) -> list[Site]:
        return [s for s in self.sites if s.exists]

    def in_kT(self, energy: float) -> float:
        """Energy in units of k_B T_D; needs a unit system with a Doppler temperature."""
        if self.units is None:
            raise ValueError("no unit system attached to the landscape")
        return self.units.in_kT(energy)

    def rows(self) -> list[dict]:
        """One row per site: offset, minimum and the two neighbouring saddles."""
        saddle = {b.sites: b.energy for b in self.barriers}
        out = []
        for s in sorted(self.sites, key=lambda s: s.offset):
            out.append({"offset": s.offset,
                        "E_min": s.energy if s.exists else np.nan,
                        "E_saddle_left": saddle.get((s.offset - 1, s.offset), np.nan),
                        "E_saddle_right": saddle.get((s.offset, s.offset + 1), np.nan),
                        "stable": bool(s.stable)})
        return out


# --- states -------------------------------------------------------------------

def _is_planar(kink_type: str) -> bool:
    return KINK_TYPES[kink_type][1]


def ground_state(trap: PseudoTrap, n: int, planar: bool = True,
                 defect: tuple[int, IonSpecies] | None = None) -> CriticalPoint:
    """Relaxed zigzag (or linear chain when no zigzag exists)."""
    spec = SeedSpec("zigzag", n, planar=planar)
    try:
        seed = make_seed(spec, trap)
        if defect is not None:
            seed = seed.with_species(*defect)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SaddleWarning)
            cp = relax(seed, trap, method="lbfgs")
    except ConvergenceError as exc:
        raise LandscapeError(f"ground-state search failed: {exc}") from exc
    if not cp.stable:
        raise LandscapeError("ground-state search ended on a saddle")
    return cp


def kink_state(trap: PseudoTrap, n: int, kink_type: str = "odd", offset: int = 0,
               mirror: bool = False, defect: tuple[int, IonSpecies] | None = None
               ) -> tuple[CriticalPoint, float]:
    """Relax the kink seeded at ``offset``; returns the point and the measured position.

    A kink at site ``offset`` sits at position ``offset`` (ion index from
    the chain centre) for both odd and even chains.
    """
    from .dynamics import kink_position

    kind, planar, kick = KINK_TYPES[kink_type]
    seed = make_seed(SeedSpec(kind, n, offset=offset, planar=planar, mirror=mirror,
                              z_kick=kick), trap)
    if defect is not None:
        seed = seed.with_species(*defect)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SaddleWarning)
        cp = relax(seed, trap, method="lbfgs")
    return cp, kink_position(cp.config.positions)


def kink_rest_energy(trap: PseudoTrap, n: int, kink_type: str = "odd", mirror: bool = False,
                     ground: CriticalPoint | None = None) -> float:
    """Energy of the centred kink above the zigzag ground state."""
    ground = ground or ground_state(trap, n, _is_planar(kink_type))
    cp, measured = kink_state(trap, n, kink_type, 0, mirror)
    if not cp.stable or abs(measured) > 0.5:
        raise LandscapeError(f"{kink_type} kink is not stable at the centre for this trap")
    return cp.energy - ground.energy


# --- saddle search ------------------------------------------------------------------

def _reparametrize(path: np.ndarray) -> np.ndarray:
    d = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(path, axis=0), axis=1))]
    return interp1d(d / d[-1], path, axis=0)(np.linspace(0.0, 1.0, len(path)))


def string_path(ev: Evaluator, a: np.ndarray, b: np.ndarray, images: int = 24,
                iterations: int = 3000, step: float = 2e-3, tol: float = 1e-7) -> np.ndarray:
    """Simplified string method between two minima (endpoints held fixed)."""
    path = np.linspace(0.0, 1.0, images)[:, None] * (b - a) + a
    for it in range(iterations):
        g = np.array([ev.gradient(x) for x in path[1:-1]])
        new = path.copy()
        new[1:-1] -= step * g
        new = _reparametrize(new)
        if np.abs(new - path).max() < tol:
            return new
        path = new
    return path


def prfo_saddle(ev: Evaluator, x0: np.ndarray, tol: float = 1e-10, max_iter: int = 500,
                trust: float = 0.02) -> np.ndarray:
    """Partitioned rational-function optimization towards an index-1 saddle.

    Maximizes along the lowest Hessian eigenvector and minimizes in the
    complement; steps are capped at ``trust`` per coordinate.  Started inside
    the quadratic basin of another critical point the iteration can converge
    there instead, so callers must check the index of the result.
    """
    x = np.array(x0, dtype=float)
    for _ in range(max_iter):
        g = ev.gradient(x)
        if np.linalg.norm(g) < tol:
            return x
        lam, vec = np.linalg.eigh(ev.hessian(x))
        gt = vec.T @ g
        up = 0.5 * (lam[0] + np.sqrt(lam[0] ** 2 + 4 * gt[0] ** 2))
        d0 = -gt[0] / (lam[0] - up) if lam[0] != up else 0.0
        aug = np.zeros((len(lam), len(lam)))
        aug[:-1, :-1] = np.diag(lam[1:])
        aug[:-1, -1] = aug[-1, :-1] = gt[1:]
        _, u = np.linalg.eigh(aug)
        u = u[:, 0]
        dm = u[:-1] / u[-1]
        d = vec @ np.r_[d0, dm]
        big = np.abs(d).max()
        if big > trust:
            d *= trust / big
        x = x + d
    raise ConvergenceError("saddle search did not converge")


def descend(cp: CriticalPoint, trap: PseudoTrap, displacement: float = 0.02
            ) -> tuple[CriticalPoint, CriticalPoint]:
    """Minima reached by relaxing from both sides of an index-1 saddle."""
    _, vec = np.linalg.eigh(Evaluator(cp.config, trap).hessian(cp.config.flat()))
    v = vec[:, 0] / np.abs(vec[:, 0]).max()
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SaddleWarning)
        for s in (1.0, -1.0):
            out.append(relax(cp.config.with_flat(cp.config.flat() + s * displacement * v), trap,
                             method="lbfgs"))
    return out[0], out[1]


def _same_state(a: CriticalPoint, b: CriticalPoint, tol: float = 1e-6) -> bool:
    if abs(a.energy - b.energy) > tol * max(1.0, abs(a.energy)):
        return False
    pa, pb = a.config.positions, b.config.positions
    # the same state up to the inversions of the trap
    for s in ((1, 1, 1), (1, -1, 1), (1, 1, -1), (1, -1, -1), (-1, 1, 1), (-1, -1, 1),
              (-1, 1, -1), (-1, -1, -1)):
        q = pb * np.array(s, dtype=float)
        q = q[np.argsort(q[:, 0])]
        if np.abs(pa[np.argsort(pa[:, 0])] - q).max() < 1e-4:
            return True
    return False


def _shared_symmetries(a: Configuration, b: Configuration, tol: float = 1e-6) -> list:
    """Inversions (with the induced ion permutation) leaving both ``a`` and ``b`` invariant."""
    out = []
    for s in ((-1, -1, 1), (-1, 1, -1), (1, -1, -1), (-1, -1, -1), (-1, 1, 1), (1, -1, 1),
              (1, 1, -1)):
        sign = np.array(s, dtype=float)
        perms = []
        for c in (a, b):
            q = c.positions * sign
            perm = linear_sum_assignment(cdist(c.positions, q))[1]
            perms.append(perm if np.abs(q[perm] - c.positions).max() < tol else None)
        if perms[0] is not None and perms[1] is not None and np.array_equal(*perms):
            out.append((sign, perms[0]))
    return out


class _SymmetricSubspace:
    """Energy derivatives restricted to configurations invariant under one inversion."""

    def __init__(self, ev: Evaluator, sign: np.ndarray, perm: np.ndarray):
        n = ev.template.n
        idx = (perm[:, None] * 3 + np.arange(3)).ravel()
        op = np.zeros((3 * n, 3 * n))
        op[np.arange(3 * n), idx] = np.tile(sign, n)
        w, u = np.linalg.eigh(0.5 * (np.eye(3 * n) + 0.5 * (op + op.T)))
        self.basis = u[:, w > 0.5]
        self.ev = ev

    def project(self, x: np.ndarray) -> np.ndarray:
        return self.basis.T @ x

    def lift(self, y: np.ndarray) -> np.ndarray:
        return self.basis @ y

    def gradient(self, y: np.ndarray) -> np.ndarray:
        return self.basis.T @ self.ev.gradient(self.lift(y))

    def hessian(self, y: np.ndarray) -> np.ndarray:
        return self.basis.T @ self.ev.hessian(self.lift(y)) @ self.basis


def connecting_saddle(a: CriticalPoint, b: CriticalPoint, trap: PseudoTrap,
                      images: int = 24, iterations: int = 3000,
                      path: np.ndarray | None = None,
                      exhaustive: bool = False) -> tuple[CriticalPoint, str]:
    """Index-1 saddle between minima ``a`` and ``b``.

    Tries Newton refinement of the path midpoint first, then a relaxed
    string: rational-function saddle searches start from the images around
    its maximum (from every image when ``exhaustive``), both in the full
    space and inside the subspace invariant under each inversion symmetry
    shared by the two end points.  A candidate is accepted only if descent from it reaches
    ``a`` on one side and ``b`` on the other; the lowest accepted saddle is
    returned.  A precomputed string ``path`` from ``a`` to ``b`` may be passed.
    """
    ev = Evaluator(a.config, trap)
    xa, xb = a.config.flat(), b.config.flat()
    if not exhaustive:
        try:
            cp = newton_critical(a.config.with_flat(0.5 * (xa + xb)), trap, max_step=0.02,
                                 max_iter=200)
            if cp.n_negative == 1 and _connects(cp, a, b, trap):
                return cp, "midpoint"
        except ConvergenceError:
            pass
    if path is None:
        path = string_path(ev, xa, xb, images, iterations)
    e = np.array([ev.energy(x) for x in path])
    k = int(np.argmax(e))
    inner = range(1, len(path) - 1) if exhaustive else \
        sorted({max(1, k - 1), k, min(len(path) - 2, k + 1)})
    cands = []
    for j in inner:
        try:
            cands.append((classify(a.config.with_flat(prfo_saddle(ev, path[j])), trap), "string"))
        except (ConvergenceError, np.linalg.LinAlgError, SingularGeometryError):
            pass
    if a.config.mask.all():
        for sign, perm in _shared_symmetries(a.config, b.config):
            sub = _SymmetricSubspace(ev, sign, perm)
            for j in inner:
                try:
                    y = prfo_saddle(sub, sub.project(path[j]))
                    cands.append((classify(a.config.with_flat(sub.lift(y)), trap),
                                  "symmetric string"))
                except (ConvergenceError, np.linalg.LinAlgError, SingularGeometryError):
                    pass
    found, seen = [], set()
    for cp, how in sorted(cands, key=lambda c: c[0].energy):
        key = round(cp.energy, 8)
        if cp.n_negative != 1 or key in seen:
            continue
        seen.add(key)
        if _connects(cp, a, b, trap):
            found.append((cp, how))
            break
    if not found:
        raise LandscapeError("no connecting index-1 saddle found")
    return found[0]


def _connects(saddle: CriticalPoint, a: CriticalPoint, b: CriticalPoint,
              trap: PseudoTrap) -> bool:
    try:
        lo, hi = descend(saddle, trap)
    except ConvergenceError:
        return False
    return ((_same_state(lo, a) and _same_state(hi, b))
            or (_same_state(lo, b) and _same_state(hi, a)))


# --- landscape ----------------------------------------------------------------------

def pn_extract(trap: PseudoTrap, n: int, kink_type: str = "odd", max_offset: int = 3,
               units: UnitSystem | None = None,
               defect: tuple[int, IonSpecies] | None = None) -> PNLandscape:
    """Kink minima at offsets ``-max_offset..max_offset`` and the saddles between them."""
    if kink_type not in KINK_TYPES:
        raise ValueError(f"unknown kink type {kink_type!r}")
    ground = ground_state(trap, n, _is_planar(kink_type), defect)
    land = PNLandscape(trap, n, kink_type, ground.energy, units=units)
    for k in range(-max_offset, max_offset + 1):
        try:
            cp, measured = kink_state(trap, n, kink_type, k, defect=defect)
        except (ConvergenceError, ValueError) as exc:
            log.info("offset %d: %s", k, exc)
            land.sites.append(Site(k, np.nan, False, False))
            continue
        ok = cp.stable and abs(measured - k) <= 0.5
        land.sites.append(Site(k, cp.energy - ground.energy if ok else np.nan, ok, ok,
                               measured, cp if ok else None))
    for s, t in zip(land.sites[:-1], land.sites[1:]):
        if not (s.exists and t.exists):
            continue
        try:
            sad, how = connecting_saddle(s.point, t.point, trap)
        except (LandscapeError, ConvergenceError) as exc:
            log.warning("no barrier between sites %d and %d: %s", s.offset, t.offset, exc)
            continue
        land.barriers.append(Barrier((s.offset, t.offset), sad.energy - ground.energy,
                                     sad.n_negative, how, sad))
    return land


# --- two kinks ---------------------------------------------------------------------

@dataclass
class TwoKinkAnalysis:
    """Two-kink energies versus separation and the annihilation barrier.

    ``separations`` are the measured distances (in ion indices) between the
    two domain walls of each distinct stable two-kink state, ascending.
    ``barrier`` is measured from the closest pair to the lowest index-1
    saddle connecting it to the zigzag.  ``symmetric_point`` is the
    (generally higher-index) critical point reached by Newton refinement
    from the top of the relaxed string, kept for comparison.
    """

    separations: np.ndarray
    energies: np.ndarray           # relative to the zigzag
    kink_energy: float
    barrier: float
    saddle: CriticalPoint | None
    states: list = field(default_factory=list)
    symmetric_point: CriticalPoint | None = None
    units: UnitSystem | None = None

    @property
    def interaction(self) -> np.ndarray:
        return self.energies - 2.0 * self.kink_energy

    @property
    def barrier_kT(self) -> float:
        if self.units is None:
            raise ValueError("no unit system attached")
        return self.units.in_kT(self.barrier)


def kink_walls(positions: np.ndarray, axis: int = 1) -> np.ndarray:
    """Fractional ion indices where the staggered radial order changes sign."""
    p = np.asarray(positions)
    s = (-1.0) ** np.arange(len(p)) * p[np.argsort(p[:, 0]), axis]
    k = np.flatnonzero(s[:-1] * s[1:] < 0)
    return k + s[k] / (s[k] - s[k + 1])


def two_kink_state(trap: PseudoTrap, n: int, width: int, planar: bool = False,
                   z_kick: float = 0.05) -> CriticalPoint:
    """Relaxed pair of kinks seeded around a flipped block of ``width`` ions."""
    seed = make_seed(SeedSpec("two_kink", n, width=width, planar=planar), trap)
    pos = np.array(seed.positions)
    if not planar and z_kick:
        start = n // 2 - width // 2
        # alternate out-of-plane kicks on the two kink cores
        for i, j in ((start - 1, start), (start + width - 1, start + width)):
            if 0 <= i and j < n:
                pos[i, 2] += z_kick
                pos[j, 2] -= z_kick
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SaddleWarning)
        cp = relax(seed.with_positions(pos), trap, method="lbfgs")
    if not cp.stable:
        raise LandscapeError(f"two-kink seed of width {width} did not relax to a minimum")
    return cp


def two_kink_analysis(trap: PseudoTrap, n: int, separations=(3,), planar: bool = False,
                      kink_type: str = "blurred", units: UnitSystem | None = None,
                      images: int = 24, iterations: int = 3000,
                      barrier: bool = True) -> TwoKinkAnalysis:
    """Two-kink states seeded with flipped blocks of the given widths.

    Seeds that relax to the same state, to the zigzag or to a single kink
    are merged or dropped; at least one two-kink state must remain.  With
    ``barrier=False`` the annihilation saddle search is skipped (``barrier``
    is then NaN and ``saddle`` None).
    """
    ground = ground_state(trap, n, planar)
    e_kink = kink_rest_energy(trap, n, kink_type, ground=ground)
    found = {}
    for w in separations:
        try:
            cp = two_kink_state(trap, n, w, planar)
        except (LandscapeError, ConvergenceError) as exc:
            log.info("width %d: %s", w, exc)
            continue
        walls = kink_walls(cp.config.positions)
        if len(walls) != 2:
            continue
        found.setdefault(round(float(walls[1] - walls[0]), 6), cp)
    if not found:
        raise LandscapeError("no stable two-kink state at the requested separations")
    seps = sorted(found)
    states = [found[s] for s in seps]
    start = states[0]
    energies = np.array([c.energy - ground.energy for c in states])
    if not barrier:
        return TwoKinkAnalysis(np.asarray(seps), energies, e_kink, float("nan"), None, states,
                               None, units)
    ev = Evaluator(start.config, trap)
    path = string_path(ev, start.config.flat(), ground.config.flat(), images, iterations)
    e = np.array([ev.energy(x) for x in path])
    sym = None
    try:
        sym = newton_critical(start.config.with_flat(path[int(np.argmax(e))]), trap,
                              max_step=0.02, max_iter=200)
    except ConvergenceError:
        pass
    saddle, _ = connecting_saddle(start, ground, trap, path=path, exhaustive=True)
    return TwoKinkAnalysis(np.asarray(seps), energies, e_kink, saddle.energy - start.energy,
                           saddle, states, sym, units)


# --- mass defect ---------------------------------------------------------------------

@dataclass
class MassDefectScan:
    """Continuation of a dark-ion kink in the defect mass ratio."""

    branch: object
    index: int
    mass_ratios: np.ndarray
    displacement: np.ndarray      # radial distance of the dark ion
    bright_extent: np.ndarray     # largest radial distance of a bright ion
    landscapes: dict = field(default_factory=dict)

    @property
    def relative_displacement(self) -> np.ndarray:
        return self.displacement / self.bright_extent


def _radial(config: Configuration) -> np.ndarray:
    return np.hypot(config.positions[:, 1], config.positions[:, 2])


def mass_defect_landscape(trap: PseudoTrap, n: int, species: IonSpecies, stop: float,
                          index: int | None = None, kink_type: str = "blurred",
                          step: float = 0.02, landscape_at=(), max_offset: int = 1
                          ) -> MassDefectScan:
    """Follow the kink with a dark ion from ``species.mass_ratio`` to ``stop``.

    The dark ion sits at ``index`` (default: the kink core).  Landscapes are
    extracted at the mass ratios listed in ``landscape_at``.
    """
    from .continuation import trace_branch
    from .statics import flip_boundary

    index = flip_boundary(n) - 1 if index is None else index
    kind, planar, kick = KINK_TYPES[kink_type]
    seed = make_seed(SeedSpec(kind, n, planar=planar, z_kick=kick), trap)
    seed = seed.with_species(index, species)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SaddleWarning)
        start = relax(seed, trap, method="lbfgs")
    if not start.stable:
        raise LandscapeError("dark-ion kink is not stable at the start of the sweep")
    br = trace_branch(start, trap, "mass_ratio", stop, step=step, ion_index=index)
    mu, disp, ext = [], [], []
    for p, cp in br.samples:
        r = _radial(cp.config)
        bright = cp.config.bright
        mu.append(p)
        disp.append(r[index])
        ext.append(r[bright].max())
    scan = MassDefectScan(br, index, np.asarray(mu), np.asarray(disp), np.asarray(ext))
    for m in landscape_at:
        sp = IonSpecies(m, species.charge_ratio, species.bright)
        scan.landscapes[float(m)] = pn_extract(trap, n, kink_type, max_offset,
                                               defect=(index, sp))
    return scan
