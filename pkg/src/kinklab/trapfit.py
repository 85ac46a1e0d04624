"""Fitting Paul-trap and camera parameters to observed ion coordinates.

The forward model turns trial Mathieu parameters into the equivalent static
trap (Floquet secular frequencies and principal axes), finds the crystal
equilibrium, rotates it into trap coordinates, scales it to metres with the
axial length unit and projects it onto the camera plane.  Observed and
predicted points are paired by a minimum-cost assignment, and the squared
distances are minimized with a finite-difference Levenberg-Marquardt loop.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares, linear_sum_assignment, minimize_scalar
from scipy.spatial.distance import cdist

from .floquet import InstabilityError, floquet_analysis
from .imaging import CameraModel, project
from .model import (Configuration, Evaluator, IonSpecies, PaulTrap, REFERENCE,
                    SingularGeometryError, TensorTrap, make_configuration)
from .statics import (ConvergenceError, GRAD_TOL, SeedSpec, classify, make_seed, newton_solve,
                      relax)
from .units import MG24_MASS, EXPERIMENT_OMEGA_RF, UnitSystem

log = logging.getLogger(__name__)

PARAM_NAMES = ("a_x", "a_y", "a_yz", "q", "azimuth", "elevation")
FAIL_RESIDUAL = 1e3  # µm, per coordinate, for trial parameters without a valid crystal
MICRON = 1e-6


@dataclass(frozen=True)
class FitParameters:
    a_x: float
    a_y: float
    a_yz: float
    q: float
    azimuth: float = 0.0
    elevation: float = -45.0

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in PARAM_NAMES])

    @classmethod
    def from_vector(cls, v) -> "FitParameters":
        return cls(*map(float, v))

    @property
    def trap(self) -> PaulTrap:
        return PaulTrap(self.a_x, self.a_y, self.a_yz, self.q)

    @property
    def camera(self) -> CameraModel:
        return CameraModel(self.azimuth, self.elevation)


@dataclass
class Observation:
    """Camera-plane coordinates (metres) of the bright ions of one frame.

    ``n_ions`` counts all ions including dark ones; ``seed`` selects the
    crystal structure searched for (zigzag by default).  Centred frames are
    compared after subtracting the centre of mass of the bright ions;
    uncentred ones are measured from the trap centre.
    """

    coords: np.ndarray
    n_ions: int | None = None
    seed: SeedSpec | None = None
    centered: bool = True

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("observation contains non-finite coordinates")
        if len(self.coords) < 2:
            raise ValueError("need at least two ions")
        if self.n_ions is None:
            self.n_ions = len(self.coords)
        if self.seed is None:
            self.seed = SeedSpec("zigzag", self.n_ions, planar=False)

    @property
    def centred_coords(self) -> np.ndarray:
        return self.coords - self.coords.mean(axis=0) if self.centered else self.coords


@dataclass
class FitResult:
    params: FitParameters
    residuals: list            # per-frame per-ion distances (m)
    mean_residual: float       # m
    max_residual: float        # m
    frequencies: np.ndarray    # secular frequencies, rad/s
    success: bool
    message: str
    nfev: int = 0
    cost: float = 0.0
    extra: dict = field(default_factory=dict)


class CrystalModel:
    """Forward model: parameters -> projected equilibrium positions.

    Equilibria are warm-started from the previous call for the same frame so
    that the objective varies smoothly with the parameters.
    """

    def __init__(self, omega_rf: float = EXPERIMENT_OMEGA_RF, mass: float = MG24_MASS,
                 charge: float | None = None):
        self.paul_units = UnitSystem(mass, charge or 1.602176634e-19, omega_rf=omega_rf)
        self._cache: dict = {}

    def static_trap(self, params: FitParameters):
        fa = floquet_analysis(params.trap)
        if not fa.stable:
            raise InstabilityError("unstable trial parameters", fa.max_modulus,
                                   fa.unstable_axis)
        return fa, self.paul_units.pseudo_from_paul(fa.frequencies[0])

    def _solve(self, key, seed_fn, trap) -> Configuration:
        prev = self._cache.get(key)
        if prev is not None:
            ev = Evaluator(prev, trap)
            try:
                x, _ = newton_solve(ev, prev.flat(), GRAD_TOL, max_step=0.05)
                cfg = prev.with_flat(x)
                cp = classify(cfg, trap)
                if cp.stable and np.abs(x - prev.flat()).max() < 0.2:
                    self._cache[key] = cfg
                    return cfg
            except (ConvergenceError, np.linalg.LinAlgError, SingularGeometryError):
                pass
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cp = relax(seed_fn(), trap, method="lbfgs")
        if not cp.stable:
            raise ConvergenceError("no stable crystal at trial parameters")
        self._cache[key] = cp.config
        return cp.config

    def positions(self, params: FitParameters, obs: Observation, key=None) -> np.ndarray:
        """Equilibrium positions (N x 3, metres, trap coordinates)."""
        fa, units = self.static_trap(params)
        ptrap = fa.pseudo_trap()
        cfg = self._solve(key if key is not None else id(obs),
                          lambda: make_seed(obs.seed, ptrap), ptrap)
        return units.length_unit * (cfg.positions @ fa.axes)

    def predict(self, params: FitParameters, obs: Observation, key=None) -> np.ndarray:
        pos = self.positions(params, obs, key)
        uv = project(pos, params.camera)
        return uv - uv.mean(axis=0) if obs.centered else uv


def match(pred: np.ndarray, obs: np.ndarray) -> np.ndarray:
    """Index into ``pred`` of the partner of each observed point (minimum total cost)."""
    cost = cdist(obs, pred, "sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    out = np.empty(len(obs), int)
    out[rows] = cols
    return out


def _frame_residuals(pred: np.ndarray, obs: Observation) -> np.ndarray:
    o = obs.centred_coords
    idx = match(pred, o)
    return pred[idx] - o


def fit(observations, guess: FitParameters, model: CrystalModel | None = None,
        freeze: tuple[str, ...] = (), max_nfev: int = 200, diff_step: float = 1e-6,
        tol: float = 1e-12) -> FitResult:
    """Least-squares fit of the six trap/camera parameters to one or more frames."""
    obs = [observations] if isinstance(observations, Observation) else list(observations)
    model = model or CrystalModel()
    full0 = guess.vector()
    free = np.array([k not in freeze for k in PARAM_NAMES])
    scale = np.where(np.abs(full0) > 0, np.abs(full0), 1e-4)
    scale[4:] = np.maximum(np.abs(full0[4:]), 1.0)
    n_res = sum(2 * len(o.coords) for o in obs)
    failures = []

    def unpack(z):
        v = full0.copy()
        v[free] = z * scale[free]
        return FitParameters.from_vector(v)

    def residuals(z):
        p = unpack(z)
        try:
            r = [_frame_residuals(model.predict(p, o, key=(k, o.seed)), o)
                 for k, o in enumerate(obs)]
        except (InstabilityError, ConvergenceError, SingularGeometryError,
                np.linalg.LinAlgError) as exc:
            failures.append(str(exc))
            log.warning("objective penalty at %s: %s", p, exc)
            return np.full(n_res, FAIL_RESIDUAL)
        return np.concatenate([x.ravel() for x in r]) / MICRON

    try:
        for k, o in enumerate(obs):
            model.predict(guess, o, key=(k, o.seed))
    except (InstabilityError, ConvergenceError, SingularGeometryError) as exc:
        raise ValueError(f"initial guess does not give a stable crystal: {exc}") from exc
    z0 = full0[free] / scale[free]
    res = least_squares(residuals, z0, method="lm", x_scale=1.0, diff_step=diff_step,
                        xtol=tol, ftol=tol, gtol=tol, max_nfev=max_nfev * (len(z0) + 1))
    best = unpack(res.x)
    per = []
    for k, o in enumerate(obs):
        r = _frame_residuals(model.predict(best, o, key=(k, o.seed)), o)
        per.append(np.linalg.norm(r, axis=1))
    allr = np.concatenate(per)
    fa = floquet_analysis(best.trap)
    freqs = fa.frequencies * model.paul_units.frequency_unit
    return FitResult(best, per, float(allr.mean()), float(allr.max()), freqs,
                     bool(res.success), res.message, int(res.nfev), float(res.cost),
                     {"penalties": len(failures), "free": [k for k in PARAM_NAMES
                                                           if k not in freeze]})


def synthetic_observation(params: FitParameters, seed: SeedSpec, noise: float = 0.0,
                          rng_seed: int | None = None, model: CrystalModel | None = None,
                          centered: bool = True, shuffle: bool = True) -> Observation:
    """Projected equilibrium at ``params`` with optional Gaussian noise (metres)."""
    model = model or CrystalModel()
    obs = Observation(np.zeros((seed.n, 2)), seed.n, seed, centered)
    uv = model.predict(params, obs, key=("synthetic", seed))
    rng = np.random.default_rng(rng_seed)
    if noise:
        uv = uv + rng.normal(0.0, noise, uv.shape)
    if shuffle:
        uv = uv[rng.permutation(len(uv))]
    return Observation(uv, seed.n, seed, centered)


# --- dark ions -----------------------------------------------------------------------

def species_trap(params: FitParameters, species: list[IonSpecies]) -> tuple[TensorTrap, np.ndarray]:
    """Per-species static curvature matrices in trap coordinates.

    Each species gets its own Floquet analysis (Mathieu parameters scaled by
    charge/mass), so the different rf and DC scalings and the species
    dependence of the principal axes are kept.  Curvatures are in units of
    the reference species' axial frequency.
    """
    ref = floquet_analysis(params.trap)
    if not ref.stable:
        raise InstabilityError("unstable trial parameters", ref.max_modulus, ref.unstable_axis)
    bx = ref.frequencies[0]

    def curvature(fa, mu):
        k = mu * (fa.frequencies / bx) ** 2
        return fa.axes.T @ np.diag(k) @ fa.axes

    mats = {}
    for s in {(sp.mass_ratio, sp.charge_ratio) for sp in species}:
        if s == (1.0, 1.0):
            continue
        fa = floquet_analysis(params.trap, IonSpecies(*s))
        if not fa.stable:
            raise InstabilityError(f"species {s} unstable", fa.max_modulus, fa.unstable_axis)
        mats[s] = curvature(fa, s[0])
    return TensorTrap.from_arrays(curvature(ref, 1.0), mats), ref.axes


def dark_ion_equilibrium(params: FitParameters, n: int, index: int, species: IonSpecies,
                         model: CrystalModel | None = None, seed_kind: str = "zigzag",
                         warm: Configuration | None = None) -> Configuration:
    """Equilibrium (trap coordinates, nondimensional) with one dark ion at ``index``."""
    model = model or CrystalModel()
    sp = [REFERENCE] * n
    sp[index] = species
    ttrap, axes = species_trap(params, sp)
    if warm is not None:
        seed = warm.with_species(index, species) if warm.species[index] != species else warm
    else:
        fa, _ = model.static_trap(params)
        base = make_seed(SeedSpec(seed_kind, n, planar=False), fa.pseudo_trap())
        seed = make_configuration(base.positions @ axes, sp)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cp = relax(seed, ttrap, method="lbfgs")
    return cp.config


@dataclass
class DarkIonFit:
    """Best dark-ion hypothesis.

    ``index`` is the seed placement; seeds at different placements can relax
    to the same crystal, so ``site`` gives the rank along x of the dark ion in
    the best equilibrium (the physically meaningful position).
    """

    index: int
    site: int
    mass_ratio: float
    residual: float                   # mean distance per bright ion (m)
    scan: dict                        # (index, mass_ratio) -> mean residual
    mass_curve: list                  # (mass_ratio, residual) at the best placement
    minimal_mass_ratio: float | None  # smallest scanned mass meeting the threshold


def _dark_residual(params, model, obs, n, index, mu, charge, warm=None):
    sp = IonSpecies(mu, charge, False)
    cfg = dark_ion_equilibrium(params, n, index, sp, model, warm=warm)
    _, units = model.static_trap(params)
    pos = units.length_unit * cfg.positions
    uv = project(pos[cfg.bright], params.camera)
    if obs.centered:
        uv = uv - uv.mean(axis=0)
    r = _frame_residuals(uv, obs)
    return float(np.linalg.norm(r, axis=1).mean()), cfg


def dark_ion_hypothesis_fit(obs: Observation, n_total: int, params: FitParameters,
                            mass_ratios=(1.0, 1.25, 1.5, 1.75, 2.0, 2.5),
                            placements=None, charge_ratio: float = 1.0,
                            threshold: float = 0.5 * MICRON,
                            model: CrystalModel | None = None) -> DarkIonFit:
    """Scan dark-ion placements and masses against the bright-ion coordinates.

    The trap parameters are held fixed.  The best placement is refined by a
    bounded 1-D minimization over the mass ratio.
    """
    model = model or CrystalModel()
    placements = range(n_total) if placements is None else placements
    scan = {}
    for i in placements:
        warm = None
        for mu in mass_ratios:
            try:
                r, warm = _dark_residual(params, model, obs, n_total, i, mu, charge_ratio, warm)
            except (ConvergenceError, InstabilityError, SingularGeometryError) as exc:
                log.info("hypothesis (%d, %.3f) failed: %s", i, mu, exc)
                r = np.inf
            scan[(i, mu)] = r
    (bi, bmu), _ = min(scan.items(), key=lambda kv: kv[1])
    lo, hi = min(mass_ratios), max(mass_ratios)
    opt = minimize_scalar(lambda m: _dark_residual(params, model, obs, n_total, bi, m,
                                                   charge_ratio)[0],
                          bounds=(max(lo, bmu / 1.5), min(hi * 1.5, bmu * 1.5)),
                          method="bounded", options={"xatol": 1e-4})
    best_mu, best_r = float(opt.x), float(opt.fun)
    if scan[(bi, bmu)] < best_r:
        best_mu, best_r = bmu, scan[(bi, bmu)]
    curve = sorted((mu, r) for (i, mu), r in scan.items() if i == bi)
    ok = [mu for mu, r in curve if r < threshold]
    _, cfg = _dark_residual(params, model, obs, n_total, bi, best_mu, charge_ratio)
    site = int(np.argsort(np.argsort(cfg.positions[:, 0]))[bi])
    return DarkIonFit(bi, site, best_mu, best_r, scan, curve, min(ok) if ok else None)


def paul_verification(params: FitParameters, obs: Observation, model: CrystalModel | None = None,
                      periods: int = 300) -> float:
    """Mean residual (m) of the fitted crystal re-relaxed in the time-dependent trap.

    The pseudopotential equilibrium (Paul length units) is released into the
    damped Paul dynamics and time-averaged.
    """
    from .dynamics import paul_time_average

    model = model or CrystalModel()
    fa, units = model.static_trap(params)
    pos = model.positions(params, obs, key=("verify", id(obs)))
    d_paul = model.paul_units.length_unit
    cfg = make_configuration(pos / d_paul)
    avg = paul_time_average(cfg, params.trap, periods=periods)
    uv = project(avg.positions * d_paul, params.camera)
    if obs.centered:
        uv = uv - uv.mean(axis=0)
    return float(np.linalg.norm(_frame_residuals(uv, obs), axis=1).mean())
