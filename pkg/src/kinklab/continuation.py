"""One-parameter continuation of critical points with bifurcation detection.

Branches are traced with a secant predictor and Newton corrector.  Changes
in the number of negative Hessian eigenvalues between samples are bracketed
by bisection; branch ends are located exactly with the extended fold system

    grad V(x, p) = 0,   K(x, p) v = 0,   l . v = 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .model import Configuration, Evaluator, IonSpecies, PseudoTrap
from .statics import (ConvergenceError, CriticalPoint, ZERO_THRESHOLD, classify,
                      newton_solve, relax, symmetry_flags, GRAD_TOL)

log = logging.getLogger(__name__)

PARAMETERS = ("gamma_y", "ratio", "mass_ratio")
DEFAULT_STEP = {"gamma_y": 0.5, "ratio": 0.002, "mass_ratio": 0.02}


class ContinuationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Family:
    """A one-parameter family of potentials.

    ``gamma_y`` varies the radial strength at fixed ``w_z / w_y``; ``ratio``
    varies ``w_z / w_y`` at fixed ``gamma_y``; ``mass_ratio`` varies the mass
    of the ion at ``ion_index``.
    """

    parameter: str
    trap: PseudoTrap
    ion_index: int | None = None

    def __post_init__(self):
        if self.parameter not in PARAMETERS:
            raise ValueError(f"unknown continuation parameter {self.parameter!r}")
        if self.parameter == "mass_ratio" and self.ion_index is None:
            raise ValueError("mass_ratio continuation needs ion_index")

    def value(self, config: Configuration | None = None) -> float:
        if self.parameter == "gamma_y":
            return self.trap.gamma_y
        if self.parameter == "ratio":
            return self.trap.ratio
        return config.species[self.ion_index].mass_ratio

    def at(self, p: float, config: Configuration) -> tuple[Configuration, PseudoTrap]:
        if self.parameter == "gamma_y":
            return config, PseudoTrap(p, p * self.trap.ratio**2)
        if self.parameter == "ratio":
            return config, PseudoTrap.from_ratio(self.trap.gamma_y, p)
        sp = config.species[self.ion_index]
        return config.with_species(self.ion_index, replace(sp, mass_ratio=p)), self.trap

    def evaluator(self, p: float, config: Configuration) -> Evaluator:
        cfg, trap = self.at(p, config)
        return Evaluator(cfg, trap)

    def classify(self, p: float, config: Configuration, zero_threshold=ZERO_THRESHOLD):
        cfg, trap = self.at(p, config)
        return classify(cfg, trap, zero_threshold)


@dataclass
class BifurcationEvent:
    parameter: float
    soft_mode: np.ndarray
    n_negative_left: int
    n_negative_right: int
    kind: str
    config: Configuration
    bracket: tuple[float, float] = (np.nan, np.nan)
    index_balance: tuple[int, int] | None = None
    emanating: list | None = None
    note: str = ""

    @property
    def soft_symmetry(self) -> dict:
        return soft_mode_parity(self.config, self.soft_mode)


@dataclass
class Branch:
    parameter: str
    samples: list = field(default_factory=list)
    events: list = field(default_factory=list)
    family: Family | None = None
    terminated: str = ""

    @property
    def values(self) -> np.ndarray:
        return np.array([p for p, _ in self.samples])

    @property
    def points(self) -> list[CriticalPoint]:
        return [cp for _, cp in self.samples]

    def stable_interval(self) -> tuple[float, float] | None:
        vals = [p for p, cp in self.samples if cp.stable]
        return (min(vals), max(vals)) if vals else None


def soft_mode_parity(config: Configuration, mode: np.ndarray, tol: float = 1e-3) -> dict:
    """Parity of a mode under each inversion that leaves ``config`` invariant.

    Returns +1 (even), -1 (odd) or 0 (neither / symmetry absent).
    """
    pos = config.positions
    n = config.n
    m = np.zeros((n, 3))
    m[:, config.mask] = np.asarray(mode).reshape(n, -1)
    flags = symmetry_flags(config)
    out = {}
    for name, signs, present in (("x", (-1, 1, 1), flags.sym_x), ("y", (1, -1, 1), flags.sym_y),
                                 ("z", (1, 1, -1), flags.sym_z), ("xy", (-1, -1, 1), flags.sym_xy_combined)):
        if not present:
            out[name] = 0
            continue
        s = np.asarray(signs, float)
        img = pos * s
        d = np.linalg.norm(pos[:, None, :] - img[None, :, :], axis=2)
        perm = np.argmin(d, axis=1)  # ion i maps onto ion perm[i]
        moved = np.zeros_like(m)
        moved[perm] = m * s
        if np.allclose(moved, m, atol=tol * np.abs(m).max()):
            out[name] = 1
        elif np.allclose(moved, -m, atol=tol * np.abs(m).max()):
            out[name] = -1
        else:
            out[name] = 0
    return out


# --- core solvers -----------------------------------------------------------------

def _fd_param_gradient(family: Family, p: float, config: Configuration, x: np.ndarray,
                       h: float = 1e-6) -> np.ndarray:
    hp = h * max(1.0, abs(p))
    return (family.evaluator(p + hp, config).gradient(x)
            - family.evaluator(p - hp, config).gradient(x)) / (2 * hp)


def tangent(family: Family, p: float, config: Configuration, x: np.ndarray) -> np.ndarray:
    ev = family.evaluator(p, config)
    gp = _fd_param_gradient(family, p, config, x)
    return -np.linalg.solve(ev.hessian(x), gp)


def correct(family: Family, p: float, config: Configuration, x0: np.ndarray,
            tol: float = GRAD_TOL, max_iter: int = 25) -> np.ndarray:
    ev = family.evaluator(p, config)
    x, _ = newton_solve(ev, x0, tol=tol, max_iter=max_iter, max_step=0.05)
    return x


def locate_fold(family: Family, p0: float, config: Configuration, x0: np.ndarray,
                tol: float = 1e-11, max_iter: int = 40) -> tuple[float, np.ndarray, np.ndarray]:
    """Newton on the extended fold system starting near a saddle-node."""
    ev = family.evaluator(p0, config)
    lam, vec = np.linalg.eigh(ev.hessian(x0))
    k = np.argmin(np.abs(lam))
    v = vec[:, k]
    l = v.copy()
    x, p = np.array(x0, float), float(p0)
    n = len(x)
    for _ in range(max_iter):
        ev = family.evaluator(p, config)
        g = ev.gradient(x)
        K = ev.hessian(x)
        r = np.concatenate([g, K @ v, [l @ v - 1.0]])
        if np.linalg.norm(r) < tol:
            return p, x, v / np.linalg.norm(v)
        eps = 1e-5 / max(np.linalg.norm(v), 1e-12)
        dvK = (ev.hessian(x + eps * v) - ev.hessian(x - eps * v)) / (2 * eps)
        hp = 1e-6 * max(1.0, abs(p))
        gp = _fd_param_gradient(family, p, config, x)
        Kp = (family.evaluator(p + hp, config).hessian(x)
              - family.evaluator(p - hp, config).hessian(x)) / (2 * hp)
        J = np.zeros((2 * n + 1, 2 * n + 1))
        J[:n, :n] = K
        J[:n, n] = gp
        J[n:2 * n, :n] = dvK
        J[n:2 * n, n] = Kp @ v
        J[n:2 * n, n + 1:] = K
        J[2 * n, n + 1:] = l
        d = np.linalg.solve(J, -r)
        x = x + d[:n]
        p = p + d[n]
        v = v + d[n + 1:]
    raise ContinuationError("fold system did not converge")


def fold_partner(family: Family, event: BifurcationEvent, side: float, offset: float = 1e-3):
    """The two critical points born at a fold, ``offset`` into the existence side.

    ``side`` is +1 or -1: the direction in parameter where solutions exist.
    """
    x0 = event.config.flat()
    v = event.soft_mode
    p = event.parameter + side * offset
    out = []
    ev = family.evaluator(p, event.config)
    for s in (1.0, -1.0):
        # amplitude ~ sqrt(offset) along the null vector
        grow = []
        for amp in (0.5, 1.0, 2.0, 4.0):
            try:
                x = correct(family, p, event.config, x0 + s * amp * np.sqrt(offset) * v * 0.1)
                grow.append(x)
                break
            except ConvergenceError:
                continue
        if grow:
            out.append(family.classify(p, event.config.with_flat(grow[0])))
    return _dedupe(out)


def _dedupe(points: list, tol: float = 1e-4) -> list:
    out = []
    for cp in points:
        if all(np.abs(cp.config.positions - o.config.positions).max() > tol for o in out):
            out.append(cp)
    return out


# --- tracing -------------------------------------------------------------------------

def _bracket_crossing(family, config, pa, xa, na, pb, xb, nb, tol):
    """Bisect between (pa, na) and (pb, nb) to width ``tol``; returns event fields."""
    while abs(pb - pa) > tol:
        pm = 0.5 * (pa + pb)
        w = (pm - pa) / (pb - pa)
        xm = correct(family, pm, config, (1 - w) * xa + w * xb)
        nm = family.classify(pm, config.with_flat(xm)).n_negative
        if nm == na:
            pa, xa = pm, xm
        else:
            pb, xb, nb = pm, xm, nm
    return pa, xa, pb, xb, nb


def trace_branch(start: CriticalPoint, trap: PseudoTrap, parameter: str, stop: float,
                 step: float | None = None, min_step: float | None = None,
                 continuity: float = 0.5, param_tol: float = 1e-6,
                 ion_index: int | None = None, zero_threshold: float = ZERO_THRESHOLD,
                 locate_events: bool = True, first_step: float | None = None) -> Branch:
    """Follow ``start`` in ``parameter`` from its current value toward ``stop``.

    ``continuity`` bounds the per-step ion displacement in units of the
    smallest inter-ion distance.  The predictor is the secant through the
    last two samples (the previous configuration for the first step).
    """
    family = Family(parameter, start.trap or trap, ion_index)
    config = start.config
    p = family.value(config)
    direction = np.sign(stop - p) or 1.0
    step = abs(step or DEFAULT_STEP[parameter])
    min_step = min_step or step * 2.0**-14
    branch = Branch(parameter, [(p, start)], family=family)
    x = config.flat()
    prev = None
    cp = start
    h = min(step, first_step or step)
    while direction * (stop - p) > 1e-12:
        h = min(h, abs(stop - p))
        pn = p + direction * h
        spacing = _min_spacing(config.with_flat(x))
        try:
            if prev is None:
                pred = x + (pn - p) * tangent(family, p, config, x)
            else:
                pp, xp = prev
                pred = x + (x - xp) * (pn - p) / (p - pp)
            xn = correct(family, pn, config, pred)
            if np.abs(xn - x).max() > continuity * spacing:
                raise ConvergenceError("continuity bound exceeded")
            # a corrector landing far from the prediction has switched branches
            drift = np.abs(xn - pred).max()
            if drift > max(0.3 * np.abs(pred - x).max(), 1e-6 * spacing):
                raise ConvergenceError("corrector drifted from predictor")
            cpn = family.classify(pn, config.with_flat(xn), zero_threshold)
        except (ConvergenceError, np.linalg.LinAlgError):
            h *= 0.5
            if h < min_step:
                _terminate(branch, family, config, p, x, cp, locate_events)
                return branch
            continue
        if cpn.n_negative != cp.n_negative and locate_events:
            if abs(cpn.n_negative - cp.n_negative) > 1 and h > min_step:
                h *= 0.5
                continue
            pa, xa, pb, xb, nb = _bracket_crossing(family, config, p, x, cp.n_negative,
                                                   pn, xn, cpn.n_negative, param_tol)
            ev = family.evaluator(0.5 * (pa + pb), config)
            xm = 0.5 * (xa + xb)
            lam, vec = np.linalg.eigh(ev.hessian(xm))
            k = int(np.argmin(np.abs(lam)))
            pcfg = family.at(0.5 * (pa + pb), config.with_flat(xm))[0]
            left, right = (cp.n_negative, nb) if direction > 0 else (nb, cp.n_negative)
            evt = BifurcationEvent(0.5 * (pa + pb), vec[:, k], left, right, "unclassified",
                                   pcfg, bracket=(min(pa, pb), max(pa, pb)))
            if abs(cpn.n_negative - cp.n_negative) > 1:
                evt.note = "two-mode event"
            if any(v == -1 for v in evt.soft_symmetry.values()):
                evt.kind = "pitchfork"
            branch.events.append(evt)
        prev = (p, x)
        p, x, cp = pn, xn, cpn
        branch.samples.append((p, cp))
        h = min(step, h * 2)
    return branch


def _min_spacing(config: Configuration) -> float:
    pos = config.positions
    d = np.linalg.norm(pos[:, None] - pos[None], axis=2)
    np.fill_diagonal(d, np.inf)
    return float(d.min())


def _terminate(branch, family, config, p, x, cp, locate_events):
    branch.terminated = f"corrector failed beyond {family.parameter} = {p:.6f}"
    if not locate_events:
        return
    try:
        pf, xf, vf = locate_fold(family, p, config, x)
    except (ContinuationError, np.linalg.LinAlgError, ValueError):
        return
    if abs(pf - p) > 10 * DEFAULT_STEP[family.parameter]:
        return
    fcfg = family.at(pf, config.with_flat(xf))[0]
    n_neg = cp.n_negative
    evt = BifurcationEvent(pf, vf, n_neg, n_neg, "saddle_node", fcfg, bracket=(pf, pf))
    # the branch exists only on the traced side
    if pf > p:
        evt.n_negative_right = -1
    else:
        evt.n_negative_left = -1
    branch.events.append(evt)
    branch.terminated = f"saddle-node at {family.parameter} = {pf:.8f}"


# --- branch switching and index bookkeeping -----------------------------------------

def solve_at_amplitude(family: Family, event: BifurcationEvent, amplitude: float,
                       max_iter: int = 40) -> tuple[float, np.ndarray]:
    """Critical point whose soft-mode projection from the event is ``amplitude``.

    Newton on ``grad V(x, p) = 0``, ``v . (x - x0) = amplitude`` with the
    parameter free; well conditioned at a simple bifurcation.
    """
    x0 = event.config.flat()
    v = event.soft_mode / np.linalg.norm(event.soft_mode)
    x = x0 + amplitude * v
    p = event.parameter
    n = len(x)
    for _ in range(max_iter):
        ev = family.evaluator(p, event.config)
        g = ev.gradient(x)
        r = np.concatenate([g, [v @ (x - x0) - amplitude]])
        if np.linalg.norm(r) < GRAD_TOL:
            return p, x
        J = np.zeros((n + 1, n + 1))
        J[:n, :n] = ev.hessian(x)
        J[:n, n] = _fd_param_gradient(family, p, event.config, x)
        J[n, :n] = v
        d = np.linalg.solve(J, -r)
        big = np.abs(d[:n]).max()
        if big > 0.05:
            d *= 0.05 / big
        x = x + d[:n]
        p = p + d[n]
    raise ConvergenceError("bordered branch-switch solve did not converge")


def branch_switch(event: BifurcationEvent, trap: PseudoTrap, parameter: str,
                  eps: float = 0.05, ion_index: int | None = None) -> list[CriticalPoint]:
    """Critical points emanating from a simple bifurcation along its soft mode.

    For each sign, the emanating solution is pinned at a soft-mode amplitude
    of ``eps`` smallest-spacings; the parameter value is solved for, so the
    side on which the new branch exists comes out of the computation.
    Solutions that coincide with the parent are discarded.
    """
    family = Family(parameter, trap, ion_index)
    spacing = _min_spacing(event.config)
    out = []
    for s in (1.0, -1.0):
        for scale in (1.0, 0.5, 0.25, 2.0):
            try:
                p, x = solve_at_amplitude(family, event, s * scale * eps * spacing)
            except (ConvergenceError, np.linalg.LinAlgError):
                continue
            cp = family.classify(p, event.config.with_flat(x))
            try:
                parent = correct(family, p, event.config, event.config.flat())
            except ConvergenceError:
                parent = None
            if parent is not None and np.abs(parent - x).max() < 1e-4:
                continue
            out.append((p, cp))
            break
    return [cp for _, cp in _dedupe_pairs(out)]


def _dedupe_pairs(pairs, tol=1e-4):
    out = []
    for p, cp in pairs:
        if all(abs(p - q) > 1e-9 or np.abs(cp.config.positions - c.config.positions).max() > tol
               for q, c in out):
            out.append((p, cp))
    return out


def parent_at(event: BifurcationEvent, trap: PseudoTrap, parameter: str, side: float,
              offset: float, ion_index: int | None = None) -> CriticalPoint:
    family = Family(parameter, trap, ion_index)
    p = event.parameter + side * offset
    x = correct(family, p, event.config, event.config.flat())
    return family.classify(p, event.config.with_flat(x))


@dataclass
class IndexAudit:
    left: list
    right: list
    balanced: bool
    message: str

    @property
    def sums(self) -> tuple[int, int]:
        return sum(self.left), sum(self.right)


def index_audit(left: list, right: list) -> IndexAudit:
    """Compare summed local indices of the solutions on both sides of an event.

    ``left`` and ``right`` hold CriticalPoints or plain local indices.
    """
    li = [c if isinstance(c, (int, np.integer)) else c.local_index for c in left]
    ri = [c if isinstance(c, (int, np.integer)) else c.local_index for c in right]
    ok = sum(li) == sum(ri)
    if ok:
        msg = f"balanced: {sum(li)} = {sum(ri)}"
    else:
        d = sum(ri) - sum(li)
        msg = (f"imbalance {sum(li)} != {sum(ri)}: a branch with index "
               f"{'+1' if d < 0 else '-1'} is missing on the "
               f"{'right' if d < 0 else 'left'} (or its mirror image was merged)")
    return IndexAudit(li, ri, ok, msg)


def saddle_node_scan(start: CriticalPoint, trap: PseudoTrap, parameter: str, stop: float,
                     step: float | None = None, ion_index: int | None = None) -> list:
    """Trace a stable branch until it ends and return its fold events."""
    br = trace_branch(start, trap, parameter, stop, step=step, ion_index=ion_index)
    return [e for e in br.events if e.kind == "saddle_node"]


def _param_of(cp: CriticalPoint, family: Family) -> float:
    if family.parameter == "mass_ratio":
        return family.value(cp.config)
    trap = cp.trap or family.trap
    return trap.gamma_y if family.parameter == "gamma_y" else trap.ratio


def audit_event(event: BifurcationEvent, trap: PseudoTrap, parameter: str,
                offset: float = 1e-3, ion_index: int | None = None) -> IndexAudit:
    """Index bookkeeping across one located event.

    Folds compare "nothing" with the two critical points born there; other
    events compare the parent alone with the parent plus the emanating
    branches on the side where those exist.
    """
    family = Family(parameter, trap, ion_index)
    if event.kind == "saddle_node":
        side = -1.0 if event.n_negative_right == -1 else 1.0
        born = fold_partner(family, event, side, offset)
        audit = index_audit([], born) if side > 0 else index_audit(born, [])
    else:
        kids = branch_switch(event, trap, parameter, ion_index=ion_index)
        if not kids:
            return IndexAudit([], [], False, "no emanating branches found")
        dp = np.mean([_param_of(k, family) for k in kids]) - event.parameter
        side = 1.0 if dp > 0 else -1.0
        off = max(abs(dp), 1e-6)
        here = parent_at(event, trap, parameter, side, off, ion_index)
        there = parent_at(event, trap, parameter, -side, off, ion_index)
        with_kids = [here, *kids]
        audit = index_audit([there], with_kids) if side > 0 else index_audit(with_kids, [there])
    event.index_balance = audit.sums
    return audit
