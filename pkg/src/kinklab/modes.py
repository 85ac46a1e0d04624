"""Normal modes of critical points, localization and mode coordinates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import Configuration, Evaluator, PseudoTrap
from .statics import CriticalPoint, ZERO_THRESHOLD

log = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-9


@dataclass(frozen=True)
class ModeSpectrum:
    """Eigen-decomposition of the mass-weighted Hessian.

    ``mode_matrix`` has orthonormal columns in mass-weighted coordinates;
    ``frequencies`` are ``sqrt(lambda)`` with the sign of ``lambda`` (negative
    entries mark unstable directions).  ``ipr`` is the inverse participation
    ratio over ions (effective number of ions taking part).
    """

    eigenvalues: np.ndarray
    frequencies: np.ndarray
    mode_matrix: np.ndarray
    ipr: np.ndarray
    dof_masses: np.ndarray
    reference: Configuration
    omega_low: float | None = None
    low_index: int | None = None

    @property
    def n_ions(self) -> int:
        return self.reference.n

    @property
    def localized(self) -> np.ndarray:
        return self.ipr < self.n_ions / 4

    def ion_amplitudes(self, j: int) -> np.ndarray:
        """Per-ion displacement pattern of mode ``j`` (N x active axes), mass-scaled."""
        v = self.mode_matrix[:, j] / np.sqrt(self.dof_masses)
        return v.reshape(self.n_ions, -1)


def _canonicalize(lam: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Deterministic eigenvectors: fixed basis inside degenerate blocks, fixed signs."""
    vec = vec.copy()
    scale = max(1.0, np.abs(lam).max())
    i = 0
    while i < len(lam):
        j = i + 1
        while j < len(lam) and lam[j] - lam[i] < DEGENERACY_TOL * scale:
            j += 1
        if j - i > 1:
            block = vec[:, i:j]
            # B C^-1 does not depend on the basis the solver returned; the rows
            # are picked by their (basis-invariant) weight in the subspace
            rows = np.sort(np.argsort(-np.sum(block**2, axis=1), kind="stable")[:j - i])
            try:
                fixed = block @ np.linalg.inv(block[rows])
                vec[:, i:j] = np.linalg.qr(fixed)[0]
            except np.linalg.LinAlgError:
                pass
        i = j
    k = np.argmax(np.abs(vec) > 1e-8 * np.abs(vec).max(axis=0), axis=0)
    signs = np.sign(vec[k, np.arange(vec.shape[1])])
    signs[signs == 0] = 1.0
    return vec * signs


def participation(mode_matrix: np.ndarray, n_ions: int) -> np.ndarray:
    p = (mode_matrix**2).reshape(n_ions, -1, mode_matrix.shape[1]).sum(axis=1)
    return 1.0 / np.sum(p**2, axis=0)


def normal_modes(cp: CriticalPoint | Configuration, trap: PseudoTrap | None = None,
                 zero_threshold: float = ZERO_THRESHOLD) -> ModeSpectrum:
    """Modes of ``M^-1/2 K M^-1/2`` at a critical point.

    ``omega_low`` is the lowest stable mode that is localized (IPR < N/4).
    """
    config = cp.config if isinstance(cp, CriticalPoint) else cp
    trap = trap or getattr(cp, "trap", None)
    if trap is None:
        raise ValueError("a trap is required")
    h = Evaluator(config, trap).hessian(config.flat())
    m = np.repeat(config.masses, sum(config.dof_mask))
    s = 1.0 / np.sqrt(m)
    kw = h * s[:, None] * s[None, :]
    lam, vec = np.linalg.eigh(0.5 * (kw + kw.T))
    vec = _canonicalize(lam, vec)
    freqs = np.sign(lam) * np.sqrt(np.abs(lam))
    ipr = participation(vec, config.n)
    low = np.flatnonzero((lam > zero_threshold) & (ipr < config.n / 4))
    low_i = int(low[0]) if len(low) else None
    return ModeSpectrum(lam, freqs, vec, ipr, m, config,
                        None if low_i is None else float(freqs[low_i]), low_i)


def _displacements(positions, spectrum: ModeSpectrum, reference: Configuration) -> np.ndarray:
    pos = np.asarray(positions, dtype=float)
    mask = reference.mask
    if pos.ndim == 3:
        if pos.shape[1:] != (reference.n, 3):
            raise ValueError("trajectory shape does not match the reference configuration")
        flat = pos[:, :, mask].reshape(len(pos), -1)
    else:
        flat = np.atleast_2d(pos)
        if flat.shape[1] != spectrum.mode_matrix.shape[0]:
            raise ValueError("coordinate dimension does not match the spectrum")
    return flat


def mode_coordinates(positions, spectrum: ModeSpectrum, reference: Configuration | None = None,
                     velocities=None):
    """``Theta = D^T M^1/2 (R - R0)`` for each sample; likewise for velocities.

    ``positions`` is (T, N, 3) or (T, n_dof).  Returns ``(theta, theta_dot)``
    with shape (T, n_modes); ``theta_dot`` is None without velocities.
    """
    ref = reference or spectrum.reference
    sq = np.sqrt(spectrum.dof_masses)
    x = _displacements(positions, spectrum, ref) - ref.flat()
    theta = (x * sq) @ spectrum.mode_matrix
    theta_dot = None
    if velocities is not None:
        v = _displacements(velocities, spectrum, ref)
        theta_dot = (v * sq) @ spectrum.mode_matrix
    return theta, theta_dot


def reconstruct(theta: np.ndarray, spectrum: ModeSpectrum,
                reference: Configuration | None = None) -> np.ndarray:
    """Flat coordinates ``R0 + M^-1/2 D Theta`` for each row of ``theta``."""
    ref = reference or spectrum.reference
    return ref.flat() + (np.atleast_2d(theta) @ spectrum.mode_matrix.T) / np.sqrt(spectrum.dof_masses)


@dataclass
class OmegaLowCurve:
    """Sampled ``omega_low`` versus ``w_z / w_y``.

    ``edges`` are the located parameter values where the kink loses
    stability, ``edge_eigenvalues`` the smallest Hessian eigenvalue there.
    """

    ratios: np.ndarray
    omega_low: np.ndarray
    edges: list = field(default_factory=list)
    edge_eigenvalues: list = field(default_factory=list)
    reasons: list = field(default_factory=list)


def omega_low_curve(n: int, gamma_y: float, ratio_range: tuple[float, float],
                    start_ratio: float, seed_spec=None, step: float = 0.002) -> OmegaLowCurve:
    """Lowest kink-localized frequency along a continuation in ``w_z / w_y``.

    The kink is relaxed at ``start_ratio`` and traced towards both ends of
    ``ratio_range``; where tracing stops or the lowest mode goes soft the
    end is recorded as a stability edge.
    """
    from .continuation import trace_branch
    from .statics import SeedSpec, make_seed, relax

    spec = seed_spec or SeedSpec("odd_kink", n, planar=False, z_kick=0.05)
    trap = PseudoTrap.from_ratio(gamma_y, start_ratio)
    cp = relax(make_seed(spec, trap), trap, method="lbfgs")
    out_r, out_w, edges, edge_lam, reasons = [], [], [], [], []
    for stop in (ratio_range[0], ratio_range[1]):
        br = trace_branch(cp, trap, "ratio", stop, step=step)
        for r, c in br.samples:
            if c.n_negative:
                break
            out_r.append(r)
            w = normal_modes(c).omega_low
            out_w.append(np.nan if w is None else w)
        if br.events:
            ev = br.events[0]
            edges.append(ev.parameter)
            fam_trap = PseudoTrap.from_ratio(gamma_y, ev.parameter)
            edge_lam.append(float(np.linalg.eigvalsh(
                Evaluator(ev.config, fam_trap).hessian(ev.config.flat()))[0]))
            reasons.append(f"{ev.kind} at ratio {ev.parameter:.6f}")
        elif br.terminated:
            reasons.append(br.terminated)
    order = np.argsort(out_r, kind="stable")
    r = np.asarray(out_r)[order]
    w = np.asarray(out_w)[order]
    keep = np.r_[True, np.diff(r) > 0]
    idx = np.argsort(edges)
    return OmegaLowCurve(r[keep], w[keep], [edges[i] for i in idx], [edge_lam[i] for i in idx],
                         reasons)
