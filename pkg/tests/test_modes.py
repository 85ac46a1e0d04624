import numpy as np
import pytest

from kinklab.model import PseudoTrap, make_configuration
from kinklab.modes import mode_coordinates, normal_modes, reconstruct
from kinklab.statics import SeedSpec, classify, make_seed, relax


@pytest.fixture(scope="module")
def kink():
    trap = PseudoTrap.from_ratio(121.0, 1.047)
    return relax(make_seed(SeedSpec("odd_kink", 50, planar=False, z_kick=0.05), trap), trap,
                 method="lbfgs")


def test_single_ion_frequencies_are_the_trap_frequencies():
    trap = PseudoTrap(4.0, 9.0)
    cp = classify(make_configuration([[0.0, 0.0, 0.0]]), trap)
    sp = normal_modes(cp)
    assert np.allclose(np.sort(sp.frequencies), [1.0, 2.0, 3.0], atol=1e-12)


def test_chain_has_centre_of_mass_and_breathing_modes():
    trap = PseudoTrap(400.0, 900.0)
    cp = classify(make_seed(SeedSpec("chain", 8, planar=False), trap), trap)
    w = np.sort(normal_modes(cp).frequencies)
    assert w[0] == pytest.approx(1.0, abs=1e-9)          # axial COM
    assert w[1] == pytest.approx(np.sqrt(3.0), abs=1e-9)  # breathing


def test_mode_coordinate_round_trip(kink):
    sp = normal_modes(kink)
    rng = np.random.default_rng(0)
    theta = rng.normal(0, 0.01, (5, len(sp.eigenvalues)))
    flat = reconstruct(theta, sp)
    back, _ = mode_coordinates(flat, sp)
    assert np.max(np.abs(back - theta)) < 1e-10


def test_modes_are_mass_orthonormal(kink):
    sp = normal_modes(kink)
    d = sp.mode_matrix
    assert np.allclose(d.T @ d, np.eye(d.shape[1]), atol=1e-10)


def test_low_mode_is_localized_on_the_kink(kink):
    sp = normal_modes(kink)
    assert sp.omega_low is not None and 0 < sp.omega_low < 1.0
    amp = np.linalg.norm(sp.ion_amplitudes(sp.low_index), axis=1)
    centre = np.argsort(kink.config.positions[:, 0])[len(amp) // 2]
    top = np.argsort(-amp)[:2]
    x = kink.config.positions[:, 0]
    assert np.all(np.abs(x[top] - x[centre]) < 3.0)


def test_unstable_point_reports_negative_eigenvalues():
    trap = PseudoTrap(10.0, 40.0)
    cp = classify(make_seed(SeedSpec("chain", 7), trap), trap)
    sp = normal_modes(cp)
    assert np.sum(sp.eigenvalues < 0) == cp.n_negative
