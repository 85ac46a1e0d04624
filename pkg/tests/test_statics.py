import numpy as np
import pytest

from kinklab.model import IonSpecies, PseudoTrap, make_configuration
from kinklab.statics import (ConvergenceError, DampingSchedule, SeedSpec, chain_positions,
                             classify, flip_boundary, is_quasi_3d, make_seed, newton_critical,
                             out_of_plane, relax, symmetry_flags)


def test_two_ion_chain_is_analytic():
    x = chain_positions(2)
    # equilibrium: x = 1 / (2x)^2  ->  x = (1/4)^(1/3)
    assert np.allclose(x, [-(0.25 ** (1 / 3)), 0.25 ** (1 / 3)], atol=1e-13)


def test_three_ion_chain_is_analytic():
    # x = 1/x^2 + 1/(2x)^2 = 5/(4 x^2)  ->  x = (5/4)^(1/3)
    assert np.allclose(chain_positions(3), [-(1.25 ** (1 / 3)), 0.0, 1.25 ** (1 / 3)],
                       atol=1e-13)


def test_chain_is_stable_for_strong_radial_confinement():
    trap = PseudoTrap(200.0, 800.0)
    cp = classify(make_seed(SeedSpec("chain", 31), trap), trap)
    assert cp.grad_norm < 1e-10
    assert cp.stable and cp.n_negative == 0
    assert cp.symmetry.sym_x and cp.symmetry.sym_y


def test_zigzag_relaxes_below_the_chain():
    trap = PseudoTrap(60.0, 240.0)
    chain = classify(make_seed(SeedSpec("chain", 31), trap), trap)
    zz = relax(make_seed(SeedSpec("zigzag", 31), trap), trap, method="lbfgs")
    assert zz.stable and not chain.stable
    assert zz.energy < chain.energy
    # odd N: ions i and N-1-i sit on the same side, so x -> -x maps the zigzag to itself
    assert zz.symmetry.sym_x and not zz.symmetry.sym_y


@pytest.mark.parametrize("method", ["damped", "lbfgs"])
def test_relaxation_methods_agree(method):
    trap = PseudoTrap(90.0, 360.0)
    cp = relax(make_seed(SeedSpec("odd_kink", 21), trap), trap, method=method)
    ref = relax(make_seed(SeedSpec("odd_kink", 21), trap), trap, method="lbfgs")
    assert cp.grad_norm < 1e-9
    assert cp.energy == pytest.approx(ref.energy, abs=1e-9)


def test_newton_reaches_saddles():
    # the chain below its zigzag threshold is an index-1 saddle in the plane
    trap = PseudoTrap(10.0, 40.0)
    seed = make_seed(SeedSpec("chain", 7), trap)
    pos = seed.positions.copy()
    pos[:, 1] += 1e-4
    cp = newton_critical(seed.with_positions(pos), trap)
    assert cp.grad_norm < 1e-9
    assert cp.n_negative >= 1 and not cp.stable


def test_newton_failure_is_reported():
    trap = PseudoTrap(10.0, 40.0)
    bad = make_configuration([[0, 0, 0], [1e-12, 0, 0], [1, 0, 0]], planar=True)
    with pytest.raises((ConvergenceError, ValueError)):
        newton_critical(bad, trap, max_iter=3)


def test_local_index_sign():
    trap = PseudoTrap(10.0, 40.0)
    cp = classify(make_seed(SeedSpec("chain", 5), trap), trap)
    assert cp.local_index == (-1) ** cp.n_negative


def test_seed_validation():
    with pytest.raises(ValueError):
        SeedSpec("vortex", 10)
    with pytest.raises(ValueError):
        SeedSpec("odd_kink", 10, offset=7)
    with pytest.raises(ValueError):
        SeedSpec("dark_ion", 10, index=12)


def test_flip_boundary():
    assert flip_boundary(31) == 16
    assert flip_boundary(50) == 25
    assert flip_boundary(31, 2) == 18


def test_dark_ion_seed_carries_species():
    trap = PseudoTrap(100.0, 110.0)
    sp = IonSpecies(40 / 24, 1.0, False)
    cfg = make_seed(SeedSpec("dark_ion", 12, index=5, species=sp, planar=False), trap)
    assert cfg.species[5] == sp
    assert cfg.bright.sum() == 11


def test_symmetry_flags_of_a_reflected_pair():
    cfg = make_configuration([[-1, 0.2, 0], [1, -0.2, 0]])
    f = symmetry_flags(cfg)
    assert f.sym_xy_combined and not f.sym_y and f.sym_z


def test_out_of_plane_measure():
    cfg = make_configuration([[-1, 0, 0], [0, 0, 0.002], [1, 0, 0]])
    assert out_of_plane(cfg) == pytest.approx(0.002)
    assert is_quasi_3d(cfg)
    assert not is_quasi_3d(cfg, threshold=0.01)


def test_damping_schedule_defaults_are_sane():
    s = DampingSchedule()
    assert s.friction > 0 and s.periods > 0
