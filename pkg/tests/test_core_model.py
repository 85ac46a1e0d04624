import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinklab.model import (Evaluator, IonSpecies, PaulTrap, PseudoTrap, SingularGeometryError,
                           TensorTrap, gradient, hessian, make_configuration, potential_energy)
from kinklab.statics import SeedSpec, make_seed


def random_config(rng, n, planar=False, species=None):
    pos = np.column_stack([np.sort(rng.uniform(-3, 3, n)) + np.arange(n) * 0.5,
                           rng.normal(0, 0.3, n), np.zeros(n) if planar else rng.normal(0, 0.3, n)])
    return make_configuration(pos, species, planar=planar)


def fd_gradient(config, trap, h=1e-6):
    x = config.flat()
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (potential_energy(config.with_flat(x + e), trap)
                - potential_energy(config.with_flat(x - e), trap)) / (2 * h)
    return g


def flat_gradient(config, trap):
    return gradient(config, trap)[:, config.mask].ravel()


def fd_hessian(config, trap, h=1e-5):
    x = config.flat()
    cols = []
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((flat_gradient(config.with_flat(x + e), trap)
                     - flat_gradient(config.with_flat(x - e), trap)) / (2 * h))
    return np.array(cols).T


@pytest.mark.parametrize("planar", [True, False])
def test_gradient_matches_finite_differences(planar):
    rng = np.random.default_rng(0)
    cfg = random_config(rng, 8, planar)
    trap = PseudoTrap(12.0, 20.0)
    g = flat_gradient(cfg, trap)
    rel = np.linalg.norm(g - fd_gradient(cfg, trap)) / np.linalg.norm(g)
    assert rel < 1e-6


@pytest.mark.parametrize("planar", [True, False])
def test_hessian_matches_finite_differences(planar):
    rng = np.random.default_rng(1)
    species = [IonSpecies(1.0)] * 3 + [IonSpecies(1.7, 1.0, False)] + [IonSpecies(1.0)] * 3
    cfg = random_config(rng, 7, planar, species)
    trap = PseudoTrap(9.0, 11.0)
    h = hessian(cfg, trap)
    rel = np.linalg.norm(h - fd_hessian(cfg, trap)) / np.linalg.norm(h)
    assert rel < 1e-6
    assert np.allclose(h, h.T)


def test_evaluator_agrees_with_functions():
    rng = np.random.default_rng(2)
    cfg = random_config(rng, 6)
    trap = PseudoTrap(10.0, 15.0)
    ev = Evaluator(cfg, trap)
    x = cfg.flat()
    assert ev.energy(x) == pytest.approx(potential_energy(cfg, trap), rel=1e-13)
    assert np.allclose(ev.gradient(x), flat_gradient(cfg, trap), atol=1e-12)
    assert np.allclose(ev.hessian(x), hessian(cfg, trap), atol=1e-10)


def test_parameter_derivative_matches_finite_difference():
    rng = np.random.default_rng(3)
    cfg = random_config(rng, 5)
    trap = PseudoTrap(10.0, 15.0)
    ev = Evaluator(cfg, trap)
    h = 1e-6
    # gamma_y varies at fixed w_z / w_y; ratio varies at fixed gamma_y
    for name, p0, make in (("gamma_y", trap.gamma_y, lambda g: PseudoTrap.from_ratio(g, trap.ratio)),
                           ("ratio", trap.ratio, lambda r: PseudoTrap.from_ratio(trap.gamma_y, r))):
        up = Evaluator(cfg, make(p0 + h)).gradient(cfg.flat())
        dn = Evaluator(cfg, make(p0 - h)).gradient(cfg.flat())
        assert np.allclose(ev.parameter_derivative(cfg.flat(), name), (up - dn) / (2 * h),
                           atol=1e-7)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 9), st.integers(0, 10_000))
def test_energy_invariant_under_ion_relabelling(n, seed):
    rng = np.random.default_rng(seed)
    cfg = random_config(rng, n)
    trap = PseudoTrap(5.0, 7.0)
    perm = rng.permutation(n)
    shuffled = make_configuration(cfg.positions[perm])
    assert potential_energy(shuffled, trap) == pytest.approx(potential_energy(cfg, trap),
                                                             rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 9), st.integers(0, 10_000))
def test_energy_invariant_under_trap_reflections(n, seed):
    rng = np.random.default_rng(seed)
    cfg = random_config(rng, n)
    trap = PseudoTrap(5.0, 7.0)
    e0 = potential_energy(cfg, trap)
    for sign in ([-1, 1, 1], [1, -1, 1], [1, 1, -1]):
        assert potential_energy(cfg.with_positions(cfg.positions * sign), trap) == \
            pytest.approx(e0, rel=1e-12)


def test_coincident_ions_are_rejected():
    cfg = make_configuration([[0, 0, 0], [0, 0, 0]])
    with pytest.raises(SingularGeometryError):
        potential_energy(cfg, PseudoTrap(2.0, 3.0))


def test_invalid_species_and_trap():
    with pytest.raises(ValueError):
        IonSpecies(-1.0)
    with pytest.raises(ValueError):
        PseudoTrap(-1.0, 2.0)


def test_single_ion_energy_is_the_trap_term():
    cfg = make_configuration([[0.3, -0.2, 0.1]])
    trap = PseudoTrap(4.0, 9.0)
    expected = 0.5 * (0.3**2 + 4.0 * 0.2**2 + 9.0 * 0.1**2)
    assert potential_energy(cfg, trap) == pytest.approx(expected, rel=1e-14)


def test_ratio_constructor_round_trip():
    trap = PseudoTrap.from_ratio(121.0, 1.047)
    assert trap.ratio == pytest.approx(1.047, rel=1e-14)
    assert trap.gamma_z == pytest.approx(121.0 * 1.047**2)


def test_paul_static_matrix_symmetric():
    t = PaulTrap(0.000328, -0.0002, 0.0019, 0.286)
    m = t.static_matrix()
    assert np.allclose(m, m.T)


def test_tensor_trap_reduces_to_pseudo_for_reference_species():
    n = 6
    pseudo = PseudoTrap(30.0, 40.0)
    cfg = make_seed(SeedSpec("zigzag", n, planar=False), pseudo)
    tensor = TensorTrap.from_arrays(np.diag([1.0, 30.0, 40.0]))
    assert potential_energy(cfg, tensor) == pytest.approx(potential_energy(cfg, pseudo),
                                                          rel=1e-12)
    assert np.allclose(gradient(cfg, tensor), gradient(cfg, pseudo), atol=1e-12)
