import numpy as np
import pytest

from kinklab.model import IonSpecies, PseudoTrap
from kinklab.pn_landscape import (kink_rest_energy, kink_walls, mass_defect_landscape,
                                  pn_extract, prfo_saddle, two_kink_analysis)
from kinklab.model import Evaluator
from kinklab.statics import SeedSpec, make_seed
from kinklab.units import experiment_units


def planar(g):
    return PseudoTrap(g, 4 * g)


def test_only_the_centre_site_exists_near_the_window_top():
    land = pn_extract(planar(100.0), 31, "odd", max_offset=3)
    assert [s.offset for s in land.existing] == [0]


def test_landscape_inside_the_window():
    land = pn_extract(planar(90.0), 31, "odd", max_offset=2)
    e = {s.offset: s.energy for s in land.existing}
    assert sorted(e) == [-2, -1, 0, 1, 2]
    # the centred kink is a local maximum of the site energies here
    assert e[0] > e[1] > e[2]
    assert e[1] == pytest.approx(e[-1], abs=1e-9)
    for b in land.barriers:
        assert b.n_negative == 1
        assert b.energy > max(e[b.sites[0]], e[b.sites[1]])


def test_landscape_rows_and_units():
    land = pn_extract(planar(90.0), 31, "odd", max_offset=1, units=experiment_units())
    rows = land.rows()
    assert [r["offset"] for r in rows] == [-1, 0, 1]
    assert land.in_kT(land.site(0).energy) > 0


def test_prfo_converges_to_an_index_one_saddle():
    # three ions just below the zigzag threshold 12/5: the chain is an index-1 saddle
    trap = PseudoTrap(2.3, 9.2)
    seed = make_seed(SeedSpec("chain", 3), trap)
    pos = seed.positions.copy()
    pos[:, 1] += np.array([0.01, -0.02, 0.015])
    pos[:, 0] += np.array([0.01, 0.0, -0.02])
    ev = Evaluator(seed, trap)
    x = prfo_saddle(ev, seed.with_positions(pos).flat())
    h = np.linalg.eigvalsh(ev.hessian(x))
    assert np.linalg.norm(ev.gradient(x)) < 1e-8
    assert np.sum(h < 0) == 1


def test_kink_walls_locates_sign_changes():
    n = 10
    x = np.arange(n, dtype=float)
    y = 0.3 * (-1.0) ** np.arange(n)
    y[6:] *= -1
    walls = kink_walls(np.column_stack([x, y, np.zeros(n)]))
    assert walls == pytest.approx([5.5])


def test_blurred_kink_energy_is_reproducible():
    trap = PseudoTrap.from_ratio(121.0, 1.047)
    assert kink_rest_energy(trap, 50, "blurred") == pytest.approx(0.1265136, abs=1e-6)


def test_two_kink_interaction_decreases_with_separation():
    # planar N = 31 at gamma_y = 75: several distinct two-kink states
    ana = two_kink_analysis(planar(75.0), 31, separations=range(2, 12), planar=True,
                            kink_type="odd", barrier=False)
    assert len(ana.separations) >= 3
    assert np.all(np.diff(ana.separations) > 0)
    assert np.all(np.diff(ana.interaction) < 0)


def test_heavy_defect_pins_the_kink_harder():
    trap = PseudoTrap.from_ratio(121.0, 1.047)
    scan = mass_defect_landscape(trap, 50, IonSpecies(1.0, 1.0, False), 40 / 24)
    rel = scan.relative_displacement
    assert scan.mass_ratios[-1] == pytest.approx(40 / 24)
    assert rel[0] == pytest.approx(1.0, abs=0.1)
    assert rel[-1] / rel[0] > 1.8
