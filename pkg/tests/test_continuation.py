import numpy as np
import pytest

from kinklab.continuation import (Family, audit_event, branch_switch, index_audit,
                                  trace_branch)
from kinklab.model import PseudoTrap
from kinklab.statics import SeedSpec, classify, make_seed, relax


def test_two_ion_transverse_bifurcation_is_at_gamma_one():
    # the pair becomes unstable transversally at gamma_y = 2 / r^3 = 1
    trap = PseudoTrap(2.0, 8.0)
    cp = classify(make_seed(SeedSpec("chain", 2), trap), trap)
    br = trace_branch(cp, trap, "gamma_y", 0.5)
    assert len(br.events) == 1
    assert br.events[0].parameter == pytest.approx(1.0, abs=1e-5)
    assert br.events[0].kind == "pitchfork"


def test_three_ion_zigzag_threshold():
    # the zigzag mode (0.5, -1, 0.5) of three ions at x = 0, +-(5/4)^(1/3)
    # goes soft at gamma_y = 12/5
    trap = PseudoTrap(4.0, 16.0)
    cp = classify(make_seed(SeedSpec("chain", 3), trap), trap)
    br = trace_branch(cp, trap, "gamma_y", 1.0)
    assert br.events[0].parameter == pytest.approx(12 / 5, abs=1e-5)


def test_pitchfork_index_balance_and_children():
    # (two ions are a degenerate case: at gamma_y = 1 the trap is isotropic in
    # the plane and the pair can rotate freely, so three ions are used)
    trap = PseudoTrap(4.0, 16.0)
    cp = classify(make_seed(SeedSpec("chain", 3), trap), trap)
    ev = trace_branch(cp, trap, "gamma_y", 1.0).events[0]
    kids = branch_switch(ev, trap, "gamma_y")
    assert len(kids) == 2
    assert all(k.stable for k in kids)
    assert audit_event(ev, trap, "gamma_y").balanced


def test_fold_index_balance():
    trap = PseudoTrap(90.0, 360.0)
    d = relax(make_seed(SeedSpec("displaced_kink", 31, offset=1), trap), trap, method="lbfgs")
    ev = trace_branch(d, trap, "gamma_y", 110.0).events[0]
    assert ev.kind == "saddle_node"
    a = audit_event(ev, trap, "gamma_y")
    assert a.balanced, a.message


def test_index_audit_detects_imbalance():
    trap = PseudoTrap(2.0, 8.0)
    cp = classify(make_seed(SeedSpec("chain", 2), trap), trap)
    assert not index_audit([cp], []).balanced
    assert index_audit([cp], [cp]).balanced


def test_branch_samples_are_monotone_and_continuous():
    trap = PseudoTrap(120.0, 480.0)
    cp = classify(make_seed(SeedSpec("chain", 11), trap), trap)
    br = trace_branch(cp, trap, "gamma_y", 20.0)
    v = br.values
    assert np.all(np.diff(v) < 0)
    assert v[0] == pytest.approx(120.0) and v[-1] == pytest.approx(20.0)
    assert all(c.grad_norm < 1e-8 for c in br.points)


def test_family_validation():
    with pytest.raises(ValueError):
        Family("temperature", PseudoTrap(1.0, 2.0))
    with pytest.raises(ValueError):
        Family("mass_ratio", PseudoTrap(1.0, 2.0))


def test_ratio_family_moves_gamma_z_only():
    fam = Family("ratio", PseudoTrap.from_ratio(50.0, 1.2))
    cfg = make_seed(SeedSpec("chain", 3, planar=False), fam.trap)
    _, trap = fam.at(1.1, cfg)
    assert trap.gamma_y == 50.0 and trap.ratio == pytest.approx(1.1)
