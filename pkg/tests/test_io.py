import json

import numpy as np
import pytest

from kinklab import io
from kinklab.dynamics import excite_mode, integrate
from kinklab.model import IonSpecies, PaulTrap, PseudoTrap, make_configuration
from kinklab.modes import normal_modes
from kinklab.statics import SeedSpec, make_seed, relax


@pytest.fixture(scope="module")
def zigzag():
    trap = PseudoTrap(30.0, 60.0)
    cp = relax(make_seed(SeedSpec("zigzag", 8, planar=False), trap), trap, method="lbfgs")
    return trap, cp


@pytest.mark.parametrize("trap", [PseudoTrap(12.5, 50.0), PaulTrap(0.000328, -0.0002, 0.0019, 0.286)])
def test_trap_round_trip(trap):
    assert io.trap_from_dict(json.loads(io.dumps(io.trap_to_dict(trap)))) == trap


def test_unknown_trap_model_is_rejected():
    with pytest.raises(ValueError):
        io.trap_from_dict({"model": "magnetic"})


def test_configuration_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    species = [IonSpecies(1.0, 1.0, True)] * 4 + [IonSpecies(1.6666666666666667, 1.0, False)]
    cfg = make_configuration(rng.normal(size=(5, 3)), species)
    back = io.read_config_csv(io.write_config_csv(tmp_path / "c.csv", cfg))
    assert np.array_equal(back.positions, cfg.positions)
    assert back.species == cfg.species
    assert back.dof_mask == cfg.dof_mask


def test_planar_configuration_is_detected(tmp_path):
    pos = np.zeros((3, 3))
    pos[:, 0] = [-1.0, 0.0, 1.0]
    cfg = make_configuration(pos, planar=True)
    back = io.read_config_csv(io.write_config_csv(tmp_path / "c.csv", cfg))
    assert back.dof_mask == (True, True, False)


def test_critical_point_json_round_trip(tmp_path, zigzag):
    trap, cp = zigzag
    path = io.write_json(tmp_path / "cp.json", io.critical_point_to_dict(cp, normal_modes(cp)))
    doc = io.read_json(path)
    assert doc["type"] == "critical_point"
    back = io.critical_point_from_dict(doc)
    assert back.trap == trap
    assert np.array_equal(back.config.positions, cp.config.positions)
    assert back.n_negative == cp.n_negative
    assert back.energy == pytest.approx(cp.energy, rel=1e-14)
    assert len(doc["spectrum"]["frequencies"]) == 3 * cp.config.n


def test_trajectory_csv_round_trip(tmp_path, zigzag):
    trap, cp = zigzag
    tj = integrate(excite_mode(cp, normal_modes(cp), 2, 0.01), trap, 5.0, stride=10)
    csv_path, meta_path = io.write_trajectory(tmp_path / "t.csv", tj)
    times, pos, vel = io.read_trajectory(csv_path)
    assert np.array_equal(times, tj.times)
    assert np.array_equal(pos, tj.positions)
    assert np.array_equal(vel, tj.velocities)
    meta = io.read_json(meta_path)
    assert meta["type"] == "trajectory" and meta["samples"] == len(tj.times)


def test_observation_csv_round_trip_in_micrometres(tmp_path):
    uv = np.array([[1.5e-6, -2.25e-6], [0.0, 3.0e-6]])
    path = io.write_observation_csv(tmp_path / "o.csv", uv)
    assert io.read_csv(path)[0]["u"] == "1.5"
    assert np.allclose(io.read_observation_csv(path), uv, rtol=1e-15, atol=0)


def test_json_handles_numpy_and_nan():
    doc = json.loads(io.dumps({"a": np.arange(3), "b": np.float64(np.nan), "c": np.int64(4)}))
    assert doc["a"] == [0, 1, 2] and np.isnan(doc["b"]) and doc["c"] == 4
