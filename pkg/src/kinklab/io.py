"""Plain-text serialization: CSV tables and JSON documents.

JSON documents carry a ``"type"`` field so they can be read back without
knowing the producer; numpy arrays are stored as nested lists.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

from .model import (Configuration, IonSpecies, PaulTrap, PseudoTrap, TensorTrap)
from .statics import CriticalPoint, classify
from .units import UnitSystem


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    if is_dataclass(o) and not isinstance(o, type):
        return asdict(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(obj, **kw) -> str:
    return json.dumps(obj, default=_jsonable, allow_nan=True, **kw)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj, indent=2) + "\n")
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> Path:
    path = Path(path)
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(r.get(k)) for k in columns})
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer, np.bool_)):
        return v.item()
    return v


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- traps and units ----------------------------------------------------------------

def trap_to_dict(trap) -> dict:
    if isinstance(trap, PseudoTrap):
        return {"model": "pseudo", "gamma_y": trap.gamma_y, "gamma_z": trap.gamma_z}
    if isinstance(trap, PaulTrap):
        return {"model": "paul", "a_x": trap.a_x, "a_y": trap.a_y, "a_yz": trap.a_yz,
                "q": trap.q}
    if isinstance(trap, TensorTrap):
        return {"model": "tensor", "reference": trap.reference,
                "matrices": [{"species": list(k), "matrix": m} for k, m in trap.matrices]}
    raise TypeError(f"unknown trap type {type(trap).__name__}")


def trap_from_dict(d: dict):
    model = d.get("model")
    if model == "pseudo":
        return PseudoTrap(float(d["gamma_y"]), float(d["gamma_z"]))
    if model == "paul":
        return PaulTrap(float(d["a_x"]), float(d["a_y"]), float(d["a_yz"]), float(d["q"]))
    if model == "tensor":
        return TensorTrap.from_arrays(d["reference"], {tuple(m["species"]): m["matrix"]
                                                       for m in d.get("matrices", [])})
    raise ValueError(f"unknown trap model {model!r}")


def units_to_dict(units: UnitSystem | None) -> dict | None:
    return None if units is None else asdict(units)


def units_from_dict(d: dict | None) -> UnitSystem | None:
    return None if d is None else UnitSystem(**d)


# --- configurations -----------------------------------------------------------------

CONFIG_COLUMNS = ["index", "x", "y", "z", "mass_ratio", "charge_ratio", "bright"]


def config_rows(config: Configuration) -> list[dict]:
    return [{"index": i, "x": p[0], "y": p[1], "z": p[2], "mass_ratio": s.mass_ratio,
             "charge_ratio": s.charge_ratio, "bright": int(s.bright)}
            for i, (p, s) in enumerate(zip(config.positions, config.species))]


def write_config_csv(path, config: Configuration) -> Path:
    return write_csv(path, config_rows(config), CONFIG_COLUMNS)


def read_config_csv(path, planar: bool | None = None) -> Configuration:
    rows = sorted(read_csv(path), key=lambda r: int(r["index"]))
    pos = np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows])
    species = [IonSpecies(float(r["mass_ratio"]), float(r["charge_ratio"]),
                          str(r["bright"]).strip().lower() in ("1", "true"))
               for r in rows]
    if planar is None:
        planar = bool(np.all(pos[:, 2] == 0.0))
    return Configuration(pos, tuple(species), (True, True, not planar))


def config_to_dict(config: Configuration, trap=None, units: UnitSystem | None = None) -> dict:
    return {"type": "configuration",
            "dof_mask": list(config.dof_mask),
            "ions": config_rows(config),
            "trap": None if trap is None else trap_to_dict(trap),
            "units": units_to_dict(units)}


def config_from_dict(d: dict) -> tuple[Configuration, object, UnitSystem | None]:
    rows = sorted(d["ions"], key=lambda r: int(r["index"]))
    pos = np.array([[r["x"], r["y"], r["z"]] for r in rows], dtype=float)
    species = tuple(IonSpecies(float(r["mass_ratio"]), float(r["charge_ratio"]),
                               bool(r["bright"])) for r in rows)
    cfg = Configuration(pos, species, tuple(d.get("dof_mask", (True, True, True))))
    trap = trap_from_dict(d["trap"]) if d.get("trap") else None
    return cfg, trap, units_from_dict(d.get("units"))


def critical_point_to_dict(cp: CriticalPoint, spectrum=None,
                           units: UnitSystem | None = None) -> dict:
    out = {"type": "critical_point",
           "energy": cp.energy, "grad_norm": cp.grad_norm,
           "n_negative": cp.n_negative, "local_index": cp.local_index,
           "stable": cp.stable, "at_bifurcation": cp.at_bifurcation,
           "zero_threshold": cp.zero_threshold, "iterations": cp.iterations,
           "symmetry": asdict(cp.symmetry),
           "eigenvalues": cp.eigenvalues,
           "config": config_to_dict(cp.config, cp.trap, units)}
    if spectrum is not None:
        out["spectrum"] = spectrum_to_dict(spectrum)
    return out


def critical_point_from_dict(d: dict) -> CriticalPoint:
    cfg, trap, _ = config_from_dict(d["config"])
    if trap is None:
        raise ValueError("critical point document has no trap")
    return classify(cfg, trap, d.get("zero_threshold", 1e-8))


# --- spectra, branches, landscapes, trajectories --------------------------------------

def spectrum_rows(spectrum) -> list[dict]:
    return [{"mode": j, "eigenvalue": lam, "frequency": w, "ipr": p,
             "localized": int(p < spectrum.n_ions / 4)}
            for j, (lam, w, p) in enumerate(zip(spectrum.eigenvalues, spectrum.frequencies,
                                                spectrum.ipr))]


def spectrum_to_dict(spectrum) -> dict:
    return {"type": "spectrum", "eigenvalues": spectrum.eigenvalues,
            "frequencies": spectrum.frequencies, "ipr": spectrum.ipr,
            "omega_low": spectrum.omega_low, "low_index": spectrum.low_index,
            "vectors": spectrum.mode_matrix.T}


def branch_rows(branch) -> list[dict]:
    rows = []
    for p, cp in branch.samples:
        rows.append({branch.parameter: p, "energy": cp.energy, "n_negative": cp.n_negative,
                     "local_index": cp.local_index, "min_eigenvalue": cp.min_eigenvalue,
                     "stable": int(cp.stable)})
    return rows


def event_to_dict(ev) -> dict:
    return {"parameter": ev.parameter, "kind": ev.kind, "bracket": list(ev.bracket),
            "n_negative_left": ev.n_negative_left, "n_negative_right": ev.n_negative_right,
            "soft_mode": ev.soft_mode, "soft_symmetry": ev.soft_symmetry,
            "index_balance": ev.index_balance, "note": ev.note,
            "config": config_to_dict(ev.config)}


def write_branch(path, branch, trap=None, configurations: bool = True) -> tuple[Path, Path]:
    """Branch CSV plus a JSON sidecar with events (and sample configurations)."""
    path = Path(path)
    write_csv(path, branch_rows(branch),
              [branch.parameter, "energy", "n_negative", "local_index", "min_eigenvalue",
               "stable"])
    side = {"type": "branch", "parameter": branch.parameter, "terminated": branch.terminated,
            "csv": path.name, "trap": None if trap is None else trap_to_dict(trap),
            "events": [event_to_dict(e) for e in branch.events]}
    if configurations:
        side["samples"] = [{"value": p, "positions": cp.config.positions}
                           for p, cp in branch.samples]
    return path, write_json(path.with_suffix(".json"), side)


def landscape_to_dict(land) -> dict:
    d = {"type": "pn_landscape", "n": land.n, "kink_type": land.kink_type,
         "trap": trap_to_dict(land.trap), "ground_energy": land.ground_energy,
         "units": units_to_dict(land.units),
         "sites": [{"offset": s.offset, "energy": s.energy, "exists": s.exists,
                    "stable": s.stable, "position": s.position} for s in land.sites],
         "barriers": [{"sites": list(b.sites), "energy": b.energy, "n_negative": b.n_negative,
                       "method": b.method} for b in land.barriers]}
    if land.units is not None and land.units.doppler_temperature is not None:
        for s in d["sites"]:
            s["energy_kT"] = float(land.in_kT(s["energy"])) if s["exists"] else None
        for b in d["barriers"]:
            b["energy_kT"] = float(land.in_kT(b["energy"]))
    return d


def write_landscape(path, land) -> tuple[Path, Path]:
    path = Path(path)
    write_csv(path, land.rows(), ["offset", "E_min", "E_saddle_left", "E_saddle_right",
                                  "stable"])
    return path, write_json(path.with_suffix(".json"), landscape_to_dict(land))


def trajectory_rows(traj, stride: int = 1) -> list[dict]:
    rows = []
    for k in range(0, len(traj.times), stride):
        for i in range(traj.positions.shape[1]):
            r = {"step": k, "time": traj.times[k], "ion": i}
            for a, c in enumerate("xyz"):
                r[c] = traj.positions[k, i, a]
                r["v" + c] = traj.velocities[k, i, a]
            rows.append(r)
    return rows


def write_trajectory(path, traj, stride: int = 1) -> tuple[Path, Path]:
    path = Path(path)
    write_csv(path, trajectory_rows(traj, stride),
              ["step", "time", "ion", "x", "y", "z", "vx", "vy", "vz"])
    meta = {"type": "trajectory", "csv": path.name, "timestep": traj.timestep,
            "scheme": traj.scheme, "samples": len(traj.times), "stride": stride,
            "energy_drift": traj.energy_drift,
            "trap": None if traj.trap is None else trap_to_dict(traj.trap),
            "template": config_to_dict(traj.template), **traj.meta}
    if traj.energies is not None:
        meta["energies"] = traj.energies[::stride]
    return path, write_json(path.with_suffix(".json"), meta)


def read_trajectory(path):
    """Positions and velocities (T, N, 3) and times from a trajectory CSV."""
    rows = read_csv(path)
    steps = sorted({int(r["step"]) for r in rows})
    n = max(int(r["ion"]) for r in rows) + 1
    idx = {s: k for k, s in enumerate(steps)}
    pos = np.zeros((len(steps), n, 3))
    vel = np.zeros_like(pos)
    times = np.zeros(len(steps))
    for r in rows:
        k, i = idx[int(r["step"])], int(r["ion"])
        times[k] = float(r["time"])
        pos[k, i] = [float(r["x"]), float(r["y"]), float(r["z"])]
        vel[k, i] = [float(r["vx"]), float(r["vy"]), float(r["vz"])]
    return times, pos, vel


def read_observation_csv(path) -> np.ndarray:
    """Camera-plane coordinates (metres) from a CSV with ``u, v`` columns in µm."""
    rows = read_csv(path)
    return np.array([[float(r["u"]), float(r["v"])] for r in rows]) * 1e-6


def write_observation_csv(path, coords: np.ndarray) -> Path:
    c = np.asarray(coords) * 1e6
    return write_csv(path, [{"u": u, "v": v} for u, v in c], ["u", "v"])
