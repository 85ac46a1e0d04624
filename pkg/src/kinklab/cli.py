"""Command-line front end.

Every subcommand writes file artifacts plus a ``manifest.json`` describing
the run (resolved parameters, inputs, outputs with checksums, seeds,
version, timing) and prints a one-line summary to stdout.  Exit codes: 0 on
success, 1 on a computational failure, 2 on a usage error; errors are also
reported as one JSON object on stderr.

Parameter precedence: built-in defaults < ``--config`` file < explicit
flags.  The config file is TOML; top-level keys apply to every subcommand
and a ``[<subcommand>]`` table overrides them.  A manifest JSON written by a
previous run is accepted as a config file, which reruns it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .continuation import Branch, trace_branch
from .dynamics import excite_mode, integrate, thermal_state
from .imaging import CameraModel, project, render, spot_metrics
from .model import IonSpecies, PseudoTrap
from .modes import normal_modes
from .pn_landscape import KINK_TYPES, pn_extract
from .report import SECTIONS, SUITES, run_suite
from .statics import SaddleWarning, SeedSpec, classify, make_seed, relax
from .trapfit import PARAM_NAMES, FitParameters, Observation, fit
from .units import experiment_units

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

log = logging.getLogger("kinklab")

SEED_KINDS = ("chain", "zigzag", "odd_kink", "extended_kink_seed", "two_kink",
              "displaced_kink", "dark_ion")

# Built-in defaults per subcommand; "common" applies to all of them.
DEFAULTS = {
    "common": {"out": ".", "jobs": None, "seed": 0, "log_level": "WARNING"},
    "crystal": {"n": 31, "gamma_y": 100.0, "gamma_z": None, "ratio": 2.0, "planar": True,
                "seed_kind": "odd_kink", "offset": 0, "width": 2, "z_kick": 0.0,
                "ion_index": None, "mass": 1.0, "method": "lbfgs"},
    "relax": {},
    "modes": {"input": None},
    "sweep": {"param": "gamma_y", "start": 160.0, "stop": 20.0, "branch": ["chain"],
              "step": None, "seed_at": None},
    "pn": {"kink_type": "odd", "max_offset": 3, "scan": None, "units": "experiment"},
    "simulate": {"input": None, "excite": None, "energy": 1.0, "thermal": None,
                 "periods": 20.0, "timestep": None, "stride": 10, "ensemble": 1,
                 "damping": 0.0},
    "render": {"input": None, "azimuth": 0.0, "elevation": 0.0, "pixel_size": 0.8,
               "psf_sigma": None, "shape": [128, 512], "length_unit": None, "every": 1},
    "fit": {"obs": [], "n_ions": None, "fit_seed_kind": "zigzag", "a_x": 0.000328,
            "a_y": -0.0002, "a_yz": 0.0019, "q": 0.286, "azimuth": 0.0,
            "elevation": -45.0, "guess": None, "freeze": [], "max_nfev": 200},
    "report": {"suite": "paper", "sections": None, "strict": False},
}
CRYSTAL_COMMANDS = ("relax", "modes", "sweep", "pn", "simulate")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- argument parsing ---------------------------------------------------------------

def _add_common(p):
    g = p.add_argument_group("run")
    g.add_argument("--config", help="TOML config file or manifest JSON of an earlier run")
    g.add_argument("--out", help="output directory (default: current directory)")
    g.add_argument("--jobs", type=int,
                   help="worker processes for independent work items (default: $KINKLAB_JOBS or 1)")
    g.add_argument("--seed", type=int, help="random seed (default 0)")
    g.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _add_crystal(p):
    g = p.add_argument_group("crystal")
    g.add_argument("--n", type=int, help="number of ions")
    g.add_argument("--gamma-y", type=float, help="radial strength gamma_y (units of w_x^2)")
    g.add_argument("--gamma-z", type=float, help="second radial strength (overrides --ratio)")
    g.add_argument("--ratio", type=float, help="w_z / w_y (default 2)")
    g.add_argument("--planar", action=argparse.BooleanOptionalAction,
                   help="restrict to the x-y plane (default: planar)")
    g.add_argument("--seed-kind", choices=SEED_KINDS)
    g.add_argument("--offset", type=int, help="kink offset in sites")
    g.add_argument("--width", type=int, help="flipped block length of a two-kink seed")
    g.add_argument("--z-kick", type=float, help="transverse kick of the kink core")
    g.add_argument("--ion-index", type=int, help="index of the defect ion")
    g.add_argument("--mass", type=float, help="mass ratio of the defect ion")
    g.add_argument("--method", choices=["damped", "lbfgs"], help="relaxation method")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kinklab", description="Structural kinks in ion Coulomb crystals.")
    parser.add_argument("--version", action="version", version=f"kinklab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("relax", help="relax a seed to a critical point")
    _add_crystal(p)
    _add_common(p)

    p = sub.add_parser("modes", help="normal modes of a relaxed configuration")
    _add_crystal(p)
    p.add_argument("--input", help="critical point JSON (otherwise the seed is relaxed)")
    _add_common(p)

    p = sub.add_parser("sweep", help="trace branches and locate bifurcations")
    _add_crystal(p)
    p.add_argument("--param", choices=["gamma_y", "ratio", "mass_ratio"])
    p.add_argument("--from", dest="start", type=float, help="start value of the parameter")
    p.add_argument("--to", dest="stop", type=float, help="end value of the parameter")
    p.add_argument("--branch", nargs="+", choices=SEED_KINDS,
                   help="seed kinds to trace (one work item each)")
    p.add_argument("--step", type=float, help="initial continuation step")
    p.add_argument("--seed-at", type=float,
                   help="relax the seed at this value (default: --from) and trace towards "
                        "both ends")
    _add_common(p)

    p = sub.add_parser("pn", help="Peierls-Nabarro landscape of a kink")
    _add_crystal(p)
    p.add_argument("--kink-type", choices=sorted(KINK_TYPES))
    p.add_argument("--max-offset", type=int)
    p.add_argument("--scan", type=float, nargs="+",
                   help="several gamma_y values (one work item each)")
    p.add_argument("--units", choices=["experiment", "none"],
                   help="attach the experimental unit system (energies in kT)")
    _add_common(p)

    p = sub.add_parser("simulate", help="molecular dynamics from a relaxed configuration")
    _add_crystal(p)
    p.add_argument("--input", help="critical point JSON (otherwise the seed is relaxed)")
    p.add_argument("--excite", type=int, help="excite this mode (default: the low mode)")
    p.add_argument("--energy", type=float, help="excitation energy in kT (default 1)")
    p.add_argument("--thermal", type=float,
                   help="thermal start at this multiple of the Doppler temperature")
    p.add_argument("--periods", type=float, help="duration in axial periods")
    p.add_argument("--timestep", type=float)
    p.add_argument("--stride", type=int, help="keep every k-th step")
    p.add_argument("--ensemble", type=int, help="number of independent thermal runs")
    p.add_argument("--damping", type=float)
    _add_common(p)

    p = sub.add_parser("render", help="time-integrated camera image")
    p.add_argument("--input", help="trajectory CSV or critical point JSON")
    p.add_argument("--azimuth", type=float, help="degrees")
    p.add_argument("--elevation", type=float, help="degrees")
    p.add_argument("--pixel-size", type=float, help="micrometres")
    p.add_argument("--psf-sigma", type=float, help="micrometres (default: one pixel)")
    p.add_argument("--shape", type=int, nargs=2, metavar=("ROWS", "COLS"))
    p.add_argument("--length-unit", type=float,
                   help="metres per model length unit (default: experimental units)")
    p.add_argument("--every", type=int, help="use every k-th trajectory sample")
    _add_common(p)

    p = sub.add_parser("fit", help="fit trap and camera parameters to observed frames")
    p.add_argument("--obs", "--frames", dest="obs", nargs="+",
                   help="CSV files with u, v columns in micrometres (one per frame)")
    p.add_argument("--n-ions", type=int, help="ions per frame including dark ones")
    p.add_argument("--fit-seed-kind", choices=["zigzag", "odd_kink", "chain"])
    for name in PARAM_NAMES:
        p.add_argument(f"--{name.replace('_', '-')}", type=float, help="initial guess")
    p.add_argument("--guess", nargs=6, type=float, metavar=tuple(n.upper() for n in PARAM_NAMES),
                   help="full initial guess vector (overrides the individual values)")
    p.add_argument("--freeze", nargs="*", choices=PARAM_NAMES)
    p.add_argument("--max-nfev", type=int)
    _add_common(p)

    p = sub.add_parser("report", help="recompute headline numbers and compare to reference")
    p.add_argument("--suite", choices=sorted(SUITES))
    p.add_argument("--sections", nargs="+", choices=sorted(SECTIONS))
    p.add_argument("--strict", action=argparse.BooleanOptionalAction,
                   help="exit 1 when a comparison fails")
    _add_common(p)
    return parser


def load_config(path) -> dict:
    """Flat parameter dict for one run from a TOML file or a manifest JSON."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        if doc.get("type") != "manifest":
            raise UsageError(f"{path} is not a run manifest")
        return {"__command__": doc["subcommand"], **doc["parameters"]}
    try:
        return tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"invalid config {path}: {exc}") from exc


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win)."""
    params = dict(DEFAULTS["common"])
    if command in CRYSTAL_COMMANDS:
        params.update(DEFAULTS["crystal"])
    params.update(DEFAULTS[command])
    if args.config:
        cfg = load_config(args.config)
        src = cfg.pop("__command__", command)
        if src != command:
            raise UsageError(f"manifest is for {src!r}, not {command!r}")
        top = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
        section = cfg.get(command, {})
        for k, v in {**top, **section}.items():
            key = k.replace("-", "_")
            if key not in params:
                raise UsageError(f"unknown config key {k!r} for {command}")
            params[key] = v
    for k, v in vars(args).items():
        if k in ("command", "config") or v is None:
            continue
        params[k] = v
    if params["jobs"] is None:
        params["jobs"] = int(os.environ.get("KINKLAB_JOBS", "1"))
    if params["jobs"] < 1:
        raise UsageError("--jobs must be at least 1")
    return params


# --- run bookkeeping ----------------------------------------------------------------

class Run:
    """Collects outputs and writes the manifest of one invocation."""

    MANIFEST = "manifest.json"

    def __init__(self, command: str, params: dict):
        self.command = command
        self.params = params
        self.out = Path(params["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: list[str] = []
        self.outputs: list[Path] = []
        self.counts: dict = {}
        self.t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        return self.out / name

    def json(self, name: str, doc: dict) -> Path:
        doc = {**doc, "manifest": self.MANIFEST}
        return self.add(io.write_json(self.path(name), doc))

    def add(self, *paths) -> Path:
        for p in paths:
            self.outputs.append(Path(p))
        return Path(paths[0])

    def manifest(self) -> Path:
        doc = {"type": "manifest", "subcommand": self.command,
               "parameters": self.params, "inputs": self.inputs,
               "outputs": [{"path": p.name, "sha256": _sha256(p)} for p in self.outputs],
               "seeds": {"seed": self.params.get("seed")},
               "software": {"kinklab": __version__, "python": platform.python_version(),
                            "numpy": np.__version__},
               "wall_clock_seconds": time.perf_counter() - self.t0,
               "counts": self.counts}
        return io.write_json(self.path(self.MANIFEST), doc)


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _pool_map(fn, items, jobs: int) -> list:
    """Ordered map, in worker processes when ``jobs > 1``."""
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# --- crystal helpers ----------------------------------------------------------------

def make_trap(p: dict, gamma_y: float | None = None) -> PseudoTrap:
    g = p["gamma_y"] if gamma_y is None else gamma_y
    if p.get("gamma_z") is not None:
        return PseudoTrap(g, p["gamma_z"])
    return PseudoTrap.from_ratio(g, p["ratio"])


def seed_spec(p: dict, kind: str | None = None) -> SeedSpec:
    kind = kind or p["seed_kind"]
    species = None
    if kind == "dark_ion":
        species = IonSpecies(p["mass"], 1.0, False)
    return SeedSpec(kind, p["n"], offset=p["offset"], width=p["width"],
                    index=p["ion_index"] if kind == "dark_ion" else None, species=species,
                    planar=p["planar"], z_kick=p["z_kick"])


def solve(p: dict, trap: PseudoTrap, kind: str | None = None):
    spec = seed_spec(p, kind)
    cfg = make_seed(spec, trap)
    if spec.kind == "chain":
        return classify(cfg, trap)  # the chain is an exact critical point
    return relax(cfg, trap, method=p["method"])


def _load_critical_point(path):
    from .io import critical_point_from_dict, read_json
    return critical_point_from_dict(read_json(path))


# --- subcommands --------------------------------------------------------------------

def cmd_relax(run: Run) -> str:
    p = run.params
    trap = make_trap(p)
    cp = solve(p, trap)
    run.json("critical_point.json", io.critical_point_to_dict(cp))
    run.add(io.write_config_csv(run.path("configuration.csv"), cp.config))
    run.counts["iterations"] = cp.iterations
    return (f"relax: E={cp.energy:.10g} n_negative={cp.n_negative} stable={cp.stable} "
            f"|grad|={cp.grad_norm:.2e}")


def _critical_point(run: Run):
    p = run.params
    if p.get("input"):
        run.inputs.append(str(p["input"]))
        return _load_critical_point(p["input"])
    return solve(p, make_trap(p))


def cmd_modes(run: Run) -> str:
    cp = _critical_point(run)
    sp = normal_modes(cp)
    run.add(io.write_csv(run.path("modes.csv"), io.spectrum_rows(sp),
                         ["mode", "eigenvalue", "frequency", "ipr", "localized"]))
    run.json("modes.json", {**io.spectrum_to_dict(sp),
                            "critical_point": io.critical_point_to_dict(cp)})
    w = "none" if sp.omega_low is None else f"{sp.omega_low:.6f}"
    return f"modes: {len(sp.eigenvalues)} modes, omega_low={w}, stable={cp.stable}"


def _sweep_item(item):
    p, kind = item
    p0 = p["start"] if p["seed_at"] is None else p["seed_at"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SaddleWarning)
        ion = None
        if p["param"] == "mass_ratio":
            if p["ion_index"] is None:
                raise UsageError("mass_ratio sweeps need --ion-index")
            ion = p["ion_index"]
            trap = make_trap(p)
            cp = solve({**p, "mass": p0}, trap, kind)
            cfg = cp.config.with_species(ion, IonSpecies(p0, 1.0, False))
            cp = classify(cfg, trap)
        elif p["param"] == "gamma_y":
            trap = make_trap(p, p0)
            cp = solve(p, trap, kind)
        else:
            trap = PseudoTrap.from_ratio(p["gamma_y"], p0)
            cp = solve(p, trap, kind)
        ends = [e for e in (p["start"], p["stop"]) if e != p0]
        parts = [trace_branch(cp, trap, p["param"], e, step=p["step"], ion_index=ion)
                 for e in ends]
    if len(parts) == 1:
        return parts[0], trap
    # seeded inside the range: join the two halves into one branch from start to stop
    a, b = parts
    joined = Branch(p["param"], a.samples[::-1] + b.samples[1:], a.events[::-1] + b.events,
                    a.family, "; ".join(t for t in (a.terminated, b.terminated) if t))
    return joined, trap


def cmd_sweep(run: Run) -> str:
    p = run.params
    kinds = list(p["branch"])
    results = _pool_map(_sweep_item, [(p, k) for k in kinds], p["jobs"])
    parts = []
    for kind, (branch, trap) in zip(kinds, results):
        run.add(*io.write_branch(run.path(f"branch_{kind}.csv"), branch, trap))
        run.counts[f"{kind}_samples"] = len(branch.samples)
        ev = ", ".join(f"{e.kind}@{e.parameter:.4f}" for e in branch.events) or "none"
        parts.append(f"{kind}: {ev}")
    return "sweep: " + "; ".join(parts)


def _pn_item(item):
    p, g = item
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SaddleWarning)
        units = experiment_units() if p["units"] == "experiment" else None
        defect = None
        if p["ion_index"] is not None and p["mass"] != 1.0:
            defect = (p["ion_index"], IonSpecies(p["mass"], 1.0, False))
        return pn_extract(make_trap(p, g), p["n"], p["kink_type"], p["max_offset"], units,
                          defect)


def cmd_pn(run: Run) -> str:
    p = run.params
    gammas = list(p["scan"] or [p["gamma_y"]])
    lands = _pool_map(_pn_item, [(p, g) for g in gammas], p["jobs"])
    parts = []
    for g, land in zip(gammas, lands):
        stem = f"pn_gamma{g:g}" if len(gammas) > 1 else "pn"
        csv_path, side = io.write_landscape(run.path(stem + ".csv"), land)
        doc = io.read_json(side)
        run.add(csv_path)
        run.json(side.name, doc)
        barrier = min((b.energy for b in land.barriers), default=float("nan"))
        parts.append(f"gamma_y={g:g}: {len(land.existing)} sites, lowest barrier "
                     f"{barrier:.6g}")
    return "pn: " + "; ".join(parts)


def _simulate_item(item):
    p, k, cp_doc = item
    from .io import critical_point_from_dict
    cp = critical_point_from_dict(cp_doc)
    trap = cp.trap
    sp = normal_modes(cp)
    kT = experiment_units().kT()
    if p["thermal"] is not None:
        state = thermal_state(cp, sp, p["thermal"] * kT, seed=p["seed"] + k)
    else:
        j = sp.low_index if p["excite"] is None else p["excite"]
        if j is None:
            raise RuntimeError("no localized low mode to excite; pass --excite")
        state = excite_mode(cp, sp, j, p["energy"] * kT)
    return integrate(state, trap, p["periods"] * 2 * np.pi, timestep=p["timestep"],
                     damping=p["damping"], stride=p["stride"])


def cmd_simulate(run: Run) -> str:
    p = run.params
    cp = _critical_point(run)
    if not cp.stable:
        raise RuntimeError(f"start configuration is not a minimum (n_negative={cp.n_negative})")
    members = p["ensemble"] if p["thermal"] is not None else 1
    doc = io.critical_point_to_dict(cp)
    trajs = _pool_map(_simulate_item, [(p, k, doc) for k in range(members)], p["jobs"])
    drift = []
    for k, tj in enumerate(trajs):
        name = "trajectory.csv" if members == 1 else f"trajectory_{k:03d}.csv"
        csv_path, side = io.write_trajectory(run.path(name), tj)
        run.add(csv_path)
        run.json(side.name, {**io.read_json(side), "member": k, "seed": p["seed"] + k})
        drift.append(tj.energy_drift)
    run.counts["samples"] = int(sum(len(t.times) for t in trajs))
    d = "n/a" if any(x is None for x in drift) else f"{max(drift):.2e}"
    return f"simulate: {members} run(s), {run.counts['samples']} samples, max energy drift {d}"


def cmd_render(run: Run) -> str:
    p = run.params
    if not p["input"]:
        raise UsageError("render needs --input")
    src_path = Path(p["input"])
    run.inputs.append(str(src_path))
    length = p["length_unit"] or experiment_units().length_unit
    if src_path.suffix == ".csv":
        _, pos, _ = io.read_trajectory(src_path)
        side = src_path.with_suffix(".json")
        bright = None
        if side.exists():
            cfg, _, _ = io.config_from_dict(io.read_json(side)["template"])
            bright = cfg.bright
        source = pos[::p["every"]]
    else:
        cp = _load_critical_point(src_path)
        source, bright = cp.config.positions[None], cp.config.bright
    pitch = p["pixel_size"] * 1e-6
    psf = None if p["psf_sigma"] is None else p["psf_sigma"] * 1e-6
    cam = CameraModel(p["azimuth"], p["elevation"], pitch, psf, tuple(p["shape"]))
    img = render(source, cam, length_scale=length, bright=bright)
    pgm, side = img.save(run.path("image.pgm"))
    run.add(pgm)
    run.json(side.name, io.read_json(side))
    centres = project(np.asarray(source).mean(axis=0)[np.asarray(
        bright if bright is not None else np.ones(source.shape[1], bool), bool)] * length, cam)
    spots = spot_metrics(img, centres)
    rows = [{"spot": i, "u_um": s.centroid[0] * 1e6, "v_um": s.centroid[1] * 1e6,
             "width_u_um": s.width[0] * 1e6, "width_v_um": s.width[1] * 1e6,
             "flux": s.flux, "overlapping": int(s.overlapping)} for i, s in enumerate(spots)]
    run.add(io.write_csv(run.path("spots.csv"), rows))
    return f"render: {len(source)} samples, {len(spots)} spots, total flux {img.total:.6g}"


def cmd_fit(run: Run) -> str:
    p = run.params
    if not p["obs"]:
        raise UsageError("fit needs --obs")
    frames = []
    for f in p["obs"]:
        run.inputs.append(str(f))
        uv = io.read_observation_csv(f)
        n = p["n_ions"] or len(uv)
        frames.append(Observation(uv, n, SeedSpec(p["fit_seed_kind"], n, planar=False,
                                                  z_kick=0.05 if "kink" in p["fit_seed_kind"]
                                                  else 0.0)))
    guess = FitParameters(*(p["guess"] or [p[k] for k in PARAM_NAMES]))
    res = fit(frames, guess, freeze=tuple(p["freeze"]), max_nfev=p["max_nfev"])
    run.counts["nfev"] = res.nfev
    doc = {"type": "fit", "parameters": dict(zip(PARAM_NAMES, res.params.vector())),
           "secular_frequencies_hz": (np.asarray(res.frequencies) / (2 * np.pi)).tolist(),
           "mean_residual_um": res.mean_residual * 1e6,
           "max_residual_um": res.max_residual * 1e6,
           "residuals_um": [r * 1e6 for r in res.residuals],
           "success": res.success, "message": res.message, **res.extra}
    run.json("fit.json", doc)
    if not res.success:
        raise RuntimeError(f"fit did not converge: {res.message}")
    return (f"fit: mean residual {res.mean_residual * 1e6:.3f} um over {len(frames)} frame(s), "
            f"nfev={res.nfev}")


def cmd_report(run: Run) -> str:
    p = run.params
    summary = run_suite(p["suite"], jobs=p["jobs"], sections=p["sections"])
    # timings go to the manifest so the report itself is reproducible
    run.counts["seconds"] = {s["name"]: s.pop("seconds") for s in summary["sections"]}
    summary.pop("seconds")
    run.json("report.json", summary)
    run.counts["checks"] = summary["n_checks"]
    line = (f"report[{p['suite']}]: {summary['n_checks'] - summary['n_failed']}/"
            f"{summary['n_checks']} checks passed")
    failed = [c["name"] for s in summary["sections"] for c in s["checks"] if not c["passed"]]
    if failed:
        line += " (failed: " + ", ".join(failed) + ")"
    if failed and p["strict"]:
        run.manifest()
        raise ComparisonFailure(line)
    return line


class ComparisonFailure(RuntimeError):
    pass


COMMANDS = {"relax": cmd_relax, "modes": cmd_modes, "sweep": cmd_sweep, "pn": cmd_pn,
            "simulate": cmd_simulate, "render": cmd_render, "fit": cmd_fit,
            "report": cmd_report}


def _error(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        params = resolve(args.command, args)
    except UsageError as exc:
        return _error("usage", str(exc), 2)
    logging.basicConfig(level=params["log_level"], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    run = Run(args.command, params)
    try:
        line = COMMANDS[args.command](run)
    except UsageError as exc:
        return _error("usage", str(exc), 2)
    except ComparisonFailure as exc:
        print(str(exc))
        return _error("comparison", str(exc), 1)
    except Exception as exc:  # noqa: BLE001 - reported as machine-readable error
        log.debug("failure", exc_info=True)
        return _error(type(exc).__name__, str(exc), 1)
    run.manifest()
    print(line)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
