"""JSON scenario configuration: defaults, provenance and validation.

A configuration has the sections ``mesh``, ``physics``, ``kinetics``,
``problem``, ``series``, ``initial``, ``solver`` and ``optimizer``.  Missing
keys take the defaults of :func:`default_config`; unknown keys are rejected.
Every validation failure raises :class:`ConfigError` naming the key path.
"""
from __future__ import annotations

import copy
import json
from dataclasses import fields
from pathlib import Path

import numpy as np

from .control import InitialState, ProblemSpec, Scenario
from .eutro import DAY, N_SPECIES, EutroParams
from .fem import LinearSolveSpec
from .hydro import HydroParams
from .mesh import Interval, MeshError, PumpSpec, generate_rect_mesh, load_mesh
from .optimizer import OptimizerConfig
from .scenarios import InitialProfiles
from .series import TimeSeries
from .thermal import ThermoParams


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted key that caused it."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


STUDY = "study value"
LITERATURE = "literature-typical"
CHOSEN = "implementation choice"


def _pump(cside, c0, c1, iside, i0, i1):
    return {"collector": {"side": cside, "start": c0, "end": c1},
            "injector": {"side": iside, "start": i0, "end": i1}}


# (value, provenance) pairs; default_config() strips the provenance
_DEFAULTS = {
    "name": ("lake", CHOSEN),
    "mesh": {
        "file": (None, CHOSEN),
        "width": (20.0, STUDY),
        "height": (16.0, STUDY),
        "nx": (40, CHOSEN),
        "ny": (32, CHOSEN),
        "control_strip_height": (3.0, STUDY),
        "pumps": ([
            _pump("left", 14.0, 15.0, "bottom", 2.0, 4.0),
            _pump("left", 5.0, 6.0, "bottom", 6.0, 8.0),
            _pump("right", 14.0, 15.0, "bottom", 16.0, 18.0),
            _pump("right", 5.0, 6.0, "bottom", 12.0, 14.0),
        ], "study value (4 pairs, 1 m collectors, 2 m injectors); positions chosen"),
    },
    "physics": {
        "hydro": {
            "nu": (1.0e-6, LITERATURE),
            "nu_tur": (2.5e-3, LITERATURE),
            "alpha0": (2.1e-4, LITERATURE),
            "theta0": (293.15, LITERATURE),
            "gravity": ([0.0, -9.81], LITERATURE),
            "penalty": (1.0e-7, CHOSEN),
            "eps_floor": (1.0e-8, CHOSEN),
        },
        "thermal": {
            "K": (1.4e-7, LITERATURE),
            "b1_N": (0.0, LITERATURE),
            "b1_S": (2.4e-6, LITERATURE),
            "b2_S": (1.36e-14, LITERATURE),
            "theta_N": (293.15, LITERATURE),
            "theta_S": (293.15, LITERATURE),
        },
    },
    "kinetics": {
        "C_oc": (2.67, LITERATURE),
        "C_nc": (0.18, LITERATURE),
        "C_fz": (0.7, LITERATURE),
        "K_rd": (0.1 / DAY, LITERATURE),
        "K_r": (0.1 / DAY, LITERATURE),
        "K_mf": (0.05 / DAY, LITERATURE),
        "K_mz": (0.05 / DAY, LITERATURE),
        "K_z": (0.2 / DAY, LITERATURE),
        "K_F": (1.0, LITERATURE),
        "K_N": (0.025, LITERATURE),
        "mu": ([1e-6] * N_SPECIES, LITERATURE),
        "Theta": (1.08, LITERATURE),
        "C_t": (1.066, LITERATURE),
        "mu_growth": (2.0 / DAY, LITERATURE),
        "I_s": (300.0, LITERATURE),
        "phi1": (0.3, LITERATURE),
        "theta_ref": (293.15, LITERATURE),
    },
    "problem": {
        "T": (43200.0, STUDY),
        "dt": (450.0, STUDY),
        "sigma1": (0.5, STUDY),
        "sigma2": (0.5, STUDY),
        "c1": (0.0, CHOSEN),
        "c2": (1.0e-3, CHOSEN),
        "mode": ("reference", STUDY),
        "lambda_m": (0.0, CHOSEN),
        "lambda_M": (100.0, CHOSEN),
        "reference": ({"constant": 1.0e-4}, STUDY),
        "initial_schedule": (None, "reference schedule when null"),
    },
    "series": {
        "radiation": ({"constant": 293.15}, CHOSEN + " (study profile not tabulated)"),
        "light": ({"day_bump": {"base": 0.0, "amplitude": 400.0, "period": 43200.0}}, LITERATURE),
    },
    "initial": {
        "theta": (293.15, CHOSEN),
        "nutrient": (0.1, CHOSEN),
        "phytoplankton": (0.3, CHOSEN),
        "zooplankton": (0.05, CHOSEN),
        "detritus_top": (0.5, CHOSEN),
        "detritus_bottom": (2.0, CHOSEN),
        "detritus_scale": (3.0, CHOSEN),
        "oxygen_mid": (6.5, CHOSEN),
        "oxygen_half_range": (2.5, CHOSEN),
        "oxycline": (9.0, CHOSEN),
        "oxycline_width": (1.5, CHOSEN),
        "file": (None, "per-node CSV with columns theta,u1..u5; overrides the profiles"),
    },
    "solver": {
        "method": ("direct", CHOSEN),
        "tolerance": (1e-10, CHOSEN),
        "max_iterations": (2000, CHOSEN),
    },
    "optimizer": {
        "mu_init": (0.1, CHOSEN),
        "mu_factor": (0.2, CHOSEN),
        "inner_tol": (10.0, CHOSEN),
        "tol": (1e-6, CHOSEN),
        "max_iter": (60, CHOSEN),
        "backtrack": (0.5, CHOSEN),
        "armijo": (1e-4, CHOSEN),
        "feasibility_tol": (1e-6, CHOSEN),
        "min_step": (1e-8, CHOSEN),
        "slack_init": (1e-2, CHOSEN),
        "acceptable_tol": (1e-3, CHOSEN),
        "acceptable_iter": (5, CHOSEN),
    },
}


def _is_leaf(node) -> bool:
    return isinstance(node, tuple)


def _strip(node, which):
    if _is_leaf(node):
        return copy.deepcopy(node[which])
    return {k: _strip(v, which) for k, v in node.items()}


def default_config() -> dict:
    return _strip(_DEFAULTS, 0)


def provenance() -> dict:
    return _strip(_DEFAULTS, 1)


def defaults_text() -> str:
    """Human-readable listing of every default with its provenance."""
    lines = []

    def walk(node, prefix):
        for key, val in node.items():
            path = f"{prefix}.{key}" if prefix else key
            if _is_leaf(val):
                lines.append(f"{path} = {json.dumps(val[0])}  # {val[1]}")
            else:
                walk(val, path)

    walk(_DEFAULTS, "")
    return "\n".join(lines)


def merge(base: dict, override: dict, prefix: str = "") -> dict:
    """Recursively overlay ``override`` on ``base``; unknown keys raise."""
    if not isinstance(override, dict):
        raise ConfigError(prefix, "expected an object")
    out = copy.deepcopy(base)
    for key, val in override.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in base:
            raise ConfigError(path, "unknown key")
        if isinstance(base[key], dict) and key not in ("reference",) and not _is_free_form(path):
            out[key] = merge(base[key], val, path)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _is_free_form(path: str) -> bool:
    return path.startswith("series.") or path == "problem.reference"


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON in {path}: {exc}") from None
    cfg = merge(default_config(), data)
    cfg["_base_dir"] = str(Path(path).resolve().parent)
    return cfg


# --------------------------------------------------------------------------- builders


def _number(cfg, path, positive=False, nonneg=False, integer=False):
    keys = path.split(".")
    node = cfg
    for k in keys:
        node = node[k]
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ConfigError(path, f"expected a number, got {node!r}")
    if integer and int(node) != node:
        raise ConfigError(path, "expected an integer")
    if positive and not node > 0:
        raise ConfigError(path, "must be positive")
    if nonneg and node < 0:
        raise ConfigError(path, "must be non-negative")
    return int(node) if integer else float(node)


def _dataclass_from(cls, section: dict, path: str, exclude=()):
    names = {f.name for f in fields(cls)}
    kwargs = {k: v for k, v in section.items() if k in names and k not in exclude}
    for k, v in kwargs.items():
        if isinstance(v, list):
            kwargs[k] = tuple(v)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(path, str(exc)) from None


def _resolve(cfg, name) -> Path:
    p = Path(name)
    return p if p.is_absolute() else Path(cfg.get("_base_dir", ".")) / p


def _interval(d, path) -> Interval:
    if not isinstance(d, dict) or set(d) != {"side", "start", "end"}:
        raise ConfigError(path, "expected {side, start, end}")
    try:
        return Interval(d["side"], float(d["start"]), float(d["end"]))
    except (MeshError, TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def build_mesh(cfg: dict):
    m = cfg["mesh"]
    if m["file"] is not None:
        try:
            return load_mesh(_resolve(cfg, m["file"]))
        except (MeshError, OSError) as exc:
            raise ConfigError("mesh.file", str(exc)) from None
    width = _number(cfg, "mesh.width", positive=True)
    height = _number(cfg, "mesh.height", positive=True)
    nx = _number(cfg, "mesh.nx", positive=True, integer=True)
    ny = _number(cfg, "mesh.ny", positive=True, integer=True)
    strip = _number(cfg, "mesh.control_strip_height", positive=True)
    if not isinstance(m["pumps"], list):
        raise ConfigError("mesh.pumps", "expected a list")
    pumps = []
    for i, p in enumerate(m["pumps"]):
        path = f"mesh.pumps[{i}]"
        if not isinstance(p, dict) or set(p) != {"collector", "injector"}:
            raise ConfigError(path, "expected {collector, injector}")
        pumps.append(PumpSpec(_interval(p["collector"], path + ".collector"),
                              _interval(p["injector"], path + ".injector")))
    try:
        return generate_rect_mesh(width, height, nx, ny, pumps=pumps, control_strip_height=strip)
    except MeshError as exc:
        raise ConfigError("mesh", str(exc)) from None


def build_series(spec, path: str, start: float, stop: float) -> TimeSeries:
    """``{"constant": v}``, ``{"times": [...], "values": [...]}`` or ``{"day_bump": {...}}``."""
    if not isinstance(spec, dict) or len(spec) == 0:
        raise ConfigError(path, "expected a series object")
    try:
        if set(spec) == {"constant"}:
            return TimeSeries.constant(float(spec["constant"]))
        if set(spec) == {"times", "values"}:
            return TimeSeries(tuple(spec["times"]), tuple(spec["values"]))
        if set(spec) == {"day_bump"}:
            b = spec["day_bump"]
            return TimeSeries.day_bump(float(b.get("base", 0.0)), float(b["amplitude"]), start, stop,
                                       period=float(b.get("period", 43200.0)))
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(path, f"bad series: {exc}") from None
    raise ConfigError(path, "expected one of constant, times/values or day_bump")


def build_schedule(spec, path: str, N: int, n_pumps: int, base_dir=".") -> np.ndarray:
    """``{"constant": c}``, a list of N rows, or ``{"file": csv}`` with a header line."""
    if isinstance(spec, dict) and set(spec) == {"constant"}:
        return np.full((N, n_pumps), float(spec["constant"]))
    if isinstance(spec, dict) and set(spec) == {"file"}:
        f = Path(spec["file"])
        try:
            spec = np.loadtxt(f if f.is_absolute() else Path(base_dir) / f, delimiter=",", skiprows=1, ndmin=2)
        except (OSError, ValueError) as exc:
            raise ConfigError(path, str(exc)) from None
    if isinstance(spec, (list, np.ndarray)):
        try:
            g = np.asarray(spec, dtype=float)
        except ValueError as exc:
            raise ConfigError(path, str(exc)) from None
        if g.shape != (N, n_pumps):
            raise ConfigError(path, f"expected shape ({N}, {n_pumps}), got {g.shape}")
        return g
    raise ConfigError(path, "expected {constant: c}, {file: csv} or an N x N_CT list")


def _initial(cfg, mesh):
    ini = cfg["initial"]
    if ini["file"] is not None:
        try:
            data = np.loadtxt(_resolve(cfg, ini["file"]), delimiter=",", skiprows=1, ndmin=2)
        except (OSError, ValueError) as exc:
            raise ConfigError("initial.file", str(exc)) from None
        if data.shape != (mesh.n_vertices, 1 + N_SPECIES):
            raise ConfigError("initial.file", f"expected {mesh.n_vertices} rows of theta,u1..u5")
        return data[:, 0].copy(), data[:, 1:].T.copy()
    prof = _dataclass_from(InitialProfiles, ini, "initial")
    return prof.build(mesh.vertices)


def build_problem(cfg: dict) -> ProblemSpec:
    pr = cfg["problem"]
    for key in ("T", "dt"):
        _number(cfg, f"problem.{key}", positive=True)
    spec = {k: pr[k] for k in ("T", "dt", "sigma1", "sigma2", "c1", "c2", "mode", "lambda_m", "lambda_M")}
    return _dataclass_from(ProblemSpec, spec, "problem")


def build_scenario(cfg: dict) -> Scenario:
    """Validate the whole configuration and assemble a :class:`Scenario`."""
    problem = build_problem(cfg)
    mesh = build_mesh(cfg)
    end = problem.T + problem.dt
    radiation = build_series(cfg["series"]["radiation"], "series.radiation", 0.0, end)
    light = build_series(cfg["series"]["light"], "series.light", 0.0, end)
    for name, s in (("radiation", radiation), ("light", light)):
        if not s.covers(0.0, end):
            raise ConfigError(f"series.{name}", f"does not cover [0, {end}]")
    hydro = _dataclass_from(HydroParams, cfg["physics"]["hydro"], "physics.hydro")
    thermo = _dataclass_from(ThermoParams, {**cfg["physics"]["thermal"], "radiation": radiation}, "physics.thermal")
    eutro = _dataclass_from(EutroParams, {**cfg["kinetics"], "light": light}, "kinetics")
    solve = _dataclass_from(LinearSolveSpec, cfg["solver"], "solver")
    theta0, u0 = _initial(cfg, mesh)
    n_pumps = mesh.pump_layout.n_pairs
    reference = None
    if n_pumps:
        reference = build_schedule(cfg["problem"]["reference"], "problem.reference", problem.N, n_pumps,
                                   cfg.get("_base_dir", "."))
    try:
        return Scenario(mesh=mesh, hydro=hydro, thermo=thermo, eutro=eutro, problem=problem,
                        initial=InitialState(theta=theta0, species=u0), solve_spec=solve,
                        reference=reference, name=str(cfg["name"]))
    except ValueError as exc:
        path = "problem.reference" if "reference" in str(exc) or "bounds" in str(exc) else ""
        raise ConfigError(path, str(exc)) from None


def initial_schedule(cfg: dict, scenario: Scenario) -> np.ndarray:
    spec = cfg["problem"]["initial_schedule"]
    if spec is None:
        return scenario.reference
    g = build_schedule(spec, "problem.initial_schedule", scenario.N, scenario.n_pumps, cfg.get("_base_dir", "."))
    try:
        return scenario.check_schedule(g)
    except ValueError as exc:
        raise ConfigError("problem.initial_schedule", str(exc)) from None


def build_optimizer(cfg: dict, threads: int = 1) -> OptimizerConfig:
    return _dataclass_from(OptimizerConfig, {**cfg["optimizer"], "threads": threads}, "optimizer")
