"""JSON run configuration: parsing, defaults, validation and round-tripping.

Layout::

    {
      "model":      {"name": ..., "params": {...}, "state_bounds": ..., "control_bounds": ...},
      "problem":    {"T", "dt", "x0", "x_goal", "Q", "R", "Q_terminal", "alpha",
                     "S", "P", "gain_bounds", "epsilon"},
      "solver":     {SolverConfig fields},
      "simulation": {"noise", "initial_radius", "runs", "seed", "mismatch", "error_index"},
      "output_dir": "..."
    }

Unknown keys are rejected at every level.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

import numpy as np

from .dynamics import make_model
from .errors import ConfigError
from .simulate import NoiseSpec
from .solver import SolverConfig
from .transcription import ProblemSpec

OUTPUT_DIR_ENV = "ROBUST_TRAJOPT_OUTPUT_DIR"

MODEL_KEYS = {"name", "params", "state_bounds", "control_bounds"}
PROBLEM_REQUIRED = {"T", "dt", "x0", "x_goal", "Q", "R", "Q_terminal"}
PROBLEM_DEFAULTS = {"alpha": 0.0, "S": None, "P": None, "gain_bounds": None, "epsilon": None}
SOLVER_KEYS = {f.name for f in fields(SolverConfig)}
SIMULATION_DEFAULTS = {"noise": None, "initial_radius": 0.0, "runs": 12, "seed": 0,
                       "mismatch": None, "error_index": None}
TOP_KEYS = {"model", "problem", "solver", "simulation", "output_dir"}


def _check_keys(section: dict, allowed, where: str, problems: list):
    if not isinstance(section, dict):
        problems.append(f"{where} must be an object")
        return False
    for key in sorted(set(section) - set(allowed)):
        problems.append(f"unknown key {where}.{key}")
    return True


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


@dataclass
class RunConfig:
    model: dict
    problem: dict
    solver: dict
    simulation: dict
    output_dir: str = "out"

    # -- construction ------------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        problems: list = []
        if not _check_keys(raw, TOP_KEYS, "config", problems):
            raise ConfigError(problems)
        for key in ("model", "problem"):
            if key not in raw:
                problems.append(f"missing section {key}")
        model = copy.deepcopy(raw.get("model", {}))
        problem = copy.deepcopy(raw.get("problem", {}))
        solver = copy.deepcopy(raw.get("solver", {}))
        simulation = copy.deepcopy(raw.get("simulation", {}))
        _check_keys(model, MODEL_KEYS, "model", problems)
        _check_keys(problem, PROBLEM_REQUIRED | set(PROBLEM_DEFAULTS), "problem", problems)
        _check_keys(solver, SOLVER_KEYS, "solver", problems)
        _check_keys(simulation, set(SIMULATION_DEFAULTS), "simulation", problems)
        if isinstance(model, dict) and "name" not in model:
            problems.append("model.name is required")
        if isinstance(problem, dict):
            for key in sorted(PROBLEM_REQUIRED - set(problem)):
                problems.append(f"problem.{key} is required")
        if problems:
            raise ConfigError(problems)
        model.setdefault("params", {})
        model.setdefault("state_bounds", None)
        model.setdefault("control_bounds", None)
        for key, value in PROBLEM_DEFAULTS.items():
            problem.setdefault(key, value)
        full_solver = asdict(SolverConfig())
        full_solver.update(solver)
        for key, value in SIMULATION_DEFAULTS.items():
            simulation.setdefault(key, value)
        rc = cls(model, problem, full_solver, simulation, str(raw.get("output_dir", "out")))
        rc.validate()
        return rc

    def validate(self):
        """Build every derived object once so all errors surface before any work."""
        problems = []
        for build in (self.problem_spec, self.solver_config, self.noise_spec):
            try:
                build()
            except ConfigError as exc:
                problems.extend(exc.violations)
            except (TypeError, ValueError) as exc:
                problems.append(f"{build.__name__}: {exc}")
        runs = self.simulation["runs"]
        if not isinstance(runs, int) or isinstance(runs, bool) or runs < 1:
            problems.append(f"simulation.runs must be a positive integer, got {runs!r}")
        if not isinstance(self.simulation["seed"], int):
            problems.append("simulation.seed must be an integer")
        mm = self.simulation["mismatch"]
        if mm is not None and not isinstance(mm, (dict, list)):
            problems.append("simulation.mismatch must be an object or a list of objects")
        if problems:
            raise ConfigError(problems)

    # -- derived objects -----------------------------------------------------

    def build_model(self):
        m = self.model
        bounds = {k: m[k] for k in ("state_bounds", "control_bounds") if m[k] is not None}
        return make_model(m["name"], m["params"] or None, **bounds)

    def problem_spec(self) -> ProblemSpec:
        p = self.problem
        if not isinstance(p["T"], int) or isinstance(p["T"], bool):
            raise ConfigError(f"problem.T must be an integer >= 2, got {p['T']!r}")
        gb = p["gain_bounds"]
        return ProblemSpec(
            model=self.build_model(), T=p["T"], dt=float(p["dt"]),
            x0=p["x0"], x_goal=p["x_goal"], Q=p["Q"], R=p["R"], Q_terminal=p["Q_terminal"],
            alpha=float(p["alpha"]), S=p["S"], P=p["P"],
            gain_bounds=tuple(gb) if gb is not None else None, epsilon=p["epsilon"],
        )

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**self.solver)

    def noise_spec(self) -> NoiseSpec:
        s = self.simulation
        n_x = self.build_model().n_x
        bounds = np.zeros(n_x) if s["noise"] is None else s["noise"]
        noise = NoiseSpec(bounds, int(s["seed"]), float(s["initial_radius"]))
        if noise.bounds.shape != (n_x,):
            raise ConfigError(f"simulation.noise needs {n_x} entries")
        return noise

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_DIR_ENV) or self.output_dir)

    # -- serialisation -------------------------------------------------------

    def to_dict(self) -> dict:
        return _jsonable({"model": self.model, "problem": self.problem, "solver": self.solver,
                          "simulation": self.simulation, "output_dir": self.output_dir})

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw: Any = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return RunConfig.from_dict(raw)


def shipped_config_path(name: str) -> Path:
    """Path of a config bundled with the package (``pendulum``, ``ballbeam``, ...)."""
    path = Path(__file__).with_name("configs") / f"{name}.json"
    if not path.exists():
        raise ConfigError(f"no shipped config named {name!r}")
    return path
