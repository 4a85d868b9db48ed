"""Scenario files, mission runner, log comparison and the command-line entry point.

A scenario is an INI-style text file (``key = value`` under ``[section]``
headers). Every key, its type and its default is listed in ``SCHEMA``; the
``[obstacles]`` section is free-form, one ``label = x, y, radius, r_safe``
per obstacle.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import os
import re
import sys
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .guidance import GuidanceConfig, WaypointPath, preview_reference, read_waypoints, run_path_following
from .mission_log import MissionLog, Summary, read_csv, summarize, summary_to_json
from .nlp import AugmentedLagrangian, SolverOptions
from .ocp import TERMINAL_MODES, Obstacle, OcpProblem, Weights, default_boxes
from .planner import PlannerConfig, run_mission, transcribe
from .sim import Simulator
from .transcription import check_derivatives
from .vehicle_model import INTEGRATORS, MODEL_VARIANTS, VehicleParams

KINDS = ("drive-to-pose", "path-follow", "obstacle-avoid")
DIRECTIONS = ("forward", "backward")
SHOOTINGS = ("multiple", "single")
SOLVERS = ("ipopt", "al")
REQUIRED = object()
DERIVATIVE_TOLERANCE = 1e-5


class ScenarioError(ValueError):
    """Schema violation in a scenario file; the message names the file, line and field."""


# ---------------------------------------------------------------- value codecs

def _float(text):
    val = float(text)
    if math.isnan(val):
        raise ValueError("NaN is not allowed")
    return val


def _vector(n):
    def parse(text):
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != n:
            raise ValueError(f"expected {n} comma-separated numbers, got {len(parts)}")
        return tuple(_float(p) for p in parts)
    return parse


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _int(text):
    return int(text)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


# (section, key, attribute, parser, default); REQUIRED marks mandatory keys, None an optional one.
SCHEMA = [
    ("scenario", "name", "name", str, REQUIRED),
    ("scenario", "kind", "kind", _choice(KINDS), REQUIRED),
    ("scenario", "direction", "direction", _choice(DIRECTIONS), "forward"),
    ("scenario", "seed", "seed", _int, 0),
    ("scenario", "dt", "dt", _float, 0.2),
    ("scenario", "n_c", "horizon", _int, 60),
    ("scenario", "threshold", "threshold", _float, 0.05),
    ("scenario", "max_ticks", "max_ticks", _int, None),
    ("scenario", "stall_ticks", "stall_ticks", _int, 100),
    ("vehicle", "l1", "l1", _float, 1.9),
    ("vehicle", "l2", "l2", _float, 4.0),
    ("vehicle", "width", "width", _float, 1.0),
    ("vehicle", "v_max", "v_max", _float, 0.2),
    ("vehicle", "phi_max", "phi_max", _float, 0.5),
    ("vehicle", "theta1_max", "theta1_max", _float, 0.7),
    ("vehicle", "dv_max", "dv_max", _float, 0.05),
    ("vehicle", "dphi_max", "dphi_max", _float, 0.1),
    ("vehicle", "r_body", "r_body", _float, None),
    ("vehicle", "variant", "variant", _choice(MODEL_VARIANTS), "paper"),
    ("bounds", "x", "x_range", _vector(2), (-math.inf, math.inf)),
    ("bounds", "y", "y_range", _vector(2), (-math.inf, math.inf)),
    ("weights", "q", "q", _vector(4), (5.0, 5.0, 1.0, 1.0)),
    ("weights", "r", "r", _vector(2), (0.5, 0.05)),
    ("weights", "p", "p", _vector(4), None),
    ("mission", "initial", "initial", _vector(4), REQUIRED),
    ("mission", "target", "target", _vector(4), None),
    ("mission", "waypoints", "waypoints", str, None),
    ("mission", "closed", "closed", _bool, False),
    ("mission", "lookahead", "lookahead", _float, 2.0),
    ("mission", "preview", "preview", _bool, True),
    ("mission", "preview_speed", "preview_speed", _float, 0.75),
    ("planner", "shooting", "shooting", _choice(SHOOTINGS), "multiple"),
    ("planner", "integrator", "integrator", _choice(tuple(INTEGRATORS)), "euler"),
    ("planner", "solver", "solver", _choice(SOLVERS), "ipopt"),
    ("planner", "warm_start", "warm_start", _bool, True),
    ("planner", "obstacle_margin", "obstacle_margin", _float, 0.02),
    ("planner", "terminal_mode", "terminal_mode", _choice(TERMINAL_MODES), "cost-only"),
    ("planner", "terminal_radius", "terminal_radius", _float, 0.0),
    ("planner", "soft_state_penalty", "soft_state_penalty", _float, None),
    ("planner", "max_iterations", "max_iterations", _int, 50),
    ("planner", "kkt_tolerance", "kkt_tolerance", _float, 1e-4),
    ("planner", "constraint_tolerance", "constraint_tolerance", _float, 1e-6),
    ("plant", "integrator", "plant_integrator", _choice(tuple(INTEGRATORS)), "rk4"),
    ("plant", "substeps", "plant_substeps", _int, 5),
    ("plant", "noise_std", "noise_std", _vector(4), (0.0, 0.0, 0.0, 0.0)),
    ("plant", "tau_v", "tau_v", _float, 0.0),
    ("plant", "tau_phi", "tau_phi", _float, 0.0),
]
SECTIONS = ("scenario", "vehicle", "bounds", "weights", "mission", "obstacles", "planner", "plant")
# sections that describe the run rather than the mission; excluded from the identity used by compare
RUN_SECTIONS = ("planner",)
RUN_KEYS = (("scenario", "seed"), ("scenario", "max_ticks"), ("scenario", "stall_ticks"))


@dataclass(frozen=True)
class Scenario:
    name: str
    kind: str
    initial: tuple
    direction: str = "forward"
    seed: int = 0
    dt: float = 0.2
    horizon: int = 60
    threshold: float = 0.05
    max_ticks: int | None = None
    stall_ticks: int | None = 100
    l1: float = 1.9
    l2: float = 4.0
    width: float = 1.0
    v_max: float = 0.2
    phi_max: float = 0.5
    theta1_max: float = 0.7
    dv_max: float = 0.05
    dphi_max: float = 0.1
    r_body: float | None = None
    variant: str = "paper"
    x_range: tuple = (-math.inf, math.inf)
    y_range: tuple = (-math.inf, math.inf)
    q: tuple = (5.0, 5.0, 1.0, 1.0)
    r: tuple = (0.5, 0.05)
    p: tuple | None = None
    target: tuple | None = None
    waypoints: str | None = None
    closed: bool = False
    lookahead: float = 2.0
    preview: bool = True
    preview_speed: float = 0.75
    obstacles: tuple = ()  # (x, y, radius, r_safe) tuples
    shooting: str = "multiple"
    integrator: str = "euler"
    solver: str = "ipopt"
    warm_start: bool = True
    obstacle_margin: float = 0.02
    terminal_mode: str = "cost-only"
    terminal_radius: float = 0.0
    soft_state_penalty: float | None = None
    max_iterations: int = 50
    kkt_tolerance: float = 1e-4
    constraint_tolerance: float = 1e-6
    plant_integrator: str = "rk4"
    plant_substeps: int = 5
    noise_std: tuple = (0.0, 0.0, 0.0, 0.0)
    tau_v: float = 0.0
    tau_phi: float = 0.0
    base_dir: str = "."  # directory the waypoint file is resolved against; not serialized

    @property
    def params(self) -> VehicleParams:
        return VehicleParams(l1=self.l1, l2=self.l2, width=self.width, v_max=self.v_max, phi_max=self.phi_max,
                             theta1_max=self.theta1_max, dv_max=self.dv_max, dphi_max=self.dphi_max,
                             r_body=self.r_body, variant=self.variant)

    @property
    def waypoint_file(self) -> Path | None:
        return None if self.waypoints is None else Path(self.base_dir) / self.waypoints

    def with_overrides(self, **changes) -> "Scenario":
        """Copy with the non-None entries of ``changes`` applied."""
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


# ---------------------------------------------------------------- loading

def _line_index(text: str) -> dict:
    """Map (section, key) and (section, None) to 1-based line numbers."""
    index, section = {}, None
    for lineno, line in enumerate(text.splitlines(), 1):
        head = re.match(r"\s*\[([^\]]+)\]", line)
        if head:
            section = head.group(1).strip().lower()
            index.setdefault((section, None), lineno)
            continue
        item = re.match(r"\s*([^#;=:\s][^=:]*?)\s*[=:]", line)
        if item and section is not None:
            index.setdefault((section, item.group(1).strip().lower()), lineno)
    return index


def parse_scenario(text: str, base_dir=".", source: str = "<scenario>") -> Scenario:
    """Parse and validate scenario text; raises ``ScenarioError`` naming the line and field."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ScenarioError(f"{source}: {exc}") from None
    lines = _line_index(text)

    def where(section, key=None):
        line = lines.get((section, key)) or lines.get((section, None))
        loc = f"{source}:{line}" if line else source
        return f"{loc}: [{section}] {key}" if key else f"{loc}: [{section}]"

    known = {(s, k) for s, k, *_ in SCHEMA}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ScenarioError(f"{where(section)}: unknown section")
        if section == "obstacles":
            continue
        for key in cp[section]:
            if (section, key) not in known:
                raise ScenarioError(f"{where(section, key)}: unknown field")

    values = {}
    for section, key, attr, parse, default in SCHEMA:
        raw = cp.get(section, key, fallback=None) if cp.has_section(section) else None
        if raw is None or raw.strip() == "":
            if default is REQUIRED:
                raise ScenarioError(f"{where(section, key)}: missing required field")
            values[attr] = default
            continue
        try:
            values[attr] = parse(raw.strip())
        except ValueError as exc:
            raise ScenarioError(f"{where(section, key)}: {exc}") from None

    obstacles = []
    if cp.has_section("obstacles"):
        for label, raw in cp["obstacles"].items():
            try:
                x, y, radius, r_safe = _vector(4)(raw)
                Obstacle((x, y), radius, r_safe)
            except ValueError as exc:
                raise ScenarioError(f"{where('obstacles', label)}: {exc}") from None
            obstacles.append((x, y, radius, r_safe))
    values["obstacles"] = tuple(obstacles)
    scenario = Scenario(**values, base_dir=str(base_dir))
    _validate(scenario, where)
    return scenario


def _validate(s: Scenario, where):
    def fail(section, key, msg):
        raise ScenarioError(f"{where(section, key)}: {msg}")

    try:
        s.params
    except ValueError as exc:
        fail("vehicle", None, str(exc))
    for section, key, attr, *_ in SCHEMA:
        val = getattr(s, attr)
        if attr in ("dt", "threshold", "lookahead", "kkt_tolerance", "constraint_tolerance") and not val > 0:
            fail(section, key, "must be > 0")
        if attr in ("horizon",) and val < 2:
            fail(section, key, "must be >= 2")
        if attr in ("max_ticks", "stall_ticks", "plant_substeps", "max_iterations") and val is not None and val < 1:
            fail(section, key, "must be >= 1")
        if attr in ("x_range", "y_range") and val[0] > val[1]:
            fail(section, key, "lower bound exceeds upper bound")
    if not 0 < s.preview_speed <= 1:
        fail("mission", "preview_speed", "must lie in (0, 1]")
    for attr, key in (("q", "q"), ("r", "r"), ("p", "p")):
        val = getattr(s, attr)
        if val is not None and min(val) <= 0:
            fail("weights", key, "diagonal weights must be > 0")
    if min(s.noise_std) < 0 or s.tau_v < 0 or s.tau_phi < 0:
        fail("plant", None, "noise and time constants must be >= 0")
    if s.terminal_mode == "ball" and not s.terminal_radius > 0:
        fail("planner", "terminal_radius", "ball terminal mode needs a radius > 0")
    if s.kind in ("drive-to-pose", "obstacle-avoid") and s.target is None:
        fail("mission", "target", f"missing required field for kind {s.kind}")
    if s.kind == "obstacle-avoid" and not s.obstacles:
        fail("obstacles", None, "obstacle-avoid needs at least one obstacle")
    if s.kind == "path-follow":
        if s.waypoints is None:
            fail("mission", "waypoints", "missing required field for kind path-follow")
        if not s.waypoint_file.is_file():
            fail("mission", "waypoints", f"file not found: {s.waypoint_file}")


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario: {exc.strerror}") from None
    return parse_scenario(text, base_dir=path.parent, source=str(path))


def serialize_scenario(s: Scenario) -> str:
    """Scenario text listing every field (defaults included), readable by ``parse_scenario``."""
    out, section = [], None
    for sec, key, attr, _, _ in SCHEMA:
        if sec != section:
            if sec == "planner":
                out += _obstacle_lines(s)
            out.append(f"{'' if section is None else chr(10)}[{sec}]")
            section = sec
        val = getattr(s, attr)
        out.append(f"{key} = {'' if val is None else _format(val)}")
    return "\n".join(out) + "\n"


def _obstacle_lines(s: Scenario) -> list[str]:
    lines = ["", "[obstacles]"]
    lines += [f"o{i + 1} = {_format(tuple(o))}" for i, o in enumerate(s.obstacles)]
    return lines


def bundled_dir() -> Path:
    return Path(str(resources.files("ttnmpc") / "scenarios"))


def bundled_scenarios() -> list[Path]:
    return sorted(bundled_dir().glob("*.scn"))


def scenario_identity(s: Scenario) -> str:
    """Hash of the mission definition; runs differing only in planner settings or seed share it."""
    base = Scenario(name=s.name, kind=s.kind, initial=s.initial)
    keep = {attr: getattr(s, attr) for sec, key, attr, *_ in SCHEMA
            if sec not in RUN_SECTIONS and (sec, key) not in RUN_KEYS}
    text = serialize_scenario(replace(base, **keep, obstacles=s.obstacles))
    h = hashlib.sha256(text.encode())
    if s.waypoint_file is not None and s.waypoint_file.is_file():
        h.update(s.waypoint_file.read_bytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------- running

def make_template(s: Scenario, reference=None) -> OcpProblem:
    params = s.params
    state_box, control_box, rate_box = default_boxes(params, s.direction, s.x_range, s.y_range)
    weights = Weights(Q=np.diag(s.q), R=np.diag(s.r), P=None if s.p is None else np.diag(s.p))
    obstacles = tuple(Obstacle((x, y), rad, rs) for x, y, rad, rs in s.obstacles)
    ref = s.target if reference is None else reference
    return OcpProblem(s.horizon, s.dt, params, np.asarray(s.initial), np.asarray(ref), weights=weights,
                      obstacles=obstacles, state_box=state_box, control_box=control_box, rate_box=rate_box,
                      terminal_mode=s.terminal_mode, terminal_radius=s.terminal_radius,
                      soft_state_penalty=s.soft_state_penalty, direction=s.direction,
                      obstacle_margin=s.obstacle_margin if obstacles else 0.0)


def planner_config(s: Scenario) -> PlannerConfig:
    opts = SolverOptions(max_iterations=s.max_iterations, kkt_tolerance=s.kkt_tolerance,
                         constraint_tolerance=s.constraint_tolerance)
    return PlannerConfig(min_allowable_error=s.threshold, warm_start=s.warm_start, solver_options=opts,
                         shooting=s.shooting, integrator=s.integrator, max_ticks=s.max_ticks,
                         stall_ticks=s.stall_ticks)


def make_solver(s: Scenario):
    if s.solver == "ipopt":
        from .ipopt import IpoptSolver
        return IpoptSolver()
    return AugmentedLagrangian()


def load_path(s: Scenario) -> WaypointPath:
    return read_waypoints(s.waypoint_file, s.closed, s.direction)


def execute(s: Scenario, keep_predictions: bool = False) -> MissionLog:
    """Run the closed-loop mission a scenario describes."""
    plant = Simulator(s.initial, s.params, s.plant_integrator, s.plant_substeps, s.noise_std,
                      s.tau_v, s.tau_phi, seed=s.seed)
    config, solver = planner_config(s), make_solver(s)
    if s.kind == "path-follow":
        path = load_path(s)
        template = make_template(s, reference=path.points[-1])
        guidance = GuidanceConfig(lookahead=s.lookahead, min_error=s.threshold, preview=s.preview,
                                  preview_speed=s.preview_speed)
        return run_path_following(path, s.initial, template, guidance, config, plant, solver, keep_predictions)
    return run_mission(s.initial, s.target, make_template(s), config, plant, solver,
                       keep_predictions=keep_predictions)


@dataclass
class RunResult:
    scenario: Scenario
    log: MissionLog
    summary: Summary
    files: dict

    @property
    def exit_code(self) -> int:
        return 0 if self.log.success else 1


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_series(s: Scenario, log: MissionLog, directory: Path) -> dict:
    """Plot-ready data: trajectory against reference, controls, hitch angle and error per tick."""
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    traj = log.states()
    times = [r.time for r in log.rows] + [len(log.rows) * s.dt]
    files["trajectory"] = directory / "trajectory.csv"
    _write_csv(files["trajectory"], ["tick", "time", "x2", "y2", "theta1", "theta2"],
               [[k, times[k], *x] for k, x in enumerate(traj)])
    files["reference"] = directory / "reference.csv"
    ref = load_path(s).points if s.kind == "path-follow" else np.atleast_2d(s.target)
    _write_csv(files["reference"], ["x2", "y2", "theta1", "theta2"], ref.tolist())
    files["controls"] = directory / "controls.csv"
    _write_csv(files["controls"], ["tick", "time", "v", "phi"], [[r.tick, r.time, *r.control] for r in log.rows])
    files["hitch"] = directory / "hitch.csv"
    _write_csv(files["hitch"], ["tick", "time", "theta1"], [[k, times[k], x[2]] for k, x in enumerate(traj)])
    files["error"] = directory / "error.csv"
    _write_csv(files["error"], ["tick", "time", "error", "position_error", "path_error", "clearance"],
               [[r.tick, r.time, r.error, r.position_error, r.path_error, r.clearance] for r in log.rows])
    files["obstacles"] = directory / "obstacles.csv"
    _write_csv(files["obstacles"], ["x", "y", "radius", "r_safe"], [list(o) for o in s.obstacles])
    return files


def summary_document(s: Scenario, log: MissionLog) -> dict:
    summary = json.loads(summary_to_json(log.summary()))
    final = {"state": None if log.final_state is None else [float(v) for v in log.final_state],
             "error": log.final_error, "position_error": log.final_position_error,
             "clearance": log.final_clearance}
    ticks = max(1, len(log.rows))
    return {
        "scenario": s.name,
        "identity": scenario_identity(s),
        "shooting": s.shooting,
        "integrator": s.integrator,
        "solver": s.solver,
        "seed": s.seed,
        "summary": summary,
        "mean_iterations": summary["total_iterations"] / ticks,
        "failed_solves": sum(r.status not in ("optimal",) for r in log.rows),
        "final": {k: v if not isinstance(v, float) or math.isfinite(v) else str(v) for k, v in final.items()},
    }


def run(s: Scenario, out_dir) -> RunResult:
    """Execute a scenario and write its artifacts under ``out_dir``.

    Files: ``<name>.csv`` (per-tick rows, reproducible byte for byte),
    ``<name>.timing.csv`` (wall-clock solve times), ``<name>.summary.json``,
    ``<name>.scn`` (the effective scenario) and ``series/`` (plot data).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = execute(s)
    files = {
        "csv": out / f"{s.name}.csv",
        "timing": out / f"{s.name}.timing.csv",
        "summary": out / f"{s.name}.summary.json",
        "scenario": out / f"{s.name}.scn",
    }
    files["csv"].write_text(log.to_csv())
    files["timing"].write_text(log.timing_csv())
    files["summary"].write_text(json.dumps(summary_document(s, log), indent=2, sort_keys=True) + "\n")
    text = serialize_scenario(s)
    if s.waypoints is not None:
        text = text.replace(f"waypoints = {s.waypoints}\n", f"waypoints = {s.waypoint_file.resolve()}\n")
    files["scenario"].write_text(text)
    files.update(write_series(s, log, out / "series"))
    return RunResult(s, log, log.summary(), files)


# ---------------------------------------------------------------- reading logs back

def _num(v) -> float:
    return float(v) if not isinstance(v, str) else float(v)


def recompute_summary(summary_path) -> Summary:
    """Summary metrics rebuilt from the CSV rows, timing file and final-state record."""
    summary_path = Path(summary_path)
    doc = json.loads(summary_path.read_text())
    stem = summary_path.name[: -len(".summary.json")]
    rows = read_csv(summary_path.parent / f"{stem}.csv")
    timing = read_csv(summary_path.parent / f"{stem}.timing.csv")
    path_err = np.array([float(r["path_error"]) for r in rows])
    final = doc["final"]
    clear = np.array([float(r["clearance"]) for r in rows] + [_num(final["clearance"])])
    th1 = [abs(float(r["theta1"])) for r in rows]
    if final["state"] is not None:
        th1.append(abs(final["state"][2]))
    solve = np.array([float(t["solve_time"]) for t in timing])
    finite = path_err[np.isfinite(path_err)]
    stored = doc["summary"]
    return Summary(
        status=stored["status"],
        tick_count=len(rows),
        final_error=_num(final["error"]),
        final_position_error=_num(final["position_error"]),
        max_path_error=float(finite.max()) if finite.size else float("nan"),
        rmse_path_error=float(np.sqrt(np.mean(finite ** 2))) if finite.size else float("nan"),
        min_clearance=float(clear.min()),
        max_abs_theta1=float(max(th1)) if th1 else 0.0,
        mean_solve_time=float(solve.mean()) if solve.size else 0.0,
        max_solve_time=float(solve.max()) if solve.size else 0.0,
        total_iterations=int(sum(int(r["iterations"]) for r in rows)),
        wall_time=stored["wall_time"],
        real_time_factor=stored["real_time_factor"],
    )


def stored_summary(summary_path) -> Summary:
    doc = json.loads(Path(summary_path).read_text())["summary"]
    return Summary(**{f.name: _num(doc[f.name]) if f.type == "float" and isinstance(doc[f.name], str)
                      else doc[f.name] for f in fields(Summary)})


def _summary_path(arg) -> Path:
    p = Path(arg)
    if p.is_dir():
        found = sorted(p.glob("*.summary.json"))
        if len(found) != 1:
            raise ValueError(f"invalid argument: {p} must hold exactly one *.summary.json, found {len(found)}")
        return found[0]
    if p.name.endswith(".summary.json"):
        return p
    if p.suffix == ".csv":
        return p.with_name(p.name[: -len(".csv")] + ".summary.json")
    raise ValueError(f"invalid argument: {p} is not a run directory, summary or mission CSV")


COMPARE_METRICS = ("tick_count", "max_path_error", "rmse_path_error", "final_error", "min_clearance",
                   "max_abs_theta1", "mean_solve_time", "total_iterations", "mean_iterations", "failed_solves")


def compare(log_a, log_b) -> dict:
    """Side-by-side metrics of two runs of the same scenario; raises ``ValueError`` otherwise."""
    docs = []
    for arg in (log_a, log_b):
        path = _summary_path(arg)
        if not path.is_file():
            raise ValueError(f"invalid argument: no summary at {path}")
        docs.append(json.loads(path.read_text()))
    a, b = docs
    if (a["scenario"], a["identity"]) != (b["scenario"], b["identity"]):
        raise ValueError(f"invalid argument: scenario mismatch ({a['scenario']} {a['identity']} "
                         f"vs {b['scenario']} {b['identity']})")

    def metric(doc, key):
        val = doc.get(key, doc["summary"].get(key))
        return _num(val) if isinstance(val, str) else val

    report = {"scenario": a["scenario"], "runs": [], "metrics": {}}
    for doc in docs:
        completed = doc["summary"]["status"] == "success"
        report["runs"].append({"shooting": doc["shooting"], "integrator": doc["integrator"], "solver": doc["solver"],
                               "status": doc["summary"]["status"], "completed": completed,
                               "unstable": not completed})
    for key in COMPARE_METRICS:
        va, vb = metric(a, key), metric(b, key)
        diff = vb - va if math.isfinite(va) and math.isfinite(vb) else (0.0 if va == vb else math.nan)
        report["metrics"][key] = {"a": va, "b": vb, "diff": diff}
    return report


def format_report(report: dict) -> str:
    ra, rb = report["runs"]
    lines = [f"scenario {report['scenario']}",
             f"{'':18s} {'A':>14s} {'B':>14s} {'B - A':>14s}",
             f"{'shooting':18s} {ra['shooting']:>14s} {rb['shooting']:>14s}",
             f"{'status':18s} {ra['status']:>14s} {rb['status']:>14s}"]
    for key, m in report["metrics"].items():
        lines.append(f"{key:18s} {m['a']:14.6g} {m['b']:14.6g} {m['diff']:14.6g}")
    for label, r in zip("AB", report["runs"]):
        if r["unstable"]:
            lines.append(f"run {label} ({r['shooting']} shooting) did not complete: flagged unstable")
    return "\n".join(lines)


# ---------------------------------------------------------------- derivative check

def sample_points(nlp, s: Scenario, count: int, seed: int) -> list[np.ndarray]:
    """Random decision vectors inside the variable bounds; unbounded entries are drawn
    within one unit of the initial state (states) or of zero (controls)."""
    rng = np.random.default_rng(seed)
    center = np.zeros(nlp.n)
    layout = nlp.layout
    if layout.kind == "multiple":
        for k in range(s.horizon + 1):
            center[layout.state_index(k)] = s.initial
    lo = np.where(np.isfinite(nlp.lbx), nlp.lbx, center - 1.0)
    hi = np.where(np.isfinite(nlp.ubx), nlp.ubx, center + 1.0)
    return [lo + (hi - lo) * rng.random(nlp.n) for _ in range(count)]


def derivative_errors(s: Scenario, points: int = 5, seed: int | None = None) -> list[float]:
    """Relative derivative errors of the scenario's first planning NLP at random feasible points."""
    if s.kind == "path-follow":
        path = load_path(s)
        spacing = s.preview_speed * s.v_max * s.dt
        ref = preview_reference(path, 0, s.horizon + 1, spacing, s.initial)
        template = make_template(s, reference=ref)
    else:
        template = make_template(s)
    nlp = transcribe(template, planner_config(s))
    return [check_derivatives(nlp, w) for w in sample_points(nlp, s, points, s.seed if seed is None else seed)]


# ---------------------------------------------------------------- command line

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ttnmpc", description="Tractor-trailer NMPC scenario harness")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario and write its logs")
    r.add_argument("scenario", help="scenario file, or the name of a bundled scenario")
    r.add_argument("--out", default="runs", help="output directory (default: runs)")
    r.add_argument("--seed", type=int)
    r.add_argument("--shooting", choices=SHOOTINGS)
    r.add_argument("--integrator", choices=tuple(INTEGRATORS))
    r.add_argument("--max-ticks", type=int)
    c = sub.add_parser("compare", help="compare two runs of the same scenario")
    c.add_argument("log_a")
    c.add_argument("log_b")
    c.add_argument("--json", action="store_true", help="print the report as JSON")
    d = sub.add_parser("check-derivatives", help="check supplied derivatives against finite differences")
    d.add_argument("scenario")
    d.add_argument("--points", type=int, default=5)
    sub.add_parser("list", help="list the bundled scenarios")
    return ap


def resolve_scenario(arg: str) -> Path:
    p = Path(arg)
    if p.is_file():
        return p
    bundled = bundled_dir() / (arg if arg.endswith(".scn") else f"{arg}.scn")
    if bundled.is_file():
        return bundled
    raise ScenarioError(f"{arg}: no such scenario file or bundled scenario")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "list":
            for p in bundled_scenarios():
                print(p.stem)
            return 0
        if args.command == "run":
            s = load_scenario(resolve_scenario(args.scenario))
            s = s.with_overrides(seed=args.seed, shooting=args.shooting, integrator=args.integrator,
                                 max_ticks=args.max_ticks)
            result = run(s, args.out)
            sm = result.summary
            print(f"{s.name}: {sm.status} after {sm.tick_count} ticks, final error {sm.final_error:.4f}, "
                  f"max path error {sm.max_path_error:.4f}, min clearance {sm.min_clearance:.4f}, "
                  f"mean solve time {sm.mean_solve_time:.4f} s")
            print(f"logs written to {os.fspath(args.out)}")
            return result.exit_code
        if args.command == "compare":
            report = compare(args.log_a, args.log_b)
            print(json.dumps(report, indent=2) if args.json else format_report(report))
            return 0
        s = load_scenario(resolve_scenario(args.scenario))
        errs = derivative_errors(s, args.points)
        for k, e in enumerate(errs):
            print(f"point {k}: max relative error {e:.3e}")
        ok = max(errs) <= DERIVATIVE_TOLERANCE
        print(f"{'pass' if ok else 'FAIL'}: max {max(errs):.3e} (tolerance {DERIVATIVE_TOLERANCE:g})")
        return 0 if ok else 1
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
