"""Receding-horizon NMPC loop: sense, build the OCP, solve, apply the first control."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import nlp as nlp_mod
from .mission_log import MissionLog, TickRow
from .nlp import AugmentedLagrangian, Multipliers, NlpSolution, Solver, SolverOptions
from .ocp import OcpProblem, min_clearance, position_error, terminal_error
from .sim import Simulator
from .transcription import (
    initial_guess,
    shift_guess,
    shift_multipliers,
    transcribe_multiple_shooting,
    transcribe_single_shooting,
)

# Applied controls from a non-optimal solve are accepted when the solution is at least this feasible.
ACCEPT_VIOLATION = 1e-4


@dataclass(frozen=True)
class PlannerConfig:
    min_allowable_error: float = 0.05
    warm_start: bool = True
    solver_options: SolverOptions = field(default_factory=SolverOptions)
    shooting: str = "multiple"
    integrator: str = "euler"
    max_ticks: int | None = None
    stall_ticks: int | None = 100

    def __post_init__(self):
        if not self.min_allowable_error > 0:
            raise ValueError("min_allowable_error must be > 0")
        if self.stall_ticks is not None and self.stall_ticks < 1:
            raise ValueError("stall_ticks must be >= 1 or None")
        if self.shooting not in ("multiple", "single"):
            raise ValueError(f"shooting must be 'multiple' or 'single', got {self.shooting!r}")


@dataclass
class PlanTick:
    control: np.ndarray
    predicted: np.ndarray
    controls: np.ndarray
    status: str
    solve_time: float
    error: float
    iterations: int = 0
    objective: float = float("nan")
    constraint_violation: float = float("nan")
    solution: NlpSolution | None = field(default=None, repr=False)
    problem: OcpProblem | None = field(default=None, repr=False)

    @property
    def w(self):
        return None if self.solution is None else self.solution.w_star


def transcribe(problem: OcpProblem, config: PlannerConfig):
    if config.shooting == "multiple":
        return transcribe_multiple_shooting(problem, config.integrator)
    return transcribe_single_shooting(problem, config.integrator)


def feasible_control(u, problem: OcpProblem) -> np.ndarray:
    """Project a control onto the control box and the rate box around ``problem.u_prev``."""
    lo = np.maximum(problem.control_box[0], problem.u_prev + problem.rate_box[0])
    hi = np.minimum(problem.control_box[1], problem.u_prev + problem.rate_box[1])
    return np.clip(u, lo, np.maximum(lo, hi))


def safe_stop(problem: OcpProblem) -> np.ndarray:
    """Hold steering and brake toward zero velocity as fast as the rate limits allow."""
    return feasible_control(np.array([0.0, problem.u_prev[1]]), problem)


def plan_step(current, reference, template: OcpProblem, previous: PlanTick | None = None,
              config: PlannerConfig = PlannerConfig(), solver: Solver | None = None,
              error_target=None) -> PlanTick:
    """Solve one receding-horizon problem from ``current`` and return its first control.

    ``reference`` is a target state or a per-node reference array.
    ``error_target`` (defaults to the final reference node) is the state the
    reported error is measured against.
    """
    t0 = time.perf_counter()
    current = np.asarray(current, dtype=float)
    u_prev = previous.control if previous is not None else template.u_prev
    changes = dict(x0=current, reference=reference, u_prev=u_prev)
    if template.obstacles:
        # never demand more clearance than the measured state has, so braking stays feasible
        changes["obstacle_margin"] = min(template.obstacle_margin,
                                         min_clearance(current, template.obstacles, template.params))
    problem = template.updated(**changes)
    nlp = transcribe(problem, config)
    target = problem.reference[-1] if error_target is None else np.asarray(error_target, dtype=float)
    err = terminal_error(current, target)

    multipliers, penalty = None, None
    if config.warm_start and previous is not None and previous.solution is not None \
            and previous.solution.w_star.size == nlp.n:
        w0 = shift_guess(nlp, previous.solution.w_star, current)
        shifted = shift_multipliers(nlp, previous.solution.multipliers.eq, previous.solution.multipliers.ineq)
        if shifted is not None:
            multipliers = Multipliers(np.zeros(nlp.n), *shifted)
            penalty = max(config.solver_options.penalty_init, previous.solution.penalty)
    else:
        w0 = initial_guess(problem, nlp.layout, integrator=config.integrator)

    solver = solver or AugmentedLagrangian()
    sol = _solve(solver, nlp, w0, config, multipliers, penalty)
    X, U = nlp.states_controls(sol.w_star)

    if _accepted(sol):
        control = feasible_control(U[0], problem)
    else:
        control = safe_stop(problem)
    return PlanTick(control=control, predicted=X, controls=U, status=sol.status,
                    solve_time=time.perf_counter() - t0, error=err, iterations=sol.iterations,
                    objective=sol.objective_value, constraint_violation=sol.constraint_violation,
                    solution=sol, problem=problem)


def _solve(solver, nlp, w0, config, multipliers=None, penalty=None) -> NlpSolution:
    if isinstance(solver, AugmentedLagrangian):
        return solver.solve(nlp, w0, config.solver_options, multipliers, penalty=penalty)
    return solver.solve(nlp, w0, config.solver_options, multipliers)


def _accepted(sol: NlpSolution) -> bool:
    return sol.status == nlp_mod.OPTIMAL or (
        sol.status == nlp_mod.MAX_ITER and sol.constraint_violation <= ACCEPT_VIOLATION)


# A mission has stalled when the pose spread over the stall window stays below these.
STALL_DISTANCE = 1e-3  # m
STALL_ANGLE = 1e-3  # rad


def _stalled(log: MissionLog, window: int | None) -> bool:
    """The plant pose has not changed appreciably over the last ``window`` ticks."""
    if window is None or len(log.rows) <= window:
        return False
    states = np.array([r.state for r in log.rows[-window - 1:]])
    span = states.max(axis=0) - states.min(axis=0)
    return bool(max(span[0], span[1]) <= STALL_DISTANCE and max(span[2], span[3]) <= STALL_ANGLE)


def default_max_ticks(initial, target, template: OcpProblem) -> int:
    dist = math.hypot(target[0] - initial[0], target[1] - initial[1])
    return max(50, int(math.ceil(4 * dist / (template.params.v_max * template.dt))))


def run_mission(initial, target, template: OcpProblem, config: PlannerConfig = PlannerConfig(),
                plant: Simulator | None = None, solver: Solver | None = None,
                reference_fn=None, path_error_fn=None, done_fn=None, error_fn=None,
                keep_predictions: bool = False) -> MissionLog:
    """Closed-loop drive from ``initial`` until the error to ``target`` drops below the threshold.

    The mission ends "timed-out" after ``config.max_ticks`` and "stalled" once the
    plant pose has not changed appreciably for ``config.stall_ticks`` ticks.

    ``reference_fn(state, previous_reference) -> reference`` replaces the fixed
    target (used by path following); ``path_error_fn(state) -> meters`` feeds the
    path-error column; ``done_fn(state, log) -> bool`` adds a mission-specific
    stop condition; ``error_fn(state) -> float`` replaces the terminal error to
    ``target`` in the log.
    """
    initial = np.asarray(initial, dtype=float)
    target = np.asarray(target, dtype=float)
    if error_fn is None:
        def error_fn(x):
            return terminal_error(x, target)
    if plant is None:
        plant = Simulator(initial, template.params)
    max_ticks = config.max_ticks or default_max_ticks(initial, target, template)
    log = MissionLog(initial_state=plant.state.copy())
    t_start = time.perf_counter()
    state = plant.state.copy()
    previous = None
    reference = target
    for tick in range(max_ticks + 1):
        err = error_fn(state)
        finished = done_fn(state, log) if done_fn is not None else err <= config.min_allowable_error
        if finished:
            log.status = "success"
            break
        if tick == max_ticks:
            log.status = "timed-out"
            break
        if _stalled(log, config.stall_ticks):
            log.status = "stalled"
            break
        if reference_fn is not None:
            reference = reference_fn(state, reference)
        pt = plan_step(state, reference, template, previous, config, solver, error_target=target)
        plant.add_wall_time(pt.solve_time)
        log.rows.append(TickRow(
            tick=tick, time=tick * template.dt, state=state.copy(), control=pt.control.copy(),
            reference=np.asarray(pt.problem.reference[0]).copy(), pred_end=pt.predicted[-1].copy(),
            error=err, position_error=position_error(state, target),
            path_error=path_error_fn(state) if path_error_fn is not None else position_error(state, target),
            clearance=min_clearance(state, template.obstacles, template.params),
            solve_time=pt.solve_time, iterations=pt.iterations, status=pt.status,
        ))
        if keep_predictions:
            log.predictions.append((pt.predicted, pt.controls))
        state = plant.apply(pt.control, template.dt)
        previous = pt
    log.final_state = state.copy()
    log.final_error = error_fn(state)
    log.final_position_error = position_error(state, target)
    log.final_clearance = min_clearance(state, template.obstacles, template.params)
    log.wall_time = time.perf_counter() - t_start
    if plant.sim_time > 0:
        log.real_time_factor = plant.real_time_factor()
    return log
