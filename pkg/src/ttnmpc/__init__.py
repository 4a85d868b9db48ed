"""Nonlinear MPC local planning for on-axle hitched tractor-trailer vehicles."""

from .guidance import (
    GuidanceConfig,
    WaypointPath,
    circle_arc,
    lookahead_lambda,
    nearest_waypoint,
    read_waypoints,
    run_obstacle_mission,
    run_path_following,
    select_target,
)
from .mission_log import MissionLog, Summary
from .nlp import AugmentedLagrangian, NlpSolution, SolverOptions
from .ocp import Obstacle, OcpProblem, Weights, default_boxes, min_clearance, terminal_error
from .planner import PlannerConfig, PlanTick, plan_step, run_mission
from .sim import Simulator
from .transcription import check_derivatives, transcribe_multiple_shooting, transcribe_single_shooting
from .vehicle_model import Control, State, VehicleParams, body_circles, dynamics, step_euler, step_rk4

__version__ = "0.1.0"

__all__ = [
    "AugmentedLagrangian", "Control", "GuidanceConfig", "MissionLog", "NlpSolution", "Obstacle",
    "OcpProblem", "PlanTick", "PlannerConfig", "Simulator", "SolverOptions", "State", "Summary",
    "VehicleParams", "WaypointPath", "Weights", "body_circles", "check_derivatives", "circle_arc",
    "default_boxes", "dynamics", "lookahead_lambda", "min_clearance", "nearest_waypoint", "plan_step",
    "read_waypoints", "run_mission", "run_obstacle_mission", "run_path_following", "select_target",
    "step_euler", "step_rk4", "terminal_error", "transcribe_multiple_shooting",
    "transcribe_single_shooting",
]
