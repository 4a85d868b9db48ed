"""Finite-horizon optimal control problem for the tractor-trailer."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .vehicle_model import VehicleParams, body_circles

TERMINAL_MODES = ("cost-only", "equality", "ball")


@dataclass(frozen=True)
class Obstacle:
    center: tuple[float, float]
    radius: float
    r_safe: float = 0.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"obstacle radius must be > 0, got {self.radius!r}")
        if not self.r_safe >= 0:
            raise ValueError(f"obstacle r_safe must be >= 0, got {self.r_safe!r}")


def _check_spd(name, m, size):
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape != (size, size):
        raise ValueError(f"{name} must be {size}x{size}, got shape {m.shape}")
    if not np.allclose(m, m.T):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(m).min() <= 0:
        raise ValueError(f"{name} must be positive definite")
    return m


@dataclass(frozen=True)
class Weights:
    Q: np.ndarray = field(default_factory=lambda: np.diag([5.0, 5.0, 1.0, 1.0]))
    R: np.ndarray = field(default_factory=lambda: np.diag([0.5, 0.05]))
    P: np.ndarray | None = None

    def __post_init__(self):
        Q = _check_spd("Q", self.Q, 4)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", _check_spd("R", self.R, 2))
        object.__setattr__(self, "P", _check_spd("P", 10.0 * Q if self.P is None else self.P, 4))

    def scaled(self, c: float) -> "Weights":
        return Weights(Q=c * self.Q, R=c * self.R, P=c * self.P)


def _box(lower, upper, size, name):
    lo = np.asarray(lower, dtype=float).reshape(-1)
    hi = np.asarray(upper, dtype=float).reshape(-1)
    if lo.shape != (size,) or hi.shape != (size,):
        raise ValueError(f"{name} bounds must have length {size}")
    if np.any(lo > hi):
        raise ValueError(f"{name}: lower bound exceeds upper bound")
    return lo, hi


def default_boxes(params: VehicleParams, direction: str = "forward",
                  x_range=(-np.inf, np.inf), y_range=(-np.inf, np.inf)):
    """State, control and rate boxes implied by the vehicle limits and travel direction."""
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    state_box = (
        np.array([x_range[0], y_range[0], -params.theta1_max, -np.inf]),
        np.array([x_range[1], y_range[1], params.theta1_max, np.inf]),
    )
    v_lo, v_hi = (0.0, params.v_max) if direction == "forward" else (-params.v_max, 0.0)
    control_box = (np.array([v_lo, -params.phi_max]), np.array([v_hi, params.phi_max]))
    rate_box = (np.array([-params.dv_max, -params.dphi_max]), np.array([params.dv_max, params.dphi_max]))
    return state_box, control_box, rate_box


@dataclass(frozen=True)
class OcpProblem:
    """Immutable description of one receding-horizon planning problem.

    ``reference`` is either a single 4-vector (drive-to-pose) or an
    ``(horizon + 1, 4)`` array of per-node references.  ``u_prev`` is the
    control applied at the previous tick; the rate limits on the first
    control are taken relative to it.
    """

    horizon: int
    dt: float
    params: VehicleParams
    x0: np.ndarray
    reference: np.ndarray
    weights: Weights = field(default_factory=Weights)
    u_ref: np.ndarray = field(default_factory=lambda: np.zeros(2))
    obstacles: tuple[Obstacle, ...] = ()
    state_box: tuple[np.ndarray, np.ndarray] | None = None
    control_box: tuple[np.ndarray, np.ndarray] | None = None
    rate_box: tuple[np.ndarray, np.ndarray] | None = None
    u_prev: np.ndarray = field(default_factory=lambda: np.zeros(2))
    terminal_mode: str = "cost-only"
    terminal_radius: float = 0.0
    soft_state_penalty: float | None = None
    direction: str = "forward"
    obstacle_margin: float = 0.0  # required predicted clearance; absorbs plant/model mismatch

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 2:
            raise ValueError(f"horizon must be an integer >= 2, got {self.horizon!r}")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be > 0, got {self.dt!r}")
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if x0.shape != (4,) or not np.all(np.isfinite(x0)):
            raise ValueError("x0 must be a finite 4-vector")
        object.__setattr__(self, "x0", x0)
        ref = np.asarray(self.reference, dtype=float)
        if ref.shape == (4,):
            ref = np.tile(ref, (self.horizon + 1, 1))
        if ref.shape != (self.horizon + 1, 4):
            raise ValueError(f"reference must be a 4-vector or ({self.horizon + 1}, 4) array, got {ref.shape}")
        object.__setattr__(self, "reference", ref)
        object.__setattr__(self, "u_ref", np.asarray(self.u_ref, dtype=float).reshape(2))
        object.__setattr__(self, "u_prev", np.asarray(self.u_prev, dtype=float).reshape(2))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

        sb, cb, rb = default_boxes(self.params, self.direction)
        state_box = _box(*(self.state_box or sb), 4, "state_box")
        if state_box[0][2] < -self.params.theta1_max or state_box[1][2] > self.params.theta1_max:
            raise ValueError("state_box must embed |theta1| <= theta1_max")
        object.__setattr__(self, "state_box", state_box)
        object.__setattr__(self, "control_box", _box(*(self.control_box or cb), 2, "control_box"))
        object.__setattr__(self, "rate_box", _box(*(self.rate_box or rb), 2, "rate_box"))
        if self.terminal_mode not in TERMINAL_MODES:
            raise ValueError(f"terminal_mode must be one of {TERMINAL_MODES}, got {self.terminal_mode!r}")
        if self.terminal_mode == "ball" and not self.terminal_radius > 0:
            raise ValueError("ball terminal mode requires terminal_radius > 0")
        if self.soft_state_penalty is not None and not self.soft_state_penalty > 0:
            raise ValueError("soft_state_penalty must be > 0 when given")
        if not np.isfinite(self.obstacle_margin):
            raise ValueError("obstacle_margin must be finite")

    def updated(self, **changes) -> "OcpProblem":
        return replace(self, **changes)


def _quad(d, M):
    d = np.asarray(d, dtype=float)
    return float(d @ M @ d)


def running_cost(x, u, x_ref, u_ref, w: Weights) -> float:
    return _quad(np.subtract(x, x_ref), w.Q) + _quad(np.subtract(u, u_ref), w.R)


def terminal_cost(xN, x_refN, w: Weights) -> float:
    return _quad(np.subtract(xN, x_refN), w.P)


def objective(trajectory: Sequence, controls: Sequence, problem: OcpProblem) -> float:
    """Sum of running costs over the horizon plus the terminal cost."""
    X = np.asarray(trajectory, dtype=float)
    U = np.asarray(controls, dtype=float)
    N = problem.horizon
    if X.shape != (N + 1, 4) or U.shape != (N, 2):
        raise ValueError(f"expected trajectory ({N + 1}, 4) and controls ({N}, 2), "
                         f"got {X.shape} and {U.shape}")
    total = 0.0
    for k in range(N):
        total += running_cost(X[k], U[k], problem.reference[k], problem.u_ref, problem.weights)
    return total + terminal_cost(X[N], problem.reference[N], problem.weights)


def obstacle_violation(x, obs: Obstacle, params: VehicleParams) -> float:
    """Signed clearance in meters between the closer body circle and the obstacle; >= 0 is safe."""
    circles = body_circles(x, params)
    dist = np.linalg.norm(circles.centers - np.asarray(obs.center, dtype=float), axis=1)
    return float(np.min(dist - (obs.radius + circles.radius + obs.r_safe)))


def min_clearance(x, obstacles: Sequence[Obstacle], params: VehicleParams) -> float:
    if not obstacles:
        return float("inf")
    return min(obstacle_violation(x, o, params) for o in obstacles)


def terminal_error(x, x_s) -> float:
    """Euclidean norm of the raw state difference (angles not wrapped)."""
    return float(np.linalg.norm(np.subtract(x, x_s)))


def position_error(x, x_s) -> float:
    return float(np.hypot(x[0] - x_s[0], x[1] - x_s[1]))
