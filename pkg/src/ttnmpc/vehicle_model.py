"""Kinematics of a standard (on-axle hitched) tractor-trailer.

State vector: [x2, y2, theta1, theta2]
    x2, y2: trailer axle midpoint S2 (meters)
    theta1: hitch angle, tractor relative to trailer (rad)
    theta2: trailer orientation, measured from the +y axis (rad)

Control vector: [v, phi]
    v: signed velocity measured at S2 (m/s), negative when reversing
    phi: tractor front-wheel steering angle (rad)

The trailer forward unit vector is (sin theta2, -cos theta2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MODEL_VARIANTS = ("paper", "two-length")


class State(np.ndarray):
    """Thin 4-vector view with named accessors; any float array of shape (4,) works."""

    def __new__(cls, x2=0.0, y2=0.0, theta1=0.0, theta2=0.0):
        return np.asarray([x2, y2, theta1, theta2], dtype=float).view(cls)

    x2 = property(lambda self: float(self[0]))
    y2 = property(lambda self: float(self[1]))
    theta1 = property(lambda self: float(self[2]))
    theta2 = property(lambda self: float(self[3]))


class Control(np.ndarray):
    def __new__(cls, v=0.0, phi=0.0):
        return np.asarray([v, phi], dtype=float).view(cls)

    v = property(lambda self: float(self[0]))
    phi = property(lambda self: float(self[1]))


@dataclass(frozen=True)
class VehicleParams:
    """Geometry and actuator limits. Defaults are the benchmark vehicle."""

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

    def __post_init__(self):
        if self.r_body is None:
            object.__setattr__(self, "r_body", float(self.width))
        for name in ("l1", "l2", "width", "v_max", "phi_max", "theta1_max",
                     "dv_max", "dphi_max", "r_body"):
            val = getattr(self, name)
            if not np.isfinite(val) or val <= 0:
                raise ValueError(f"VehicleParams.{name} must be finite and > 0, got {val!r}")
        if self.variant not in MODEL_VARIANTS:
            raise ValueError(f"unknown model variant {self.variant!r}; expected one of {MODEL_VARIANTS}")

    @property
    def steer_length(self) -> float:
        """Length dividing tan(phi) in the hitch-angle rate."""
        return self.l2 if self.variant == "paper" else self.l1


@dataclass(frozen=True)
class BodyCircles:
    centers: np.ndarray = field(repr=False)  # (2, 2): trailer circle, hitch circle
    radius: float = 1.0


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError(f"non-finite input: {a!r}")


def dynamics(state, control, params: VehicleParams) -> np.ndarray:
    """Continuous-time state derivative."""
    x = np.asarray(state, dtype=float)
    u = np.asarray(control, dtype=float)
    _check_finite(x, u)
    return _rhs(x, u, params)


def _rhs(x, u, params):
    # Unchecked, broadcasts over leading axes: x (..., 4), u (..., 2).
    th1, th2 = x[..., 2], x[..., 3]
    v, phi = u[..., 0], u[..., 1]
    c1, s1 = np.cos(th1), np.sin(th1)
    return np.stack(
        [
            v * c1 * np.sin(th2),
            -v * c1 * np.cos(th2),
            v * (s1 / params.l2 + np.tan(phi) / params.steer_length),
            v * s1 / params.l2,
        ],
        axis=-1,
    )


def _rhs_jacobians(x, u, params):
    """Partial derivatives of the state derivative, shapes (..., 4, 4) and (..., 4, 2)."""
    th1, th2 = x[..., 2], x[..., 3]
    v, phi = u[..., 0], u[..., 1]
    c1, s1 = np.cos(th1), np.sin(th1)
    c2, s2 = np.cos(th2), np.sin(th2)
    l2, ls = params.l2, params.steer_length
    shape = np.shape(th1)
    A = np.zeros(shape + (4, 4))
    B = np.zeros(shape + (4, 2))
    A[..., 0, 2] = -v * s1 * s2
    A[..., 0, 3] = v * c1 * c2
    A[..., 1, 2] = v * s1 * c2
    A[..., 1, 3] = v * c1 * s2
    A[..., 2, 2] = v * c1 / l2
    A[..., 3, 2] = v * c1 / l2
    B[..., 0, 0] = c1 * s2
    B[..., 1, 0] = -c1 * c2
    B[..., 2, 0] = s1 / l2 + np.tan(phi) / ls
    B[..., 3, 0] = s1 / l2
    B[..., 2, 1] = v / (ls * np.cos(phi) ** 2)
    return A, B


def _check_dt(dt):
    if not (np.isfinite(dt) and dt > 0):
        raise ValueError(f"dt must be > 0, got {dt!r}")


def step_euler(state, control, params: VehicleParams, dt: float) -> np.ndarray:
    """One explicit Euler step: x + dt * f(x, u)."""
    _check_dt(dt)
    x = np.asarray(state, dtype=float)
    return x + dt * dynamics(x, control, params)


def step_rk4(state, control, params: VehicleParams, dt: float) -> np.ndarray:
    """Classical RK4 step with the control held constant over the interval."""
    _check_dt(dt)
    x = np.asarray(state, dtype=float)
    u = np.asarray(control, dtype=float)
    _check_finite(x, u)
    return _rk4(x, u, params, dt)


def _rk4(x, u, params, dt):
    k1 = _rhs(x, u, params)
    k2 = _rhs(x + 0.5 * dt * k1, u, params)
    k3 = _rhs(x + 0.5 * dt * k2, u, params)
    k4 = _rhs(x + dt * k3, u, params)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _rhs_weighted_hessian(x, u, params, mu):
    """sum_i mu_i * Hessian of the i-th derivative component w.r.t. z = (x, u), shape (..., 6, 6)."""
    th1, th2 = x[..., 2], x[..., 3]
    v, phi = u[..., 0], u[..., 1]
    c1, s1 = np.cos(th1), np.sin(th1)
    c2, s2 = np.cos(th2), np.sin(th2)
    l2, ls = params.l2, params.steer_length
    sec2 = 1.0 / np.cos(phi) ** 2
    m0, m1, m2, m3 = mu[..., 0], mu[..., 1], mu[..., 2], mu[..., 3]
    H = np.zeros(np.shape(th1) + (6, 6))
    H[..., 2, 2] = -v * c1 * s2 * m0 + v * c1 * c2 * m1 - v * s1 / l2 * (m2 + m3)
    H[..., 2, 3] = -v * s1 * c2 * m0 - v * s1 * s2 * m1
    H[..., 2, 4] = -s1 * s2 * m0 + s1 * c2 * m1 + c1 / l2 * (m2 + m3)
    H[..., 3, 3] = -v * c1 * s2 * m0 + v * c1 * c2 * m1
    H[..., 3, 4] = c1 * c2 * m0 + c1 * s2 * m1
    H[..., 4, 5] = sec2 / ls * m2
    H[..., 5, 5] = 2.0 * v * sec2 * np.tan(phi) / ls * m2
    for i, j in ((2, 3), (2, 4), (3, 4), (4, 5)):
        H[..., j, i] = H[..., i, j]
    return H


def _euler(x, u, params, dt):
    return x + dt * _rhs(x, u, params)


def _euler_jacobians(x, u, params, dt):
    A, B = _rhs_jacobians(x, u, params)
    return np.eye(4) + dt * A, dt * B


def _rk4_jacobians(x, u, params, dt):
    # Forward-mode sensitivities through the four stages.
    I = np.eye(4)
    k1 = _rhs(x, u, params)
    A1, B1 = _rhs_jacobians(x, u, params)
    x2 = x + 0.5 * dt * k1
    k2 = _rhs(x2, u, params)
    A2, B2 = _rhs_jacobians(x2, u, params)
    x3 = x + 0.5 * dt * k2
    k3 = _rhs(x3, u, params)
    A3, B3 = _rhs_jacobians(x3, u, params)
    x4 = x + dt * k3
    A4, B4 = _rhs_jacobians(x4, u, params)

    dk1x, dk1u = A1, B1
    dk2x = A2 @ (I + 0.5 * dt * dk1x)
    dk2u = A2 @ (0.5 * dt * dk1u) + B2
    dk3x = A3 @ (I + 0.5 * dt * dk2x)
    dk3u = A3 @ (0.5 * dt * dk2u) + B3
    dk4x = A4 @ (I + dt * dk3x)
    dk4u = A4 @ (dt * dk3u) + B4
    Fx = I + dt / 6.0 * (dk1x + 2 * dk2x + 2 * dk3x + dk4x)
    Fu = dt / 6.0 * (dk1u + 2 * dk2u + 2 * dk3u + dk4u)
    return Fx, Fu


INTEGRATORS = {
    "euler": (_euler, _euler_jacobians),
    "rk4": (_rk4, _rk4_jacobians),
}


def ackermann_outer(phi_inner: float, width: float, wheelbase: float) -> float:
    """Outer-wheel steering angle from cot(phi_o) = cot(phi_i) + w / l."""
    if not (0.0 < phi_inner < np.pi / 2):
        raise ValueError(f"phi_inner must lie in (0, pi/2), got {phi_inner!r}")
    if wheelbase <= 0 or width < 0:
        raise ValueError("wheelbase must be > 0 and width >= 0")
    cot_outer = 1.0 / np.tan(phi_inner) + width / wheelbase
    return float(np.arctan(1.0 / cot_outer))


def hitch_point(state, params: VehicleParams) -> np.ndarray:
    x = np.asarray(state, dtype=float)
    return np.array([x[0] + params.l2 * np.sin(x[3]), x[1] - params.l2 * np.cos(x[3])])


def body_circles(state, params: VehicleParams) -> BodyCircles:
    x = np.asarray(state, dtype=float)
    centers = np.array([x[:2], hitch_point(x, params)])
    return BodyCircles(centers=centers, radius=params.r_body)
