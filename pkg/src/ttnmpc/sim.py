"""Headless plant simulator standing in for a physics engine."""

from __future__ import annotations

import time

import numpy as np

from .vehicle_model import INTEGRATORS, VehicleParams


class Simulator:
    """Propagates the true vehicle state under zero-order-hold controls.

    Optional first-order actuator lag (time constants ``tau_v``, ``tau_phi``;
    zero means ideal) and Gaussian state noise per substep (``noise_std``,
    one standard deviation per state component, drawn from a seeded
    generator).
    """

    def __init__(self, state, params: VehicleParams, integrator: str = "rk4", substeps: int = 5,
                 noise_std=None, tau_v: float = 0.0, tau_phi: float = 0.0, seed: int | None = 0):
        if integrator not in INTEGRATORS:
            raise ValueError(f"unknown integrator {integrator!r}")
        if int(substeps) != substeps or substeps < 1:
            raise ValueError(f"substeps must be an integer >= 1, got {substeps!r}")
        noise = np.zeros(4) if noise_std is None else np.broadcast_to(np.asarray(noise_std, dtype=float), (4,)).copy()
        if np.any(noise < 0):
            raise ValueError("noise standard deviations must be >= 0")
        if tau_v < 0 or tau_phi < 0:
            raise ValueError("actuator time constants must be >= 0")
        self.state = np.asarray(state, dtype=float).copy()
        self.params = params
        self.integrator = integrator
        self.substeps = int(substeps)
        self.noise_std = noise
        self.tau = np.array([tau_v, tau_phi], dtype=float)
        self.rng = np.random.default_rng(seed)
        self.actuator = np.zeros(2)
        self.sim_time = 0.0
        self.wall_time = 0.0

    def apply(self, control, dt: float) -> np.ndarray:
        """Advance the plant by ``dt`` seconds and return the measured state."""
        if not (np.isfinite(dt) and dt > 0):
            raise ValueError(f"dt must be > 0, got {dt!r}")
        t0 = time.perf_counter()
        step = INTEGRATORS[self.integrator][0]
        cmd = np.asarray(control, dtype=float)
        h = dt / self.substeps
        x = self.state
        for _ in range(self.substeps):
            lagged = self.tau > 0
            u = np.where(lagged, self.actuator, cmd)
            self.actuator = np.where(lagged, self.actuator + (cmd - self.actuator) * (1 - np.exp(-h / np.where(lagged, self.tau, 1.0))), cmd)
            x = step(x, u, self.params, h)
            if np.any(self.noise_std > 0):
                x = x + self.rng.normal(0.0, 1.0, 4) * self.noise_std
        self.state = x
        self.sim_time += dt
        self.wall_time += time.perf_counter() - t0
        return self.state.copy()

    def add_wall_time(self, seconds: float):
        """Charge controller time to the plant clock so the factor covers the whole loop."""
        self.wall_time += seconds

    def real_time_factor(self) -> float:
        """Simulated seconds per wall-clock second."""
        if self.sim_time == 0.0:
            raise RuntimeError("real_time_factor needs at least one apply() call")
        return self.sim_time / max(self.wall_time, 1e-12)
