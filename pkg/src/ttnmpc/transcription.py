"""Direct multiple shooting and single shooting transcriptions of an OcpProblem.

Both produce an :class:`NlpProblem` of the form

    min f(w)  s.t.  eq(w) = 0,  ineq_lb <= ineq(w) <= ineq_ub,  lbx <= w <= ubx

with analytic first derivatives.  Multiple shooting packs the decision vector
as [s_0, q_0, s_1, q_1, ..., q_{N-1}, s_N]; single shooting keeps only the
controls [q_0, ..., q_{N-1}] and rolls the states out inside the evaluators.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .ocp import OcpProblem
from .vehicle_model import INTEGRATORS, _rhs_weighted_hessian, hitch_point

NX, NU = 4, 2


@dataclass(frozen=True)
class DecisionLayout:
    horizon: int
    kind: str = "multiple"  # "multiple" | "single"
    n_states: int = NX
    n_controls: int = NU

    @property
    def size(self) -> int:
        N = self.horizon
        if self.kind == "multiple":
            return NX * (N + 1) + NU * N
        return NU * N

    def state_index(self, k: int) -> np.ndarray:
        if self.kind != "multiple":
            raise ValueError("single-shooting layout carries no states")
        return 6 * k + np.arange(NX)

    def control_index(self, k: int) -> np.ndarray:
        if self.kind == "multiple":
            return 6 * k + NX + np.arange(NU)
        return NU * k + np.arange(NU)


def unpack(w, layout: DecisionLayout):
    """Split a decision vector into (states, controls).

    For the single-shooting layout ``states`` is None.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (layout.size,):
        raise ValueError(f"decision vector has length {w.size}, layout expects {layout.size}")
    N = layout.horizon
    if layout.kind == "single":
        return None, w.reshape(N, NU).copy()
    body = w[: 6 * N].reshape(N, 6)
    states = np.vstack([body[:, :NX], w[6 * N:][None, :]])
    return states, body[:, NX:].copy()


def pack(states, controls, layout: DecisionLayout) -> np.ndarray:
    U = np.asarray(controls, dtype=float).reshape(layout.horizon, NU)
    if layout.kind == "single":
        return U.reshape(-1).copy()
    X = np.asarray(states, dtype=float).reshape(layout.horizon + 1, NX)
    return np.concatenate([np.hstack([X[:-1], U]).reshape(-1), X[-1]])


@dataclass
class NlpProblem:
    layout: DecisionLayout
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    eq: Callable[[np.ndarray], np.ndarray]
    eq_jacobian: Callable[[np.ndarray], sp.csr_matrix]
    ineq: Callable[[np.ndarray], np.ndarray]
    ineq_jacobian: Callable[[np.ndarray], sp.csr_matrix]
    ineq_lb: np.ndarray
    ineq_ub: np.ndarray
    lbx: np.ndarray
    ubx: np.ndarray
    hessian: Callable[[np.ndarray], sp.csr_matrix] | None = None  # objective Hessian
    # (w, mu_eq, mu_ineq) -> sum_i mu_i * Hessian(constraint_i)
    constraint_hessian: Callable[..., sp.csr_matrix] | None = None
    ocp: OcpProblem | None = None
    integrator: str = "euler"

    @property
    def n(self) -> int:
        return self.layout.size

    @property
    def n_eq(self) -> int:
        return self.eq(np.zeros(self.n)).size

    @property
    def n_ineq(self) -> int:
        return self.ineq_lb.size

    def states_controls(self, w):
        """Trajectory and controls encoded by ``w`` (rolled out for single shooting)."""
        X, U = unpack(w, self.layout)
        if X is None:
            X = rollout(self.ocp.x0, U, self.ocp, self.integrator)
        return X, U


def rollout(x0, controls, problem: OcpProblem, integrator: str = "euler") -> np.ndarray:
    step = INTEGRATORS[integrator][0]
    U = np.asarray(controls, dtype=float)
    X = np.empty((U.shape[0] + 1, NX))
    X[0] = x0
    for k in range(U.shape[0]):
        X[k + 1] = step(X[k], U[k], problem.params, problem.dt)
    return X


def scale_objective(nlp: NlpProblem, c: float) -> NlpProblem:
    """Copy of ``nlp`` with the objective multiplied by ``c``."""
    f, g, h = nlp.objective, nlp.gradient, nlp.hessian
    changes = {"objective": lambda w: c * f(w), "gradient": lambda w: c * g(w)}
    if h is not None:
        changes["hessian"] = lambda w: c * h(w)
    return NlpProblem(**{**nlp.__dict__, **changes})


# --------------------------------------------------------------------------
# shared cost / constraint pieces, vectorized over horizon nodes


class _Costs:
    """Quadratic tracking cost and the soft-state penalty on (X, U) arrays."""

    def __init__(self, problem: OcpProblem):
        self.p = problem
        self.Q, self.R, self.P = problem.weights.Q, problem.weights.R, problem.weights.P
        lo, hi = problem.state_box
        self.soft = problem.soft_state_penalty
        if self.soft is not None:
            # hitch bound stays hard; only the other finite state bounds are relaxed
            self.soft_mask = np.isfinite(lo) | np.isfinite(hi)
            self.soft_mask[2] = False
        self.slo, self.shi = lo, hi

    def value(self, X, U):
        p = self.p
        dX = X - p.reference
        dU = U - p.u_ref
        v = np.einsum("ki,ij,kj->", dX[:-1], self.Q, dX[:-1])
        v += np.einsum("ki,ij,kj->", dU, self.R, dU)
        v += dX[-1] @ self.P @ dX[-1]
        if self.soft is not None:
            v += self.soft * np.sum(self._excess(X) ** 2)
        return float(v)

    def grads(self, X, U):
        p = self.p
        dX = X - p.reference
        gX = np.empty_like(X)
        gX[:-1] = 2.0 * dX[:-1] @ self.Q
        gX[-1] = 2.0 * self.P @ dX[-1]
        gU = 2.0 * (U - p.u_ref) @ self.R
        if self.soft is not None:
            gX += 2.0 * self.soft * self._excess(X)
        return gX, gU

    def hess_blocks(self, X):
        """Per-node state Hessians (N+1, 4, 4) and control Hessian (2, 2)."""
        N = X.shape[0] - 1
        HX = np.empty((N + 1, 4, 4))
        HX[:-1] = 2.0 * self.Q
        HX[-1] = 2.0 * self.P
        if self.soft is not None:
            active = (self._excess(X) != 0.0).astype(float)
            HX += 2.0 * self.soft * active[:, :, None] * np.eye(4)
        return HX, 2.0 * self.R

    def _excess(self, X):
        e = np.maximum(X - self.shi, 0.0) - np.maximum(self.slo - X, 0.0)
        e[0] = 0.0
        e[:, ~self.soft_mask] = 0.0
        return e


class _Obstacles:
    """Clearance of both body circles to every obstacle at nodes 1..N."""

    def __init__(self, problem: OcpProblem):
        self.p = problem
        obs = problem.obstacles
        self.n_obs = len(obs)
        if obs:
            self.centers = np.array([o.center for o in obs], dtype=float)
            self.radii = np.array([o.radius + o.r_safe + problem.params.r_body for o in obs])

    @property
    def count(self):
        return 2 * self.n_obs * self.p.horizon

    def value(self, X):
        """Clearances g of shape (N, n_obs, 2) for nodes 1..N."""
        l2 = self.p.params.l2
        Xn = X[1:]
        hx = Xn[:, 0] + l2 * np.sin(Xn[:, 3])
        hy = Xn[:, 1] - l2 * np.cos(Xn[:, 3])
        g = np.empty((Xn.shape[0], self.n_obs, 2))
        for c, (px, py) in enumerate(((Xn[:, 0], Xn[:, 1]), (hx, hy))):
            g[:, :, c] = np.hypot(px[:, None] - self.centers[:, 0], py[:, None] - self.centers[:, 1])
        return g - self.radii[None, :, None]

    def value_and_jac(self, X):
        """Returns g of shape (N, n_obs, 2) and dg/dx of shape (N, n_obs, 2, 4) for nodes 1..N."""
        l2 = self.p.params.l2
        Xn = X[1:]
        th2 = Xn[:, 3]
        hx = Xn[:, 0] + l2 * np.sin(th2)
        hy = Xn[:, 1] - l2 * np.cos(th2)
        pts = np.stack([Xn[:, :2], np.stack([hx, hy], axis=-1)], axis=1)  # (N, 2, 2)
        diff = pts[:, None, :, :] - self.centers[None, :, None, :]  # (N, n_obs, 2 circles, 2)
        dist = np.linalg.norm(diff, axis=-1)
        g = dist - self.radii[None, :, None]
        unit = diff / np.maximum(dist, 1e-12)[..., None]
        J = np.zeros(g.shape + (4,))
        J[..., 0] = unit[..., 0]
        J[..., 1] = unit[..., 1]
        # hitch circle moves with theta2: d(hx, hy)/dtheta2 = l2 * (cos, sin)
        dh = l2 * np.stack([np.cos(th2), np.sin(th2)], axis=-1)  # (N, 2)
        J[:, :, 1, 3] = np.einsum("noj,nj->no", unit[:, :, 1, :], dh)
        return g, J


# --------------------------------------------------------------------------
# multiple shooting


def transcribe_multiple_shooting(problem: OcpProblem, integrator: str = "euler") -> NlpProblem:
    if integrator not in INTEGRATORS:
        raise ValueError(f"unknown integrator {integrator!r}")
    step, step_jac = INTEGRATORS[integrator]
    N, dt, prm = problem.horizon, problem.dt, problem.params
    layout = DecisionLayout(N, "multiple")
    n = layout.size
    costs = _Costs(problem)
    obst = _Obstacles(problem)
    x0 = problem.x0
    terminal = problem.terminal_mode

    sidx = np.array([layout.state_index(k) for k in range(N + 1)])  # (N+1, 4)
    cidx = np.array([layout.control_index(k) for k in range(N)])  # (N, 2)

    # equality Jacobian pattern: initial block, then per interval [-Fx | -Fu | I]
    rows, cols = [np.arange(4)], [sidx[0]]
    r = 4 + 4 * np.arange(N)[:, None, None] + np.arange(4)[None, :, None]  # (N, 4, 1)
    rows.append(np.broadcast_to(r, (N, 4, 4)).ravel()); cols.append(np.broadcast_to(sidx[:-1, None, :], (N, 4, 4)).ravel())
    rows.append(np.broadcast_to(r, (N, 4, 2)).ravel()); cols.append(np.broadcast_to(cidx[:, None, :], (N, 4, 2)).ravel())
    rows.append((4 + 4 * np.arange(N)[:, None] + np.arange(4)).ravel()); cols.append(sidx[1:].ravel())
    n_eq = 4 * (N + 1)
    if terminal == "equality":
        rows.append(n_eq + np.arange(4)); cols.append(sidx[N])
        n_eq += 4
    eq_rows, eq_cols = np.concatenate(rows), np.concatenate(cols)

    def unpack_fast(w):
        body = w[: 6 * N].reshape(N, 6)
        X = np.vstack([body[:, :4], w[6 * N:][None, :]])
        return X, body[:, 4:]

    def objective(w):
        X, U = unpack_fast(w)
        return costs.value(X, U)

    def gradient(w):
        X, U = unpack_fast(w)
        gX, gU = costs.grads(X, U)
        return np.concatenate([np.hstack([gX[:-1], gU]).ravel(), gX[-1]])

    def eq(w):
        X, U = unpack_fast(w)
        out = [X[0] - x0, (X[1:] - step(X[:-1], U, prm, dt)).ravel()]
        if terminal == "equality":
            out.append(X[-1] - problem.reference[-1])
        return np.concatenate(out)

    def eq_jacobian(w):
        X, U = unpack_fast(w)
        Fx, Fu = step_jac(X[:-1], U, prm, dt)
        data = [np.ones(4), (-Fx).ravel(), (-Fu).ravel(), np.ones(4 * N)]
        if terminal == "equality":
            data.append(np.ones(4))
        return sp.csr_matrix((np.concatenate(data), (eq_rows, eq_cols)), shape=(n_eq, n))

    # inequalities: rate limits (linear), obstacle clearances, terminal ball
    lb, ub = [], []
    rate_rows, rate_cols, rate_data = [], [], []
    for k in range(N):
        for j in range(2):
            row = 2 * k + j
            rate_rows.append(row); rate_cols.append(cidx[k, j]); rate_data.append(1.0)
            if k > 0:
                rate_rows.append(row); rate_cols.append(cidx[k - 1, j]); rate_data.append(-1.0)
    n_rate = 2 * N
    rate_offset = np.zeros(n_rate)
    rate_offset[:2] = problem.u_prev
    lb.append(np.tile(problem.rate_box[0], N) + rate_offset)
    ub.append(np.tile(problem.rate_box[1], N) + rate_offset)
    rate_J = sp.csr_matrix((rate_data, (rate_rows, rate_cols)), shape=(n_rate, n))

    n_obs_rows = obst.count
    if n_obs_rows:
        lb.append(np.full(n_obs_rows, problem.obstacle_margin)); ub.append(np.full(n_obs_rows, np.inf))
        # row order (node, obstacle, circle); each row touches the 4 state entries of its node
        node = np.repeat(np.arange(1, N + 1), 2 * obst.n_obs)
        obs_rows = np.repeat(n_rate + np.arange(n_obs_rows), 4)
        obs_cols = sidx[node].ravel()
    if terminal == "ball":
        lb.append(np.array([-np.inf])); ub.append(np.array([problem.terminal_radius ** 2]))
    ineq_lb, ineq_ub = np.concatenate(lb), np.concatenate(ub)
    n_in = ineq_lb.size

    def ineq(w):
        X, U = unpack_fast(w)
        out = [_rate_raw(U)]
        if n_obs_rows:
            out.append(obst.value(X).ravel())
        if terminal == "ball":
            d = X[-1] - problem.reference[-1]
            out.append(np.array([d @ d]))
        return np.concatenate(out)

    def _rate_raw(U):
        # raw q_k - q_{k-1} with q_{-1} = 0; u_prev is folded into the bounds
        d = U.copy()
        d[1:] -= U[:-1]
        return d.ravel()

    def ineq_jacobian(w):
        X, U = unpack_fast(w)
        blocks = [rate_J]
        if n_obs_rows:
            _, J = obst.value_and_jac(X)
            blocks.append(sp.csr_matrix((J.ravel(), (obs_rows - n_rate, obs_cols)), shape=(n_obs_rows, n)))
        if terminal == "ball":
            d = X[-1] - problem.reference[-1]
            blocks.append(sp.csr_matrix((2 * d, (np.zeros(4, int), sidx[N])), shape=(1, n)))
        return sp.vstack(blocks, format="csr")

    lbx = np.full(n, -np.inf)
    ubx = np.full(n, np.inf)
    slo, shi = problem.state_box
    if problem.soft_state_penalty is not None:
        slo, shi = slo.copy(), shi.copy()
        keep = ~costs.soft_mask
        slo = np.where(keep, slo, -np.inf)
        shi = np.where(keep, shi, np.inf)
    for k in range(1, N + 1):
        lbx[sidx[k]] = slo
        ubx[sidx[k]] = shi
    for k in range(N):
        lbx[cidx[k]] = problem.control_box[0]
        ubx[cidx[k]] = problem.control_box[1]

    hr = np.concatenate([np.repeat(sidx, 4, axis=1).ravel(), np.repeat(cidx, 2, axis=1).ravel()])
    hc = np.concatenate([np.tile(sidx, (1, 4)).ravel(), np.tile(cidx, (1, 2)).ravel()])

    def hessian(w):
        X, _ = unpack_fast(w)
        HX, HU = costs.hess_blocks(X)
        data = np.concatenate([HX.ravel(), np.tile(HU.ravel(), N)])
        return sp.csr_matrix((data, (hr, hc)), shape=(n, n))

    # constraint curvature: central differences of the analytic Jacobians, one node at a time
    h_fd = 1e-6
    ir6 = np.concatenate([sidx[:-1], cidx], axis=1)  # (N, 6) variables of interval k
    cr = np.concatenate([np.repeat(ir6, 6, axis=1).ravel(), np.repeat(sidx[1:], 4, axis=1).ravel(), np.repeat(sidx[-1:], 4, axis=1).ravel()])
    cc = np.concatenate([np.tile(ir6, (1, 6)).ravel(), np.tile(sidx[1:], (1, 4)).ravel(), np.tile(sidx[-1:], (1, 4)).ravel()])

    def constraint_hessian(w, mu_eq, mu_in):
        X, U = unpack_fast(w)
        Z = np.hstack([X[:-1], U])  # (N, 6)
        mu_dyn = -np.asarray(mu_eq)[4:4 + 4 * N].reshape(N, 4)  # defect = s_{k+1} - F
        if integrator == "euler":
            Hd = dt * _rhs_weighted_hessian(X[:-1], U, prm, mu_dyn)
        else:
            Hd = _fd_step_hessians(step_jac, Z, mu_dyn, prm, dt, h_fd)
        Hd = 0.5 * (Hd + Hd.transpose(0, 2, 1))
        Ho = np.zeros((N, 4, 4))
        mu_in = np.asarray(mu_in)
        if n_obs_rows:
            mu_o = mu_in[n_rate:n_rate + n_obs_rows].reshape(N, obst.n_obs, 2)
            Ho = _obstacle_hessians(obst, X, mu_o)
        Hb = np.zeros((1, 4, 4))
        if terminal == "ball":
            Hb[0] = 2.0 * mu_in[-1] * np.eye(4)
        data = np.concatenate([Hd.ravel(), Ho.ravel(), Hb.ravel()])
        return sp.csr_matrix((data, (cr, cc)), shape=(n, n))

    return NlpProblem(layout, objective, gradient, eq, eq_jacobian, ineq, ineq_jacobian,
                      ineq_lb, ineq_ub, lbx, ubx, hessian=hessian, constraint_hessian=constraint_hessian,
                      ocp=problem, integrator=integrator)


def _fd_step_hessians(step_jac, Z, mu_dyn, prm, dt, h):
    """sum_i mu_i * Hessian of step component i per interval by central differences of the Jacobians."""
    N = Z.shape[0]
    Hd = np.empty((N, 6, 6))
    for j in range(6):
        e = np.zeros(6)
        e[j] = h
        Fxp, Fup = step_jac((Z + e)[:, :4], (Z + e)[:, 4:], prm, dt)
        Fxm, Fum = step_jac((Z - e)[:, :4], (Z - e)[:, 4:], prm, dt)
        gp = np.einsum("ki,kij->kj", mu_dyn, np.concatenate([Fxp, Fup], axis=2))
        gm = np.einsum("ki,kij->kj", mu_dyn, np.concatenate([Fxm, Fum], axis=2))
        Hd[:, :, j] = (gp - gm) / (2 * h)
    return Hd


def _obstacle_hessians(obst: _Obstacles, X, mu):
    """sum over obstacles/circles of mu * Hessian(clearance) per node 1..N, shape (N, 4, 4)."""
    l2 = obst.p.params.l2
    Xn = X[1:]
    th2 = Xn[:, 3]
    H = np.zeros((Xn.shape[0], 4, 4))
    hitch = np.stack([Xn[:, 0] + l2 * np.sin(th2), Xn[:, 1] - l2 * np.cos(th2)], axis=-1)
    # point Jacobians w.r.t. (x2, y2, theta1, theta2) and the hitch point's curvature in theta2
    Jp = np.zeros((Xn.shape[0], 2, 2, 4))
    Jp[:, :, 0, 0] = 1.0
    Jp[:, :, 1, 1] = 1.0
    Jp[:, 1, 0, 3] = l2 * np.cos(th2)
    Jp[:, 1, 1, 3] = l2 * np.sin(th2)
    ddp = l2 * np.stack([-np.sin(th2), np.cos(th2)], axis=-1)  # (N, 2)
    for c, pts in enumerate((Xn[:, :2], hitch)):
        diff = pts[:, None, :] - obst.centers[None, :, :]  # (N, n_obs, 2)
        dist = np.maximum(np.linalg.norm(diff, axis=-1), 1e-12)
        u = diff / dist[..., None]
        m = mu[:, :, c]
        # weighted sum over obstacles of (I - u u^T) / dist
        Gp = np.einsum("no,nij->nij", m / dist, np.broadcast_to(np.eye(2), (Xn.shape[0], 2, 2))) \
            - np.einsum("no,noi,noj->nij", m / dist, u, u)
        H += np.einsum("nia,nij,njb->nab", Jp[:, c], Gp, Jp[:, c])
        if c == 1:
            H[:, 3, 3] += np.einsum("no,noi,ni->n", m, u, ddp)
    return H


# --------------------------------------------------------------------------
# single shooting


def transcribe_single_shooting(problem: OcpProblem, integrator: str = "euler") -> NlpProblem:
    if integrator not in INTEGRATORS:
        raise ValueError(f"unknown integrator {integrator!r}")
    step, step_jac = INTEGRATORS[integrator]
    N, dt, prm = problem.horizon, problem.dt, problem.params
    layout = DecisionLayout(N, "single")
    n = layout.size
    costs = _Costs(problem)
    obst = _Obstacles(problem)
    x0 = problem.x0
    terminal = problem.terminal_mode
    slo, shi = problem.state_box
    if problem.soft_state_penalty is not None:
        hard = ~costs.soft_mask
        slo = np.where(hard, slo, -np.inf)
        shi = np.where(hard, shi, np.inf)
    bounded = np.isfinite(slo) | np.isfinite(shi)  # state components carried as inequality rows

    cache = {}

    def sim(w):
        key = w.tobytes()
        if cache.get("key") != key:
            U = w.reshape(N, 2)
            X = np.empty((N + 1, 4))
            X[0] = x0
            Fx = np.empty((N, 4, 4))
            Fu = np.empty((N, 4, 2))
            for k in range(N):
                X[k + 1] = step(X[k], U[k], prm, dt)
                Fx[k], Fu[k] = step_jac(X[k], U[k], prm, dt)
            cache.update(key=key, X=X, U=U, Fx=Fx, Fu=Fu, S=None)
        return cache

    def sensitivities(c):
        # S[k] = dX[k]/dw, shape (N+1, 4, n)
        if c["S"] is None:
            S = np.zeros((N + 1, 4, n))
            for k in range(N):
                S[k + 1] = c["Fx"][k] @ S[k]
                S[k + 1][:, 2 * k:2 * k + 2] += c["Fu"][k]
            c["S"] = S
        return c["S"]

    def objective(w):
        c = sim(np.asarray(w, dtype=float))
        return costs.value(c["X"], c["U"])

    def gradient(w):
        c = sim(np.asarray(w, dtype=float))
        gX, gU = costs.grads(c["X"], c["U"])
        lam = gX[N]
        grad = gU.copy()
        for k in range(N - 1, -1, -1):
            grad[k] += c["Fu"][k].T @ lam
            lam = gX[k] + c["Fx"][k].T @ lam
        return grad.ravel()

    def eq(w):
        if terminal != "equality":
            return np.zeros(0)
        c = sim(np.asarray(w, dtype=float))
        return c["X"][-1] - problem.reference[-1]

    def eq_jacobian(w):
        if terminal != "equality":
            return sp.csr_matrix((0, n))
        c = sim(np.asarray(w, dtype=float))
        return sp.csr_matrix(sensitivities(c)[N])

    lb = [np.tile(problem.rate_box[0], N), np.full(N * bounded.sum(), 0.0)]
    ub = [np.tile(problem.rate_box[1], N), np.full(N * bounded.sum(), 0.0)]
    lb[0][:2] += problem.u_prev
    ub[0][:2] += problem.u_prev
    lb[1] = np.tile(slo[bounded], N)
    ub[1] = np.tile(shi[bounded], N)
    if obst.count:
        lb.append(np.full(obst.count, problem.obstacle_margin)); ub.append(np.full(obst.count, np.inf))
    if terminal == "ball":
        lb.append(np.array([-np.inf])); ub.append(np.array([problem.terminal_radius ** 2]))
    ineq_lb, ineq_ub = np.concatenate(lb), np.concatenate(ub)
    rate_J = np.eye(n) - np.eye(n, k=-2)

    def ineq(w):
        w = np.asarray(w, dtype=float)
        c = sim(w)
        X, U = c["X"], c["U"]
        d = U.copy()
        d[1:] -= U[:-1]
        out = [d.ravel(), X[1:, bounded].ravel()]
        if obst.count:
            out.append(obst.value_and_jac(X)[0].ravel())
        if terminal == "ball":
            e = X[-1] - problem.reference[-1]
            out.append(np.array([e @ e]))
        return np.concatenate(out)

    def ineq_jacobian(w):
        w = np.asarray(w, dtype=float)
        c = sim(w)
        S = sensitivities(c)
        blocks = [rate_J, S[1:, bounded, :].reshape(-1, n)]
        if obst.count:
            _, J = obst.value_and_jac(c["X"])  # (N, n_obs, 2, 4)
            blocks.append(np.einsum("kocj,kjn->kocn", J, S[1:]).reshape(-1, n))
        if terminal == "ball":
            e = c["X"][-1] - problem.reference[-1]
            blocks.append((2 * e @ S[N])[None, :])
        return sp.csr_matrix(np.vstack(blocks))

    def hessian(w):
        # Gauss-Newton: second derivatives of the rollout are dropped
        c = sim(np.asarray(w, dtype=float))
        S = sensitivities(c)
        HX, HU = costs.hess_blocks(c["X"])
        H = np.einsum("kin,kij,kjm->nm", S, HX, S)
        H += np.kron(np.eye(N), HU)
        return sp.csr_matrix(H)

    lbx = np.tile(problem.control_box[0], N)
    ubx = np.tile(problem.control_box[1], N)
    return NlpProblem(layout, objective, gradient, eq, eq_jacobian, ineq, ineq_jacobian,
                      ineq_lb, ineq_ub, lbx, ubx, hessian=hessian, ocp=problem, integrator=integrator)


# --------------------------------------------------------------------------


def shift_guess(nlp: NlpProblem, w_prev, x0) -> np.ndarray:
    """Shift a previous solution one interval forward, repeat its tail and pin s_0 to ``x0``."""
    N = nlp.layout.horizon
    X, U = nlp.states_controls(w_prev)
    U = np.vstack([U[1:], U[-1:]])
    if nlp.layout.kind == "single":
        return U.ravel()
    X = np.vstack([X[1:], X[-1:]])
    X[0] = x0
    return pack(X, U, nlp.layout)


def shift_multipliers(nlp: NlpProblem, lam_eq, lam_in):
    """Shift equality/inequality multipliers by one interval, matching :func:`shift_guess`.

    Returns None when the row structure is not the multiple-shooting one.
    """
    if nlp.layout.kind != "multiple":
        return None
    N = nlp.layout.horizon
    if lam_eq.size != nlp.n_eq or lam_in.size != nlp.n_ineq:
        return None
    eq = lam_eq.copy()
    dyn = eq[4:4 + 4 * N].reshape(N, 4)
    dyn[:-1] = dyn[1:].copy()
    ineq = lam_in.copy()
    rate = ineq[: 2 * N].reshape(N, 2)
    rate[:-1] = rate[1:].copy()
    n_obs_rows = 2 * len(nlp.ocp.obstacles) * N
    if n_obs_rows:
        obs = ineq[2 * N: 2 * N + n_obs_rows].reshape(N, -1)
        obs[:-1] = obs[1:].copy()
    return eq, ineq


def initial_guess(problem: OcpProblem, layout: DecisionLayout, controls=None, integrator="euler") -> np.ndarray:
    """Decision vector from a control sequence (default: hold u_prev), states by rollout."""
    N = problem.horizon
    U = np.tile(problem.u_prev, (N, 1)) if controls is None else np.asarray(controls, dtype=float).reshape(N, 2)
    U = np.clip(U, *problem.control_box)
    if layout.kind == "single":
        return U.ravel()
    return pack(rollout(problem.x0, U, problem, integrator), U, layout)


def _fd_jacobian(fun, w, h):
    f0 = np.atleast_1d(fun(w))
    J = np.zeros((f0.size, w.size))
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        J[:, i] = (np.atleast_1d(fun(w + e)) - np.atleast_1d(fun(w - e))) / (2 * h)
    return J


def _rel_err(analytic, fd):
    analytic = analytic.toarray() if sp.issparse(analytic) else np.atleast_2d(analytic)
    fd = np.atleast_2d(fd)
    if fd.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - fd)) / max(1.0, np.max(np.abs(fd))))


def check_derivatives(nlp: NlpProblem, w, h: float = 1e-5) -> float:
    """Largest relative error of the supplied gradient and Jacobians against central differences.

    Errors are normalized per function by max(1, max |finite-difference entry|).
    """
    if not h > 0:
        raise ValueError("h must be > 0")
    w = np.asarray(w, dtype=float)
    errs = [
        _rel_err(nlp.gradient(w)[None, :], _fd_jacobian(nlp.objective, w, h)),
        _rel_err(nlp.eq_jacobian(w), _fd_jacobian(nlp.eq, w, h)),
        _rel_err(nlp.ineq_jacobian(w), _fd_jacobian(nlp.ineq, w, h)),
    ]
    return max(errs)
