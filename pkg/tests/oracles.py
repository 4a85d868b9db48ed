"""Independent reference implementations used as test oracles.

Everything here is written from the model equations with plain scalar math,
sharing no code with the package under test.
"""

import math
import itertools

import numpy as np


def rhs(x, u, l2=4.0, steer=4.0):
    x2, y2, th1, th2 = x
    v, phi = u
    return [
        v * math.cos(th1) * math.sin(th2),
        -v * math.cos(th1) * math.cos(th2),
        v * (math.sin(th1) / l2 + math.tan(phi) / steer),
        v * math.sin(th1) / l2,
    ]


def euler(x, u, dt, **kw):
    f = rhs(x, u, **kw)
    return [xi + dt * fi for xi, fi in zip(x, f)]


def rk4(x, u, dt, **kw):
    k1 = rhs(x, u, **kw)
    k2 = rhs([xi + dt / 2 * ki for xi, ki in zip(x, k1)], u, **kw)
    k3 = rhs([xi + dt / 2 * ki for xi, ki in zip(x, k2)], u, **kw)
    k4 = rhs([xi + dt * ki for xi, ki in zip(x, k3)], u, **kw)
    return [xi + dt / 6 * (a + 2 * b + 2 * c + d) for xi, a, b, c, d in zip(x, k1, k2, k3, k4)]


def quad(d, M):
    return sum(d[i] * M[i][j] * d[j] for i in range(len(d)) for j in range(len(d)))


def objective(X, U, ref, u_ref, Q, R, P):
    """Loop-by-loop re-summation of running and terminal costs."""
    total = 0.0
    N = len(U)
    for k in range(N):
        dx = [X[k][i] - ref[k][i] for i in range(4)]
        du = [U[k][i] - u_ref[i] for i in range(2)]
        total += quad(dx, Q) + quad(du, R)
    dN = [X[N][i] - ref[N][i] for i in range(4)]
    return total + quad(dN, P)


def grid_search_two_steps(x0, ref, Q, R, P, dt, control_lo, control_hi, points=21, l2=4.0, steer=4.0):
    """Best objective over a ``points`` x ``points`` control grid at each of two steps (Euler model)."""
    vs = np.linspace(control_lo[0], control_hi[0], points)
    phis = np.linspace(control_lo[1], control_hi[1], points)
    grid = np.array(list(itertools.product(vs, phis)))  # (G, 2)
    Q, R, P = (np.asarray(m, dtype=float) for m in (Q, R, P))
    ref = np.asarray(ref, dtype=float)

    def step(x, u):
        th1, th2 = x[..., 2], x[..., 3]
        v, phi = u[..., 0], u[..., 1]
        dx = np.stack([v * np.cos(th1) * np.sin(th2), -v * np.cos(th1) * np.cos(th2),
                       v * (np.sin(th1) / l2 + np.tan(phi) / steer), v * np.sin(th1) / l2], axis=-1)
        return x + dt * dx

    def qf(d, M):
        return np.einsum("...i,ij,...j->...", d, M, d)

    x0 = np.asarray(x0, dtype=float)
    x1 = step(x0[None, :], grid)  # (G, 4)
    c0 = qf(x0 - ref[0], Q) + qf(grid, R)  # u_ref = 0
    best = math.inf
    for i in range(len(grid)):
        x2 = step(np.broadcast_to(x1[i], grid.shape[:1] + (4,)), grid)
        total = c0[i] + qf(x1[i] - ref[1], Q) + qf(grid, R) + qf(x2 - ref[2], P)
        best = min(best, float(total.min()))
    return best


def nearest_scan(points, x):
    best, arg = math.inf, -1
    for k, p in enumerate(points):
        d = (p[0] - x[0]) ** 2 + (p[1] - x[1]) ** 2
        if d < best:
            best, arg = d, k
    return arg


def convergence_order(step, x0, u, horizon, base_steps):
    """Observed order from three runs with step counts n, 2n, 4n (Richardson ratio)."""
    finals = []
    for n in (base_steps, 2 * base_steps, 4 * base_steps):
        x = list(x0)
        dt = horizon / n
        for _ in range(n):
            x = step(x, u, dt)
        finals.append(np.array(x))
    e1 = np.linalg.norm(finals[0] - finals[1])
    e2 = np.linalg.norm(finals[1] - finals[2])
    return math.log2(e1 / e2)
