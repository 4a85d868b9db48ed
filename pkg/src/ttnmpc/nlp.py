"""Augmented Lagrangian NLP solver and KKT diagnostics.

Multiplier sign convention follows L(w, lam) = f(w) + lam_x' w + lam_eq' eq(w)
+ lam_in' ineq(w): a positive multiplier marks an active upper bound, a
negative one an active lower bound.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.optimize import minimize

from .transcription import NlpProblem

OPTIMAL, MAX_ITER, INFEASIBLE, TIME_OUT = "optimal", "max-iter", "infeasible", "time-out"


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 50  # outer iterations
    kkt_tolerance: float = 1e-4
    constraint_tolerance: float = 1e-6
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e10
    inner_max_iterations: int = 2000
    time_budget: float | None = None

    def __post_init__(self):
        if not (self.kkt_tolerance > 0 and self.constraint_tolerance > 0):
            raise ValueError("tolerances must be > 0")
        if not self.penalty_growth > 1:
            raise ValueError("penalty_growth must be > 1")
        if not self.penalty_init > 0:
            raise ValueError("penalty_init must be > 0")


@dataclass
class Multipliers:
    x: np.ndarray
    eq: np.ndarray
    ineq: np.ndarray

    @classmethod
    def zeros(cls, nlp: NlpProblem) -> "Multipliers":
        return cls(np.zeros(nlp.n), np.zeros(nlp.n_eq), np.zeros(nlp.n_ineq))


@dataclass
class NlpSolution:
    w_star: np.ndarray
    objective_value: float
    multipliers: Multipliers
    status: str
    iterations: int
    kkt_residual: float
    constraint_violation: float
    inner_iterations: int = 0
    penalty: float = 0.0
    history: list = field(default_factory=list, repr=False)

    @property
    def success(self) -> bool:
        return self.status == OPTIMAL


class Solver(Protocol):
    """Backend contract: any object with this ``solve`` can drive the planner."""

    def solve(self, nlp: NlpProblem, w_init, options: SolverOptions,
              multipliers: Multipliers | None = None) -> NlpSolution: ...


def _check_shapes(nlp, w, lam: Multipliers | None = None):
    w = np.asarray(w, dtype=float)
    if w.shape != (nlp.n,):
        raise ValueError(f"w has shape {w.shape}, problem expects ({nlp.n},)")
    if lam is not None:
        for name, arr, size in (("x", lam.x, nlp.n), ("eq", lam.eq, nlp.n_eq), ("ineq", lam.ineq, nlp.n_ineq)):
            if np.shape(arr) != (size,):
                raise ValueError(f"multiplier '{name}' has shape {np.shape(arr)}, expected ({size},)")
    return w


def lagrangian(nlp: NlpProblem, w, multipliers: Multipliers) -> float:
    w = _check_shapes(nlp, w, multipliers)
    val = nlp.objective(w) + multipliers.x @ w + multipliers.eq @ nlp.eq(w)
    if nlp.n_ineq:
        val += multipliers.ineq @ nlp.ineq(w)
    return float(val)


def lagrangian_gradient(nlp: NlpProblem, w, multipliers: Multipliers) -> np.ndarray:
    w = _check_shapes(nlp, w, multipliers)
    g = nlp.gradient(w) + multipliers.x
    if multipliers.eq.size:
        g = g + nlp.eq_jacobian(w).T @ multipliers.eq
    if multipliers.ineq.size:
        g = g + nlp.ineq_jacobian(w).T @ multipliers.ineq
    return g


def constraint_violation(nlp: NlpProblem, w) -> float:
    w = np.asarray(w, dtype=float)
    v = 0.0
    e = nlp.eq(w)
    if e.size:
        v = max(v, float(np.max(np.abs(e))))
    if nlp.n_ineq:
        c = nlp.ineq(w)
        v = max(v, float(np.max(np.maximum(c - nlp.ineq_ub, 0.0))), float(np.max(np.maximum(nlp.ineq_lb - c, 0.0))))
    v = max(v, float(np.max(np.maximum(w - nlp.ubx, 0.0), initial=0.0)),
            float(np.max(np.maximum(nlp.lbx - w, 0.0), initial=0.0)))
    return v


def _complementarity(lam, val, lb, ub):
    # lam > 0 pairs with the upper bound, lam < 0 with the lower bound
    up = np.where(lam > 0, np.minimum(lam, np.abs(ub - val)), 0.0)
    lo = np.where(lam < 0, np.minimum(-lam, np.abs(val - lb)), 0.0)
    up = np.where(np.isnan(up), lam, up)
    lo = np.where(np.isnan(lo), -lam, lo)
    return float(np.max(np.concatenate([up, lo]), initial=0.0))


def kkt_parts(nlp: NlpProblem, w, multipliers: Multipliers) -> tuple[float, float, float]:
    """(stationarity, primal infeasibility, complementarity).

    Stationarity is the inf-norm of the Lagrangian gradient divided by
    max(1, |grad f|_inf) so the measure does not depend on the cost scale.
    """
    w = _check_shapes(nlp, w, multipliers)
    grad_f = nlp.gradient(w)
    stat = float(np.max(np.abs(lagrangian_gradient(nlp, w, multipliers)))) / max(1.0, float(np.max(np.abs(grad_f))))
    prim = constraint_violation(nlp, w)
    with np.errstate(invalid="ignore"):
        comp = _complementarity(multipliers.x, w, nlp.lbx, nlp.ubx)
        if nlp.n_ineq:
            comp = max(comp, _complementarity(multipliers.ineq, nlp.ineq(w), nlp.ineq_lb, nlp.ineq_ub))
    return stat, prim, comp


def kkt_residual(nlp: NlpProblem, solution: NlpSolution) -> float:
    return max(kkt_parts(nlp, solution.w_star, solution.multipliers))


def _bound_multipliers(w, g, lbx, ubx, tol=1e-10):
    """Bound multipliers that cancel the gradient on active bounds with the right sign."""
    lam = np.zeros_like(w)
    at_up = (w >= ubx - tol) & (g < 0)
    at_lo = (w <= lbx + tol) & (g > 0)
    lam[at_up] = -g[at_up]
    lam[at_lo] = -g[at_lo]
    return lam


class AugmentedLagrangian:
    """PHR augmented Lagrangian on the variable box.

    Equalities and two-sided inequalities are both treated as projections:
    for a constraint value c with bounds [l, u], multiplier lam and penalty rho,
    the shifted residual is z = c + lam / rho and the penalty term is
    rho/2 * |z - clip(z, l, u)|^2.

    ``inner="newton"`` minimizes each subproblem with a projected Newton
    method (exact objective Hessian, penalty Gauss-Newton term plus the
    multiplier-weighted constraint curvature when the problem supplies it).
    ``inner="lbfgs"`` uses L-BFGS-B instead and needs no second derivatives.
    """

    def __init__(self, inner: str = "newton", verbose: bool = False):
        if inner not in ("newton", "lbfgs"):
            raise ValueError(f"inner must be 'newton' or 'lbfgs', got {inner!r}")
        self.inner = inner
        self.verbose = verbose

    def solve(self, nlp: NlpProblem, w_init, options: SolverOptions = SolverOptions(),
              multipliers: Multipliers | None = None, penalty: float | None = None) -> NlpSolution:
        t0 = time.perf_counter()
        w = _check_shapes(nlp, w_init).copy()
        w = np.clip(w, nlp.lbx, nlp.ubx)
        m_eq, m_in = nlp.n_eq, nlp.n_ineq
        lam = multipliers if multipliers is not None else Multipliers.zeros(nlp)
        _check_shapes(nlp, w, lam)
        # solve a copy whose objective gradient is O(1) so the penalty scale is problem independent
        fscale = 1.0 / max(1.0, float(np.max(np.abs(nlp.gradient(w)), initial=0.0)))
        sub = _Subproblem(nlp, fscale * np.concatenate([lam.eq, lam.ineq]),
                          options.penalty_init if penalty is None else penalty, fscale)
        use_newton = self.inner == "newton" and nlp.hessian is not None

        viol = sub.violation(sub.cons(w))
        history, total_inner, status = [], 0, MAX_ITER
        stagnant = 0
        omega = 1e-3
        it = 0
        for it in range(1, options.max_iterations + 1):
            if use_newton:
                w, nit = _projected_newton(sub, w, omega, options.inner_max_iterations)
            else:
                res = minimize(sub.value_grad, w, jac=True, method="L-BFGS-B", bounds=sub.bounds,
                               options={"maxiter": options.inner_max_iterations, "ftol": 1e-16,
                                        "gtol": omega * sub.grad_scale(w), "maxcor": 20})
                w, nit = res.x, res.nit
            total_inner += nit
            c_new = sub.cons(w)
            sub.update_multipliers(c_new)
            new_viol = sub.violation(c_new)

            mult = self._multipliers(nlp, w, sub.lam / fscale, m_eq)
            stat, prim, comp = kkt_parts(nlp, w, mult)
            kkt = max(stat, comp)
            history.append(dict(iteration=it, penalty=sub.rho, violation=new_viol, kkt=kkt,
                                residual=max(stat, prim, comp), inner=nit))
            if self.verbose:
                print(f"[al] it={it:3d} rho={sub.rho:9.2e} viol={new_viol:9.2e} stat={stat:9.2e} "
                      f"comp={comp:9.2e} inner={nit}")
            if prim <= options.constraint_tolerance and kkt <= options.kkt_tolerance:
                status = OPTIMAL
                break
            if options.time_budget is not None and time.perf_counter() - t0 > options.time_budget:
                status = TIME_OUT
                break
            if new_viol > 0.25 * viol and new_viol > options.constraint_tolerance:
                if sub.rho >= options.penalty_max:
                    stagnant = stagnant + 1 if new_viol > 0.9 * viol else 0
                sub.rho = min(sub.rho * options.penalty_growth, options.penalty_max)
            else:
                stagnant = 0
            if stagnant >= 5:
                status = INFEASIBLE
                break
            viol = new_viol
            omega = max(min(omega, kkt) * 0.1, 0.1 * options.kkt_tolerance)

        mult = self._multipliers(nlp, w, sub.lam / fscale, m_eq)
        stat, prim, comp = kkt_parts(nlp, w, mult)
        return NlpSolution(
            w_star=w, objective_value=float(nlp.objective(w)), multipliers=mult, status=status,
            iterations=it, kkt_residual=max(stat, prim, comp), constraint_violation=prim,
            inner_iterations=total_inner, penalty=sub.rho, history=history,
        )

    @staticmethod
    def _multipliers(nlp, w, lam_c, m_eq):
        lam_eq, lam_in = lam_c[:m_eq], lam_c[m_eq:]
        g = lagrangian_gradient(nlp, w, Multipliers(np.zeros(nlp.n), lam_eq, lam_in))
        return Multipliers(_bound_multipliers(w, g, nlp.lbx, nlp.ubx), lam_eq, lam_in)


KINK_BAND = 1e-5


class _Subproblem:
    """The augmented Lagrangian function for fixed multipliers and penalty."""

    def __init__(self, nlp: NlpProblem, lam, rho, fscale=1.0):
        self.nlp = nlp
        self.fscale = float(fscale)
        self.m_eq = nlp.n_eq
        self.lo = np.concatenate([np.zeros(self.m_eq), nlp.ineq_lb])
        self.hi = np.concatenate([np.zeros(self.m_eq), nlp.ineq_ub])
        self.lam = np.asarray(lam, dtype=float)
        self.rho = float(rho)
        self.lbx, self.ubx = nlp.lbx, nlp.ubx
        self.bounds = list(zip(np.where(np.isfinite(nlp.lbx), nlp.lbx, None),
                               np.where(np.isfinite(nlp.ubx), nlp.ubx, None)))

    def cons(self, w):
        nlp = self.nlp
        return np.concatenate([nlp.eq(w), nlp.ineq(w)]) if nlp.n_ineq else nlp.eq(w)

    def jac(self, w):
        nlp = self.nlp
        blocks = [nlp.eq_jacobian(w)] if self.m_eq else []
        if nlp.n_ineq:
            blocks.append(nlp.ineq_jacobian(w))
        return sp.vstack(blocks, format="csr") if blocks else sp.csr_matrix((0, nlp.n))

    def violation(self, c):
        return float(np.max(np.abs(c - np.clip(c, self.lo, self.hi)), initial=0.0))

    def residual(self, c):
        z = c + self.lam / self.rho
        return z - np.clip(z, self.lo, self.hi)

    def update_multipliers(self, c):
        self.lam = self.rho * self.residual(c)

    def value(self, w):
        r = self.residual(self.cons(w))
        return self.fscale * self.nlp.objective(w) + 0.5 * self.rho * (r @ r)

    def value_grad(self, w):
        r = self.residual(self.cons(w))
        val = self.fscale * self.nlp.objective(w) + 0.5 * self.rho * (r @ r)
        return val, self.fscale * self.nlp.gradient(w) + self.jac(w).T @ (self.rho * r)

    def grad_scale(self, w):
        return max(1.0, self.fscale * float(np.max(np.abs(self.nlp.gradient(w)))))

    def derivatives(self, w):
        nlp = self.nlp
        c = self.cons(w)
        r = self.residual(c)
        J = self.jac(w)
        val = self.fscale * nlp.objective(w) + 0.5 * self.rho * (r @ r)
        grad_f = self.fscale * nlp.gradient(w)
        grad = grad_f + J.T @ (self.rho * r)
        # rows at or near their kink keep their curvature; dropping it makes Newton bounce across the kink
        z = c + self.lam / self.rho
        active = (r != 0.0) | (np.minimum(np.abs(z - self.lo), np.abs(z - self.hi)) <= KINK_BAND)
        JA = J[active]
        H = self.fscale * nlp.hessian(w) + self.rho * (JA.T @ JA)
        if nlp.constraint_hessian is not None:
            mu = self.rho * r
            H = H + nlp.constraint_hessian(w, mu[: self.m_eq], mu[self.m_eq:])
        return val, grad, H, max(1.0, float(np.max(np.abs(grad_f))))


def _bandwidth(H):
    coo = H.tocoo()
    return int(np.max(np.abs(coo.row - coo.col), initial=0))


def _factor_solve(H, g):
    """Solve (H + delta I) d = -g, raising delta until the matrix is positive definite."""
    n = g.size
    if n == 0:
        return g.copy()
    bw = _bandwidth(H)
    diag = H.diagonal()
    delta = 0.0
    scale = max(1.0, float(np.max(np.abs(diag))))
    if bw < n // 4:
        Hd = H.todia()
        ab = np.zeros((bw + 1, n))
        for off, row in zip(Hd.offsets, Hd.data):
            if 0 <= off <= bw:
                # upper form: ab[bw + i - j, j] = H[i, j] for i <= j
                ab[bw - off, off:] = row[off:]
        while True:
            try:
                a = ab.copy()
                a[bw] += delta
                c = la.cholesky_banded(a, lower=False, check_finite=False)
                return la.cho_solve_banded((c, False), -g, check_finite=False)
            except la.LinAlgError:
                delta = max(1e-8 * scale, 10 * delta)
    Hf = H.toarray()
    while True:
        try:
            c = la.cho_factor(Hf + delta * np.eye(n), check_finite=False)
            return la.cho_solve(c, -g, check_finite=False)
        except la.LinAlgError:
            delta = max(1e-8 * scale, 10 * delta)


def _projected_newton(sub: _Subproblem, w, tol, max_iter):
    """Bertsekas-style projected Newton on the box lbx <= w <= ubx.

    The augmented Lagrangian is only piecewise twice differentiable, so when
    backtracking along the Newton direction collapses the iteration falls back
    to a diagonally scaled projected gradient step, and it returns early once
    several consecutive iterations stop reducing the function.
    """
    lbx, ubx = sub.lbx, sub.ubx
    sigma = 1e-4
    stalled = 0
    it = 0
    for it in range(1, max_iter + 1):
        val, g, H, scale = sub.derivatives(w)
        pg = w - np.clip(w - g, lbx, ubx)
        pg_norm = float(np.max(np.abs(pg), initial=0.0))
        if pg_norm <= tol * scale:
            return w, it - 1
        eps = min(1e-2, pg_norm)
        active = ((w <= lbx + eps) & (g > 0)) | ((w >= ubx - eps) & (g < 0))
        free = ~active
        hdiag = np.maximum(H.diagonal(), 1e-8 * max(1.0, float(np.max(np.abs(H.diagonal()), initial=1.0))))
        at_lo, at_hi = w <= lbx + eps, w >= ubx - eps
        # epsilon-active variables go straight to their bound instead of creeping there
        fixed_step = -g / hdiag + np.where(active & at_lo, lbx - w, 0.0) + np.where(active & at_hi, ubx - w, 0.0)
        d = fixed_step
        for _ in range(5):
            d = fixed_step.copy()
            if not free.any():
                break
            idx = np.flatnonzero(free)
            d[idx] = _factor_solve(H[idx][:, idx], g[idx])
            # fix variables whose Newton step would leave the box at once
            blocked = free & ((at_lo & (d < 0)) | (at_hi & (d > 0)))
            if not blocked.any():
                break
            free &= ~blocked
        w_new = _armijo(sub.value, w, val, g, d, lbx, ubx, sigma, 1e-4)
        if w_new is None:
            w_new = _armijo(sub.value, w, val, g, -g / hdiag, lbx, ubx, sigma, 1e-12)
            if w_new is None:
                return w, it
        val_new = sub.value(w_new)
        stalled = stalled + 1 if val - val_new <= 1e-13 * max(1.0, abs(val)) else 0
        w = w_new
        if stalled >= 3:
            return w, it
    return w, it


def _armijo(value, y, val, g, d, lb, ub, sigma, alpha_min):
    """Backtrack along the projection arc; None when alpha drops below ``alpha_min``."""
    alpha = 1.0
    while alpha >= alpha_min:
        y_new = np.clip(y + alpha * d, lb, ub)
        expected = -(g @ (y_new - y))
        if expected >= 0 and value(y_new) <= val - sigma * expected:
            return y_new
        alpha *= 0.5
    return None


def solve(nlp: NlpProblem, w_init, options: SolverOptions = SolverOptions(),
          multipliers: Multipliers | None = None, solver: Solver | None = None) -> NlpSolution:
    return (solver or AugmentedLagrangian()).solve(nlp, w_init, options, multipliers)
