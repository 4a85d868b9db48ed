import numpy as np
import pytest
import scipy.sparse as sp

import oracles
from ttnmpc.ipopt import IpoptSolver
from ttnmpc.nlp import (
    INFEASIBLE,
    OPTIMAL,
    AugmentedLagrangian,
    Multipliers,
    SolverOptions,
    kkt_residual,
    lagrangian,
    lagrangian_gradient,
    solve,
)
from ttnmpc.ocp import OcpProblem, Weights
from ttnmpc.transcription import (
    DecisionLayout,
    NlpProblem,
    initial_guess,
    scale_objective,
    transcribe_multiple_shooting,
    transcribe_single_shooting,
)
from ttnmpc.vehicle_model import VehicleParams, step_euler

SOLVERS = {
    "al-newton": AugmentedLagrangian(),
    "al-lbfgs": AugmentedLagrangian(inner="lbfgs"),
    "ipopt": IpoptSolver(),
}
TIGHT = SolverOptions(kkt_tolerance=1e-8, constraint_tolerance=1e-9, max_iterations=100)
EMPTY = np.zeros(0)


def toy(f, g, H, lbx=(-np.inf, -np.inf), ubx=(np.inf, np.inf), eq=None, eq_jac=None,
        ineq=None, ineq_jac=None, ineq_lb=EMPTY, ineq_ub=EMPTY):
    """Two-variable NLP built directly on the evaluator contract."""
    return NlpProblem(
        layout=DecisionLayout(1, "single"), objective=f, gradient=g,
        eq=eq or (lambda w: EMPTY), eq_jacobian=eq_jac or (lambda w: sp.csr_matrix((0, 2))),
        ineq=ineq or (lambda w: EMPTY), ineq_jacobian=ineq_jac or (lambda w: sp.csr_matrix((0, 2))),
        ineq_lb=np.asarray(ineq_lb, float), ineq_ub=np.asarray(ineq_ub, float),
        lbx=np.asarray(lbx, float), ubx=np.asarray(ubx, float), hessian=lambda w: sp.csr_matrix(H),
    )


def bound_problem():
    # minimize (x - 1)^2 + y^2 subject to x <= 0
    return toy(lambda w: (w[0] - 1) ** 2 + w[1] ** 2, lambda w: np.array([2 * (w[0] - 1), 2 * w[1]]),
               2 * np.eye(2), ubx=(0.0, np.inf))


def equality_problem():
    # minimize x^2 + y^2 subject to x + y = 1
    return toy(lambda w: w @ w, lambda w: 2 * w, 2 * np.eye(2),
               eq=lambda w: np.array([w[0] + w[1] - 1]), eq_jac=lambda w: sp.csr_matrix([[1.0, 1.0]]))


def infeasible_problem():
    # x <= 0 as a bound and x >= 1 as an inequality
    return toy(lambda w: w @ w, lambda w: 2 * w, 2 * np.eye(2), ubx=(0.0, np.inf),
               ineq=lambda w: np.array([w[0]]), ineq_jac=lambda w: sp.csr_matrix([[1.0, 0.0]]),
               ineq_lb=[1.0], ineq_ub=[np.inf])


def planning_problem(N=2, x0=(0.0, 0.0, 0.05, 1.4)):
    params = VehicleParams()
    return OcpProblem(N, 0.2, params, np.array(x0), np.array([0.06, 0.01, 0.0, 1.5]),
                      weights=Weights(Q=np.diag([50.0, 50.0, 1.0, 1.0]), R=np.diag([0.5, 0.05])),
                      rate_box=(np.array([-1.0, -1.0]), np.array([1.0, 1.0])))


@pytest.mark.parametrize("name", SOLVERS)
def test_active_bound(name):
    nlp = bound_problem()
    sol = SOLVERS[name].solve(nlp, np.array([-1.0, 1.0]), TIGHT)
    assert sol.status == OPTIMAL
    assert np.allclose(sol.w_star, [0.0, 0.0], atol=1e-6)
    assert sol.multipliers.x[0] > 0  # positive multiplier marks the active upper bound


@pytest.mark.parametrize("name", SOLVERS)
def test_equality_projection(name):
    sol = SOLVERS[name].solve(equality_problem(), np.array([3.0, -1.0]), TIGHT)
    assert sol.status == OPTIMAL
    assert np.allclose(sol.w_star, [0.5, 0.5], atol=1e-6)
    assert sol.objective_value == pytest.approx(0.5, abs=1e-6)


@pytest.mark.parametrize("name", SOLVERS)
def test_optimal_status_certifies_kkt(name):
    opts = SolverOptions()
    for nlp in (bound_problem(), equality_problem()):
        sol = SOLVERS[name].solve(nlp, np.array([0.3, 0.7]), opts)
        assert sol.status == OPTIMAL
        assert sol.kkt_residual <= opts.kkt_tolerance
        assert sol.constraint_violation <= opts.constraint_tolerance
        assert kkt_residual(nlp, sol) <= opts.kkt_tolerance
        assert np.max(np.abs(lagrangian_gradient(nlp, sol.w_star, sol.multipliers))) <= opts.kkt_tolerance


@pytest.mark.parametrize("name", SOLVERS)
def test_infeasibility_reported(name):
    sol = SOLVERS[name].solve(infeasible_problem(), np.array([0.0, 0.0]), SolverOptions())
    assert sol.status == INFEASIBLE


def test_lagrangian_zero_multipliers_is_objective():
    nlp = equality_problem()
    w = np.array([0.3, -2.0])
    assert lagrangian(nlp, w, Multipliers.zeros(nlp)) == nlp.objective(w)


def test_lagrangian_hand_sum():
    nlp = toy(lambda w: 2 * w[0] + 3 * w[1], lambda w: np.array([2.0, 3.0]), np.zeros((2, 2)),
              eq=lambda w: np.array([w[0] + w[1] - 1]), eq_jac=lambda w: sp.csr_matrix([[1.0, 1.0]]))
    lam = Multipliers(np.array([0.5, -1.0]), np.array([4.0]), EMPTY)
    # 2*1 + 3*2 + (0.5*1 - 1*2) + 4*(1 + 2 - 1)
    assert lagrangian(nlp, np.array([1.0, 2.0]), lam) == pytest.approx(8 - 1.5 + 8)


def test_shape_errors():
    nlp = equality_problem()
    with pytest.raises(ValueError):
        lagrangian(nlp, np.zeros(3), Multipliers.zeros(nlp))
    with pytest.raises(ValueError):
        lagrangian(nlp, np.zeros(2), Multipliers(np.zeros(2), np.zeros(2), EMPTY))
    for solver in SOLVERS.values():
        with pytest.raises(ValueError):
            solver.solve(nlp, np.zeros(5), SolverOptions())


def test_kkt_positive_away_from_optimum():
    nlp = equality_problem()
    sol = solve(nlp, np.zeros(2))
    sol.w_star = np.array([2.0, -3.0])
    assert kkt_residual(nlp, sol) > 0


def test_kkt_tail_decreases_on_qp():
    sol = AugmentedLagrangian().solve(equality_problem(), np.array([3.0, -1.0]), TIGHT)
    residual = [h["residual"] for h in sol.history]
    tail = residual[-4:]
    assert all(b <= a for a, b in zip(tail, tail[1:]))


@pytest.mark.parametrize("name", SOLVERS)
@pytest.mark.parametrize("make", ["qp", "planning"])
def test_scale_invariance(name, make):
    opts = SolverOptions(kkt_tolerance=1e-7, constraint_tolerance=1e-9, max_iterations=100)
    if make == "qp":
        nlp, w0 = equality_problem(), np.array([3.0, -1.0])
    else:
        prob = planning_problem()
        nlp = transcribe_multiple_shooting(prob)
        w0 = initial_guess(prob, nlp.layout)
    base = SOLVERS[name].solve(nlp, w0, opts)
    for c in (0.01, 100.0):
        scaled = SOLVERS[name].solve(scale_objective(nlp, c), w0, opts)
        assert scaled.status == OPTIMAL
        assert np.max(np.abs(scaled.w_star - base.w_star)) <= 10 * 1e-4


@pytest.mark.parametrize("name", SOLVERS)
def test_deterministic(name):
    prob = planning_problem(N=5)
    nlp = transcribe_multiple_shooting(prob)
    w0 = initial_guess(prob, nlp.layout)
    a = SOLVERS[name].solve(nlp, w0, SolverOptions())
    b = SOLVERS[name].solve(nlp, w0, SolverOptions())
    assert np.array_equal(a.w_star, b.w_star) and a.iterations == b.iterations


@pytest.mark.parametrize("name", SOLVERS)
def test_two_step_grid_oracle(name):
    prob = planning_problem()
    nlp = transcribe_multiple_shooting(prob)
    # quasi-Newton inner steps stall near 1e-7, well inside the oracle's resolution
    opts = SolverOptions(kkt_tolerance=1e-7, constraint_tolerance=1e-9, max_iterations=100) if name == "al-lbfgs" else TIGHT
    sol = SOLVERS[name].solve(nlp, initial_guess(prob, nlp.layout), opts)
    assert sol.status == OPTIMAL
    best = oracles.grid_search_two_steps(prob.x0, prob.reference, prob.weights.Q, prob.weights.R,
                                         prob.weights.P, prob.dt, *prob.control_box)
    assert sol.objective_value <= best + 1e-3


def test_single_and_multiple_shooting_agree():
    prob = planning_problem(N=5)
    opts = SolverOptions(kkt_tolerance=1e-8, constraint_tolerance=1e-9, max_iterations=200)
    values = []
    for make in (transcribe_multiple_shooting, transcribe_single_shooting):
        nlp = make(prob)
        sol = AugmentedLagrangian().solve(nlp, initial_guess(prob, nlp.layout), opts)
        assert sol.status == OPTIMAL
        values.append(sol.objective_value)
    assert abs(values[0] - values[1]) <= 1e-4


@pytest.mark.parametrize("name", ["al-newton", "ipopt"])
def test_warm_start_not_much_slower(name):
    """Re-solving after the initial state moves one Euler step costs at most 2x the cold iterations."""
    params = VehicleParams()
    x0 = np.array([0.0, 0.0, 0.0, 1.5707])
    target = np.array([6.0, 3.0, 0.0, 1.0])
    prob = OcpProblem(20, 0.2, params, x0, target)
    solver = SOLVERS[name]
    nlp = transcribe_multiple_shooting(prob)
    first = solver.solve(nlp, initial_guess(prob, nlp.layout), SolverOptions())
    _, U = nlp.states_controls(first.w_star)
    x1 = step_euler(x0, U[0], params, prob.dt)
    moved = prob.updated(x0=x1, u_prev=U[0])
    nlp1 = transcribe_multiple_shooting(moved)
    cold = solver.solve(nlp1, initial_guess(moved, nlp1.layout), SolverOptions())
    from ttnmpc.transcription import shift_guess, shift_multipliers
    eq, ineq = shift_multipliers(nlp1, first.multipliers.eq, first.multipliers.ineq)
    warm = solver.solve(nlp1, shift_guess(nlp1, first.w_star, x1), SolverOptions(),
                        Multipliers(np.zeros(nlp1.n), eq, ineq))
    assert warm.status == OPTIMAL
    assert warm.iterations <= max(2 * cold.iterations, 2)
