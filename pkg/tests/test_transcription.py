import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from ttnmpc.ocp import Obstacle, OcpProblem, Weights, objective
from ttnmpc.transcription import (
    DecisionLayout,
    check_derivatives,
    initial_guess,
    pack,
    rollout,
    transcribe_multiple_shooting,
    transcribe_single_shooting,
    unpack,
)
from ttnmpc.vehicle_model import VehicleParams, step_euler, step_rk4

P = VehicleParams()


def _problem(N=2, obstacles=(), x0=(0, 0, 0.1, 1.5), ref=(2, 1, 0, 1.2), **kw):
    return OcpProblem(N, 0.2, P, np.array(x0, float), np.array(ref, float), obstacles=obstacles, **kw)


def _random_w(nlp, seed=0):
    rng = np.random.default_rng(seed)
    lo = np.where(np.isfinite(nlp.lbx), nlp.lbx, -1.0)
    hi = np.where(np.isfinite(nlp.ubx), nlp.ubx, 1.0)
    return lo + (hi - lo) * rng.random(nlp.n)


def test_counts_two_step():
    nlp = transcribe_multiple_shooting(_problem(N=2))
    assert nlp.n_eq == 12 and nlp.n == 16


@given(st.integers(1, 30))
def test_layout_dimensions(N):
    assert DecisionLayout(N).size == 4 * (N + 1) + 2 * N
    assert DecisionLayout(N, "single").size == 2 * N


def test_unpack_one_step_split():
    w = np.arange(10.0)
    X, U = unpack(w, DecisionLayout(1))
    assert np.array_equal(X, [[0, 1, 2, 3], [6, 7, 8, 9]])
    assert np.array_equal(U, [[4, 5]])


@given(st.integers(1, 10), st.sampled_from(["multiple", "single"]), st.integers(0, 1000))
def test_pack_unpack_round_trip(N, kind, seed):
    layout = DecisionLayout(N, kind)
    w = np.random.default_rng(seed).normal(size=layout.size)
    X, U = unpack(w, layout)
    if kind == "single":
        assert X is None and U.shape == (N, 2)
    assert np.array_equal(pack(X, U, layout), w)


def test_unpack_length_mismatch():
    with pytest.raises(ValueError):
        unpack(np.zeros(9), DecisionLayout(1))


@pytest.mark.parametrize("integrator", ["euler", "rk4"])
def test_defects_vanish_on_rollout(integrator):
    prob = _problem(N=6)
    nlp = transcribe_multiple_shooting(prob, integrator)
    U = np.tile([0.15, 0.2], (6, 1))
    w = pack(rollout(prob.x0, U, prob, integrator), U, nlp.layout)
    assert np.max(np.abs(nlp.eq(w))) == 0.0


def test_feasibility_transfer():
    """A point satisfying the equalities unpacks to an exact step-by-step trajectory."""
    prob = _problem(N=5)
    nlp = transcribe_multiple_shooting(prob)
    w = initial_guess(prob, nlp.layout, np.tile([0.1, -0.3], (5, 1)))
    X, U = unpack(w, nlp.layout)
    assert np.max(np.abs(nlp.eq(w))) == 0.0
    for k in range(5):
        assert np.array_equal(X[k + 1], step_euler(X[k], U[k], P, 0.2))
    w_rk = initial_guess(prob, nlp.layout, np.tile([0.1, -0.3], (5, 1)), integrator="rk4")
    Xr, _ = unpack(w_rk, nlp.layout)
    assert np.array_equal(Xr[1], step_rk4(X[0], U[0], P, 0.2))


@given(st.integers(0, 10_000))
def test_objective_equivalence(seed):
    rng = np.random.default_rng(seed)
    N = 4
    prob = _problem(N=N, ref=rng.normal(size=4))
    U = np.column_stack([rng.uniform(0, 0.2, N), rng.uniform(-0.5, 0.5, N)])
    X = rollout(prob.x0, U, prob)
    ms = transcribe_multiple_shooting(prob)
    ss = transcribe_single_shooting(prob)
    expected = objective(X, U, prob)
    assert ms.objective(pack(X, U, ms.layout)) == pytest.approx(expected, rel=1e-13)
    assert ss.objective(U.ravel()) == pytest.approx(expected, rel=1e-13)


def test_single_shooting_zero_reference_optimum():
    x0 = np.array([1.0, 2.0, 0.0, 0.3])
    prob = OcpProblem(4, 0.2, P, x0, x0)
    nlp = transcribe_single_shooting(prob)
    assert nlp.n == 8
    assert nlp.objective(np.zeros(8)) == 0.0
    assert np.allclose(nlp.gradient(np.zeros(8)), 0.0)


@pytest.mark.parametrize("kind", ["multiple", "single"])
@pytest.mark.parametrize("integrator", ["euler", "rk4"])
def test_derivatives_match_finite_differences(kind, integrator):
    obs = (Obstacle((3.0, 1.0), 0.5, 0.1),)
    prob = _problem(N=5, obstacles=obs)
    make = transcribe_multiple_shooting if kind == "multiple" else transcribe_single_shooting
    nlp = make(prob, integrator)
    for seed in range(3):
        assert check_derivatives(nlp, _random_w(nlp, seed)) <= 1e-6


def test_linear_constraints_exact():
    """Rate constraints are linear in the controls, so their Jacobian matches differences to rounding."""
    prob = _problem(N=4)
    nlp = transcribe_multiple_shooting(prob)
    w = _random_w(nlp)
    J = nlp.ineq_jacobian(w).toarray()[:8]  # rate rows come first
    h = 1e-3
    fd = np.column_stack([(nlp.ineq(w + h * e)[:8] - nlp.ineq(w - h * e)[:8]) / (2 * h) for e in np.eye(nlp.n)])
    assert np.max(np.abs(J - fd)) <= 1e-12


def test_check_derivatives_detects_wrong_gradient():
    nlp = transcribe_multiple_shooting(_problem(N=3))
    good = check_derivatives(nlp, _random_w(nlp))
    nlp.gradient = lambda w, g=nlp.gradient: g(w) + 1.0
    assert good <= 1e-6 < check_derivatives(nlp, _random_w(nlp))
    with pytest.raises(ValueError):
        check_derivatives(nlp, _random_w(nlp), h=0.0)


def test_jacobian_shapes_and_banded_sparsity():
    N = 6
    prob = _problem(N=N, obstacles=(Obstacle((3.0, 1.0), 0.5),))
    nlp = transcribe_multiple_shooting(prob)
    w = _random_w(nlp)
    Je, Ji = nlp.eq_jacobian(w), nlp.ineq_jacobian(w)
    assert sp.issparse(Je) and Je.shape == (nlp.n_eq, nlp.n)
    assert Ji.shape == (nlp.n_ineq, nlp.n)
    # continuity rows of interval k only touch s_k, q_k and s_{k+1}
    dense = Je.toarray()
    for k in range(N):
        rows = dense[4 + 4 * k: 8 + 4 * k]
        cols = np.flatnonzero(np.any(rows != 0, axis=0))
        assert cols.min() >= 6 * k and cols.max() < 6 * (k + 1) + 4


def test_rate_rows_reference_previous_control():
    prob = _problem(N=3, u_prev=np.array([0.1, 0.2]))
    nlp = transcribe_multiple_shooting(prob)
    U = np.array([[0.1, 0.2], [0.1, 0.2], [0.1, 0.2]])
    w = pack(rollout(prob.x0, U, prob), U, nlp.layout)
    rows = nlp.ineq(w)[:6]
    # the first control's rows carry q_0 itself; u_prev is folded into their bounds
    assert np.allclose(rows, [0.1, 0.2, 0, 0, 0, 0])
    assert np.allclose(nlp.ineq_lb[:2], [0.1 - 0.05, 0.2 - 0.1])
    assert np.allclose(nlp.ineq_ub[:2], [0.1 + 0.05, 0.2 + 0.1])


def test_evaluators_deterministic():
    nlp = transcribe_multiple_shooting(_problem(N=4, obstacles=(Obstacle((3.0, 1.0), 0.5),)))
    w = _random_w(nlp)
    assert nlp.objective(w) == nlp.objective(w)
    assert np.array_equal(nlp.eq(w), nlp.eq(w))
    assert np.array_equal(nlp.ineq(w), nlp.ineq(w))
