"""Acceptance suite: one recorded pass/fail line per criterion, printed at the end of the run.

The four mission criteria run the bundled scenarios at full length (several
minutes in total). Criteria that the model cannot attain fail here instead of
being weakened.
"""

import math

import numpy as np
import pytest

import conftest
import oracles
from ttnmpc import harness
from ttnmpc.ipopt import IpoptSolver
from ttnmpc.nlp import OPTIMAL, AugmentedLagrangian, SolverOptions
from ttnmpc.ocp import OcpProblem, Weights
from ttnmpc.transcription import initial_guess, transcribe_multiple_shooting, transcribe_single_shooting
from ttnmpc.vehicle_model import VehicleParams, step_euler, step_rk4

MISSIONS = ("forward_obstacle", "backward_obstacle", "forward_circle", "backward_circle")
THETA1_LIMIT = 0.7 + 1e-6
CLEARANCE_LIMIT = -1e-6


def record(number, passed, line):
    conftest.ACCEPTANCE[number] = (bool(passed), line)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {line}")
    assert passed, line


@pytest.fixture(scope="module")
def missions(tmp_path_factory):
    out = tmp_path_factory.mktemp("missions")
    results = {}
    for name in MISSIONS:
        s = harness.load_scenario(harness.bundled_dir() / f"{name}.scn")
        results[name] = harness.run(s, out / name)
    return results


def _path_errors(result):
    return np.array([r.path_error for r in result.log.rows])


def _obstacle_criterion(number, result, need_position):
    sm = result.summary
    ok_pos = sm.final_position_error <= 0.05 if need_position else True
    passed = (result.log.success and ok_pos and sm.min_clearance >= CLEARANCE_LIMIT
              and sm.max_abs_theta1 <= THETA1_LIMIT)
    record(number, passed,
           f"{result.scenario.name}: status {sm.status}, final position error {sm.final_position_error:.4f} m, "
           f"min clearance {sm.min_clearance:.4f} m, max |theta1| {sm.max_abs_theta1:.4f} rad, "
           f"{sm.tick_count} ticks, {sm.wall_time:.0f} s")


def test_forward_obstacle_mission(missions):
    _obstacle_criterion(1, missions["forward_obstacle"], need_position=True)


def test_backward_obstacle_mission(missions):
    _obstacle_criterion(2, missions["backward_obstacle"], need_position=False)


def test_forward_circle(missions):
    result = missions["forward_circle"]
    err = _path_errors(result)
    tail = err[3 * len(err) // 4:]
    bounded = tail.max() <= 1.5 * np.median(err)
    passed = err.max() <= 0.25 and bounded
    record(3, passed, f"forward circle: max path error {err.max():.4f} m (limit 0.25), last-quarter max "
                      f"{tail.max():.4f} vs 1.5 x median {1.5 * np.median(err):.4f}, status {result.summary.status}")


def test_backward_circle(missions):
    result = missions["backward_circle"]
    err = _path_errors(result)
    rmse = math.sqrt(np.mean(err ** 2))
    passed = err.max() <= 0.20 and rmse <= 0.15
    record(4, passed, f"backward circle: max path error {err.max():.4f} m (limit 0.20), RMSE {rmse:.4f} m "
                      f"(limit 0.15), status {result.summary.status}")


def _planning_problem(N):
    return OcpProblem(N, 0.2, VehicleParams(), np.array([0.0, 0.0, 0.05, 1.4]), np.array([0.06, 0.01, 0.0, 1.5]),
                      weights=Weights(Q=np.diag([50.0, 50.0, 1.0, 1.0]), R=np.diag([0.5, 0.05])),
                      rate_box=(np.array([-1.0, -1.0]), np.array([1.0, 1.0])))


def test_shooting_equivalence():
    prob = _planning_problem(5)
    opts = SolverOptions(kkt_tolerance=1e-8, constraint_tolerance=1e-9, max_iterations=200)
    values, statuses = {}, []
    for label, solver in (("al", AugmentedLagrangian()), ("ipopt", IpoptSolver())):
        for make in (transcribe_multiple_shooting, transcribe_single_shooting):
            nlp = make(prob)
            sol = solver.solve(nlp, initial_guess(prob, nlp.layout), opts)
            statuses.append(sol.status)
            values[label, nlp.layout.kind] = sol.objective_value
    gaps = {label: abs(values[label, "multiple"] - values[label, "single"]) for label in ("al", "ipopt")}
    passed = all(s == OPTIMAL for s in statuses) and max(gaps.values()) <= 1e-4
    record(5, passed, "N=5 single vs multiple shooting objective gap "
                      + ", ".join(f"{k} {v:.2e}" for k, v in gaps.items()) + " (limit 1e-4)")


def test_brute_force_oracle():
    prob = _planning_problem(2)
    best = oracles.grid_search_two_steps(prob.x0, prob.reference, prob.weights.Q, prob.weights.R, prob.weights.P,
                                         prob.dt, *prob.control_box)
    nlp = transcribe_multiple_shooting(prob)
    found = {}
    for label, solver in (("al", AugmentedLagrangian()), ("ipopt", IpoptSolver())):
        sol = solver.solve(nlp, initial_guess(prob, nlp.layout), SolverOptions(kkt_tolerance=1e-8))
        found[label] = sol.objective_value if sol.status == OPTIMAL else math.inf
    passed = max(found.values()) <= best + 1e-3
    record(6, passed, "N=2 optimum " + ", ".join(f"{k} {v:.6f}" for k, v in found.items())
           + f" vs 21x21 grid best {best:.6f} (+1e-3)")


def test_derivative_check():
    worst, where = 0.0, ""
    for path in harness.bundled_scenarios():
        s = harness.load_scenario(path)
        for shooting in harness.SHOOTINGS:
            e = max(harness.derivative_errors(s.with_overrides(shooting=shooting), points=5))
            if e >= worst:
                worst, where = e, f"{s.name}/{shooting}"
    record(7, worst <= 1e-5, f"max relative derivative error {worst:.2e} (at {where}) over every bundled "
                             f"scenario and both shootings (limit 1e-5)")


def test_continuity_defects():
    worst, count = 0.0, 0
    for name, ticks in (("forward_obstacle", 15), ("backward_circle", 15)):
        s = harness.load_scenario(harness.bundled_dir() / f"{name}.scn").with_overrides(max_ticks=ticks)
        params = s.params
        log = harness.execute(s, keep_predictions=True)
        for row, (X, U) in zip(log.rows, log.predictions):
            if row.status != OPTIMAL:
                continue
            for k in range(len(U)):
                worst = max(worst, float(np.max(np.abs(X[k + 1] - step_euler(X[k], U[k], params, s.dt)))))
            count += 1
    record(8, count > 0 and worst <= 1e-6, f"max continuity defect {worst:.2e} over {count} optimal solves "
                                           f"at N_c=60 (limit 1e-6)")


def test_integrator_orders():
    params = VehicleParams()
    x0, u = [0.0, 0.0, 0.1, 1.2], [0.2, 0.4]  # 2 s curve at full speed and heavy steering
    euler = oracles.convergence_order(lambda x, u, h: step_euler(x, u, params, h), x0, u, 2.0, 40)
    rk4 = oracles.convergence_order(lambda x, u, h: step_rk4(x, u, params, h), x0, u, 2.0, 4)
    passed = abs(euler - 1.0) <= 0.1 and abs(rk4 - 4.0) <= 0.3
    record(9, passed, f"observed orders Euler {euler:.3f} (1 +/- 0.1), RK4 {rk4:.3f} (4 +/- 0.3)")


def test_determinism(tmp_path):
    s = harness.load_scenario(harness.bundled_dir() / "straight_line.scn").with_overrides(
        seed=11, noise_std=(1e-3, 1e-3, 1e-4, 1e-4), max_ticks=25)
    a = harness.run(s, tmp_path / "a")
    b = harness.run(s, tmp_path / "b")
    same = a.files["csv"].read_bytes() == b.files["csv"].read_bytes()
    record(10, same and a.log.tick_count > 0,
           f"two seeded noisy runs of {s.name} ({a.log.tick_count} ticks): mission CSVs "
           f"{'byte-identical' if same else 'differ'}")


def test_real_time_budget(missions):
    times = {}
    for name, result in missions.items():
        doc = harness.stored_summary(result.files["summary"])
        times[name] = doc.mean_solve_time
    present = all(math.isfinite(t) and t > 0 for t in times.values())
    under = all(t < 0.2 for t in times.values())
    record(11, present, "mean solve time per tick at N_c=60: "
           + ", ".join(f"{k} {v * 1000:.0f} ms" for k, v in times.items())
           + f" ({'all' if under else 'not all'} under the 200 ms period; logged, not asserted)")
