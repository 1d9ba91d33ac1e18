from dataclasses import replace

import numpy as np
import pytest

from srmwave import bnb
from srmwave.motor import example_motor, toy_motor
from srmwave.pwa import fit_model
from srmwave.transcription import Grid, transcribe
from srmwave.verify import (
    VerifyError,
    affine_crosscheck,
    affine_motor,
    enumerate_global,
    evaluate_waveforms,
    glue_mismatch,
    perm_power,
    period_mismatch,
    relabel_phases,
    unfold,
)

TOY_OPT = 21.98904204085767
QUIET = dict(log_every=10 ** 9)


@pytest.fixture(scope="module")
def toy_solution(toy_problem):
    return bnb.solve(toy_problem, **QUIET)


@pytest.fixture(scope="module")
def example_small():
    model = example_motor()
    grid = Grid.for_model(model, 4)
    pwa = fit_model(model, grid.theta, (0.0, 1000.0, 6000.0))
    problem = transcribe(model, pwa, grid, 500 * 2 * np.pi / 60, 4.0, 3.0)
    return problem, bnb.solve(problem, gap_tol=1e-9, **QUIET)


def test_enumeration_on_toy(toy_problem):
    ref = enumerate_global(toy_problem)
    assert ref.status == "optimal"
    assert ref.n_assignments == 2 ** 4
    assert ref.objective == pytest.approx(TOY_OPT, rel=1e-9)
    assert ref.assignment.shape == (4, 1)
    assert ref.trajectories["i"].shape == (4, 1)


def test_enumeration_budget(toy_problem):
    with pytest.raises(VerifyError, match="budget"):
        enumerate_global(toy_problem, budget=8)


def test_enumeration_threads_agree(toy_problem):
    assert enumerate_global(toy_problem, workers=2).objective == pytest.approx(TOY_OPT, rel=1e-12)


def test_reevaluation_reproduces_solver_metrics(toy_problem, toy_solution):
    sol = toy_solution.incumbent
    ev = evaluate_waveforms(toy_problem.model, sol, pwa=toy_problem.pwa)
    assert ev.objective == pytest.approx(sol.objective, rel=1e-7)
    assert ev.avg_torque == pytest.approx(sol.avg_torque, rel=1e-7, abs=1e-9)
    assert ev.max_abs_v == pytest.approx(sol.max_abs_v, rel=1e-12)
    assert ev.flux_discrepancy < 1e-9
    # the sampled torque differs from the fit by no more than the fit's own error envelope
    assert np.all(np.abs(ev.tau_true - ev.tau_pwa) <= ev.torque_envelope + 1e-9)


def test_zero_waveform_metrics(toy_problem, toy_solution):
    sol = toy_solution.incumbent
    zero = replace(sol, i=np.zeros_like(sol.i), v=np.zeros_like(sol.v), F=np.zeros_like(sol.F),
                   psi=np.zeros_like(sol.psi), lam=np.zeros_like(sol.lam))
    for use_pwa in (True, False):
        ev = evaluate_waveforms(toy_problem.model, zero, use_pwa=use_pwa, pwa=toy_problem.pwa)
        assert ev.loss == 0.0 and ev.max_abs_v == 0.0
        assert np.all(np.abs(ev.tau) < 1e-12)
        assert ev.objective == pytest.approx(sol.alpha * sol.tau_des ** 2, rel=1e-12)


def test_reevaluation_errors(toy_problem, toy_solution):
    sol = toy_solution.incumbent
    with pytest.raises(VerifyError, match="needs the PWA"):
        evaluate_waveforms(toy_problem.model, sol, use_pwa=True)
    bad = replace(sol, F=sol.F + 1e5)
    with pytest.raises(VerifyError, match="outside"):
        evaluate_waveforms(toy_problem.model, bad, pwa=toy_problem.pwa)


def test_enumeration_matches_bnb_on_three_phase_example(example_small):
    problem, res = example_small
    ref = enumerate_global(problem, budget=2 ** 12)
    assert res.status == "optimal"
    assert res.upper_bound == pytest.approx(ref.objective, rel=1e-6)


@pytest.mark.parametrize("phases", [1, 3])
def test_affine_crosscheck(phases):
    model = affine_motor(phases=phases)
    cmp = affine_crosscheck(model, omega=50.0, tau_des=0.5, alpha=2.0, T=8)
    assert cmp.micp_status == "optimal" and cmp.direct_status == "optimal"
    assert cmp.relative_difference <= 1e-6


def test_affine_crosscheck_rejects_saturating_model(toy):
    with pytest.raises(Exception, match="affine"):
        affine_crosscheck(toy, 10.0, 1.0, 1.0, T=4)


def test_loss_scales_with_resistance_at_standstill(toy):
    # omega = 0 and alpha = 0: the optimal MMF is independent of R, so the
    # objective is linear in R while the voltage limit stays inactive
    vals = []
    for R in (0.25, 0.5):
        model = toy_motor(phase=0.7, resistance=R, turns=150.0, v_max=200.0)
        grid = Grid.for_model(model, 4)
        problem = transcribe(model, fit_model(model, grid.theta, (0.0, 700.0, 2000.0)), grid, 0.0, 1.5, 0.0)
        vals.append(enumerate_global(problem).objective)
    assert vals[1] == pytest.approx(2 * vals[0], rel=1e-7)


def test_glue_of_solver_output(toy_solution, example_small):
    assert glue_mismatch(toy_solution.incumbent) <= 1e-9
    sol = example_small[1].incumbent
    assert glue_mismatch(sol) <= 1e-9 * max(1.0, np.abs(sol.lam).max())


def test_glue_detects_a_broken_trajectory(toy_solution):
    sol = toy_solution.incumbent
    bent = replace(sol, v=sol.v.copy())
    bent.v[-1] += 1.0
    w = sol.omega / (sol.span / sol.T)
    assert glue_mismatch(bent) == pytest.approx(1.0 / w, rel=1e-9)


def test_unfold_and_period(example_small):
    sol = example_small[1].incumbent
    perm, K = sol.winding_perm, sol.phase_count
    full = unfold(sol.i, perm, K)
    assert full.shape == (K * sol.T, 3)
    assert np.array_equal(full[: sol.T], sol.i)
    # shifting by one reduced interval applies the permutation
    assert np.array_equal(full[sol.T: 2 * sol.T], sol.i[:, list(perm)])
    assert np.array_equal(perm_power(perm, K), np.arange(3))
    assert period_mismatch(sol.i, perm, K) == 0.0


def test_perm_power():
    assert list(perm_power((1, 2, 0), 1)) == [1, 2, 0]
    assert list(perm_power((1, 2, 0), 2)) == [2, 0, 1]
    assert list(perm_power((1, 2, 0), 0)) == [0, 1, 2]


def test_objective_invariant_under_relabeling(example_small):
    problem, res = example_small
    model2 = relabel_phases(problem.model, 1)
    grid = problem.grid
    pwa2 = fit_model(model2, grid.theta, problem.pwa.breakpoints)
    p2 = transcribe(model2, pwa2, grid, problem.omega, problem.tau_des, problem.alpha)
    res2 = bnb.solve(p2, gap_tol=1e-9, **QUIET)
    assert abs(res2.upper_bound - res.upper_bound) <= 1e-9 * max(1.0, res.upper_bound)
