import numpy as np
import pytest
from hypothesis import given, strategies as st

from srmwave import bnb
from srmwave.motor import example_motor, toy_motor
from srmwave.pwa import fit_model
from srmwave.qp import QpInstance, solve_qp
from srmwave.transcription import (
    ROW_KINDS,
    Grid,
    Layout,
    TranscribeOptions,
    TranscriptionError,
    assemble_waveforms,
    check_rows,
    dump_miqp,
    load_miqp,
    pwa_consistency,
    row_kind_coverage,
    transcribe,
    waveform_metrics,
)

BP = (0.0, 1000.0, 2000.0, 3500.0, 6000.0)


@pytest.fixture(scope="module")
def example_problem():
    model = example_motor()
    grid = Grid.for_model(model, 40)
    pwa = fit_model(model, grid.theta, BP)
    return transcribe(model, pwa, grid, 1000 * 2 * np.pi / 60, 10.0, 3.0)


def origin_point(problem):
    """All physical quantities zero, every group in its first region."""
    x = np.zeros(problem.n_vars)
    x[problem.layout.s[:, :, 0]] = 1.0
    return x


def test_example_sizes(example_problem):
    p = example_problem
    L = p.layout
    assert p.binary.size == 40 * 3 * 4 == 480
    assert p.sos1_groups.shape == (120, 4)
    assert L.block == 3 * 3 + 2 * 3 + 3 + 1 + 2 * 3 * 4
    # every variable index appears exactly once across the families
    allidx = np.concatenate([getattr(L, f).ravel() for f in L.families])
    assert np.array_equal(np.sort(allidx), np.arange(L.n_vars))
    assert row_kind_coverage(p) == set(ROW_KINDS)


def test_row_counts_per_kind(example_problem):
    p = example_problem
    T, n, m, l, N = 40, 3, 3, 3, 4
    eq = {k: int(np.sum(p.eq_kind == k)) for k in set(p.eq_kind)}
    assert eq == {"a": (T - 1) * n, "i": n, "b": T * m, "c": T * l, "d": T * n, "e": T * m * 3, "f": T, "h": 1}
    ineq = {k: int(np.sum(p.in_kind == k)) for k in set(p.in_kind)}
    expect_g = T * n * (4 if p.model.i_max is not None else 2)
    assert ineq == {"e": T * m * N * 2, "g": expect_g}


def test_group_numbering(example_problem):
    p = example_problem
    for t, k in ((0, 0), (3, 2), (39, 1)):
        assert np.array_equal(p.sos1_groups[p.group_of(t, k)], p.layout.s[t, k])


def test_origin_is_feasible_at_zero_torque(toy):
    grid = Grid.for_model(toy, 8)
    pwa = fit_model(toy, grid.theta, (0.0, 700.0, 2000.0))
    p = transcribe(toy, pwa, grid, 40.0, 0.0, 2.0)
    x = origin_point(p)
    chk = check_rows(p, x)
    assert chk.feasible(eq_tol=1e-12, in_tol=0.0)
    assert pwa_consistency(p, x) == 0.0
    assert p.objective(x) == 0.0


def test_origin_violates_only_the_torque_row_otherwise(toy_problem):
    chk = check_rows(toy_problem, origin_point(toy_problem))
    assert chk.eq_residual["h"] == pytest.approx(1.5)
    assert all(v == 0.0 for k, v in chk.eq_residual.items() if k != "h")


def test_objective_matches_metric_oracle(toy_problem, rng):
    p = toy_problem
    x = rng.normal(size=p.n_vars)
    L = p.layout
    i, tau = x[L.i], x[L.tau]
    R = p.model.resistance
    # oracle: literal double loop
    loss = sum(i[t] @ R @ i[t] for t in range(L.T)) / L.T
    dev = sum((tau[t] - p.tau_des) ** 2 for t in range(L.T)) / L.T
    assert p.objective(x) == pytest.approx(loss + p.alpha * dev, rel=1e-12)
    avg, ripple, loss2, obj = waveform_metrics(i, tau, R, p.alpha, p.tau_des)
    assert avg == pytest.approx(np.mean(tau))
    assert ripple == pytest.approx(np.var(tau))
    assert obj == pytest.approx(loss + p.alpha * dev, rel=1e-12)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 10))
def test_objective_splits_into_ripple_and_bias(mean, tau_des, alpha):
    tau = mean + np.array([0.3, -0.1, 0.5, -0.7])
    _, ripple, _, obj = waveform_metrics(np.zeros((4, 1)), tau, np.eye(1), alpha, tau_des)
    assert obj == pytest.approx(alpha * (ripple + (np.mean(tau) - tau_des) ** 2), rel=1e-9, abs=1e-12)


def test_dynamics_rows_against_solution(toy_problem):
    res = bnb.solve(toy_problem, log_every=10 ** 9)
    p, sol = toy_problem, res.incumbent
    chk = check_rows(p, res.x)
    assert chk.feasible(eq_tol=1e-6, in_tol=1e-8)
    assert pwa_consistency(p, res.x) < 1e-6
    w = p.omega / p.grid.delta
    R = p.model.resistance
    perm = list(p.model.winding_perm)
    lam_next = np.vstack([sol.lam[1:], sol.lam[0][perm]])
    v_expect = sol.i @ R.T + w * (lam_next - sol.lam)
    assert np.max(np.abs(sol.v - v_expect)) < 1e-6 * max(1.0, np.abs(sol.v).max())
    assert sol.objective == pytest.approx(p.objective(res.x), rel=1e-9)
    assert sol.avg_torque == pytest.approx(np.mean(sol.tau))


def test_single_point_single_region_is_a_plain_qp(toy):
    grid = Grid.for_model(toy, 1)
    pwa = fit_model(toy, grid.theta, (0.0, 2000.0))
    # torque at theta = 0 is negative for positive MMF
    p = transcribe(toy, pwa, grid, 40.0, -1.0, 2.0)
    assert p.binary.size == 1
    res = bnb.solve(p, log_every=10 ** 9)
    lb, ub = p.lb.copy(), p.ub.copy()
    lb[p.binary] = ub[p.binary] = 1.0
    qp = solve_qp(QpInstance(p.P, p.q, p.A_eq, p.b_eq, p.A_in, p.b_in, lb, ub, p.const))
    assert res.status == "optimal" and res.nodes == 1
    assert res.upper_bound == pytest.approx(qp.objective, rel=1e-8)


def test_zero_speed_has_no_derivative_term(toy):
    grid = Grid.for_model(toy, 4)
    pwa = fit_model(toy, grid.theta, (0.0, 2000.0))
    p = transcribe(toy, pwa, grid, 0.0, 1.0, 1.0)
    dyn = (p.eq_kind == "a") | (p.eq_kind == "i")
    cols = p.A_eq[dyn].tocoo().col
    assert set(cols) <= set(p.layout.i.ravel()) | set(p.layout.v.ravel())


def test_current_limit_option(toy):
    model = toy_motor(phase=0.7, resistance=0.5, turns=150.0, v_max=200.0, i_max=8.0)
    grid = Grid.for_model(model, 4)
    pwa = fit_model(model, grid.theta, (0.0, 2000.0))
    with_lim = transcribe(model, pwa, grid, 40.0, 1.0, 1.0)
    without = transcribe(model, pwa, grid, 40.0, 1.0, 1.0, TranscribeOptions(current_limit=False))
    assert np.sum(with_lim.in_kind == "g") == 2 * np.sum(without.in_kind == "g")


def test_bound_tightening_option(toy_problem):
    p = toy_problem
    loose = transcribe(p.model, p.pwa, p.grid, p.omega, p.tau_des, p.alpha, TranscribeOptions(tighten_bounds=False))
    assert np.all(np.isinf(loose.lb[p.layout.F]))
    assert np.all(p.lb[p.layout.F] == 0.0) and np.all(p.ub[p.layout.F] == 2000.0)


def test_dump_roundtrip(toy_problem, tmp_path):
    p = toy_problem
    path = tmp_path / "toy.miqp"
    dump_miqp(p, path)
    d = load_miqp(path)
    assert abs(d["P"] - p.P).max() == 0.0
    assert np.array_equal(d["q"], p.q)
    assert d["const"] == p.const
    assert abs(d["A_eq"] - p.A_eq).max() == 0.0 and abs(d["A_in"] - p.A_in).max() == 0.0
    assert np.array_equal(d["b_eq"], p.b_eq) and np.array_equal(d["b_in"], p.b_in)
    assert np.array_equal(d["lb"], p.lb) and np.array_equal(d["ub"], p.ub)
    assert np.array_equal(d["binary"], p.binary)
    assert np.array_equal(d["sos1"], p.sos1_groups)
    assert "var 0 i[0][0]" in path.read_text()


def test_layout_names_are_unique():
    L = Layout(2, 3, 3, 3, 2)
    names = L.names()
    assert len(set(names)) == L.n_vars
    assert names[L.z[1, 2, 1]] == "z[1][2][1]"


def test_input_errors(toy, toy_problem):
    p = toy_problem
    with pytest.raises(TranscriptionError, match="alpha"):
        transcribe(toy, p.pwa, p.grid, 1.0, 1.0, -1.0)
    with pytest.raises(TranscriptionError, match="span"):
        transcribe(toy, p.pwa, Grid(4, 1.0), 1.0, 1.0, 1.0)
    with pytest.raises(TranscriptionError, match="grid angles"):
        transcribe(toy, p.pwa, Grid.for_model(toy, 8), 1.0, 1.0, 1.0)
    with pytest.raises(TranscriptionError):
        Grid(0, 1.0)
    with pytest.raises(TranscriptionError, match="length"):
        assemble_waveforms(p, np.zeros(3))
