import numpy as np
import pytest
from hypothesis import given, strategies as st

from srmwave.decomposition import AngleDecomposition, maximize_concave
from srmwave.motor import example_motor
from srmwave.pwa import fit_model
from srmwave.transcription import Grid, transcribe
from srmwave.verify import enumerate_global, random_toy_problem

TOY_OPT = 21.98904204085767  # toy_problem optimum, by enumeration


@pytest.fixture(scope="module")
def small_example():
    model = example_motor()
    grid = Grid.for_model(model, 2)
    pwa = fit_model(model, grid.theta, (0.0, 1000.0, 2000.0, 3500.0, 6000.0))
    return transcribe(model, pwa, grid, 1000 * 2 * np.pi / 60, 10.0, 3.0)


def full_box(dec):
    G = dec.T * dec.m
    return np.zeros(G, dtype=int), np.full(G, dec.N - 1, dtype=int)


def random_prices(rng, problem, scale):
    return rng.normal(scale=scale, size=problem.A_eq.shape[0]), rng.uniform(0, scale, problem.A_in.shape[0])


def test_only_voltage_and_torque_rows_link_angles(small_example):
    dec = AngleDecomposition(small_example)
    assert set(small_example.eq_kind[dec.link_eq]) == {"a", "i", "h"}
    assert not dec.link_in.any()
    assert dec.structured


@pytest.mark.parametrize("which", ["toy", "example"])
def test_structured_tables_match_qp_tables(which, toy_problem, small_example, rng):
    problem = toy_problem if which == "toy" else small_example
    mu_eq, mu_in = random_prices(rng, problem, 0.05)
    fast = AngleDecomposition(problem, mu_eq, mu_in)
    slow = AngleDecomposition(problem, mu_eq, mu_in, structured=False)
    assert fast.structured and not slow.structured
    finite = np.isfinite(slow.tables)
    assert np.array_equal(finite, np.isfinite(fast.tables))
    scale = max(1.0, np.max(np.abs(slow.tables[finite])))
    assert np.max(np.abs(fast.tables[finite] - slow.tables[finite])) < 1e-6 * scale
    assert fast.bound(*full_box(fast)) == pytest.approx(slow.bound(*full_box(slow)), rel=1e-7, abs=1e-7)


def test_bound_is_below_the_optimum(toy_problem, rng):
    dec = AngleDecomposition(toy_problem)
    assert dec.bound(*full_box(dec)) <= TOY_OPT + 1e-7
    for _ in range(5):
        dec.price(*random_prices(rng, toy_problem, 1.0))
        assert dec.bound(*full_box(dec)) <= TOY_OPT + 1e-7


def test_ascent_improves_and_stays_valid(toy_problem):
    dec = AngleDecomposition(toy_problem)
    before = dec.bound(*full_box(dec))
    after = dec.ascend(iterations=80)
    assert after >= before - 1e-9
    assert after <= TOY_OPT + 1e-6
    assert dec.bound(*full_box(dec)) == pytest.approx(after, rel=1e-9, abs=1e-9)


@given(st.integers(0, 10_000))
def test_bound_valid_on_random_toys(seed):
    rng = np.random.default_rng(seed)
    problem = random_toy_problem(rng, T=4, N=2)
    ref = enumerate_global(problem)
    dec = AngleDecomposition(problem)
    val = dec.ascend(iterations=20)
    if ref.status == "optimal":
        assert val <= ref.objective + 1e-6 * max(1.0, ref.objective)


def test_smaller_box_never_lowers_the_bound(toy_problem):
    dec = AngleDecomposition(toy_problem)
    lo, hi = full_box(dec)
    base = dec.bound(lo, hi)
    for g in range(lo.size):
        for j in range(dec.N):
            l2, h2 = lo.copy(), hi.copy()
            l2[g] = h2[g] = j
            assert dec.bound(l2, h2) >= base - 1e-12
            a = dec.best_assignment(l2, h2)
            assert a[g] == j and np.all((a >= l2) & (a <= h2))


def test_lagrangian_supergradient_inequality(toy_problem, rng):
    dec = AngleDecomposition(toy_problem)
    k = int(dec.link_eq.sum())
    mu = rng.normal(scale=0.1, size=k)
    v0, g = dec.lagrangian(mu)
    for _ in range(10):
        d = rng.normal(scale=0.1, size=k)
        v1, _ = dec.lagrangian(mu + d)
        assert v1 <= v0 + g @ d + 1e-7 * max(1.0, abs(v0))


def test_lagrangian_at_current_prices_equals_bound(toy_problem, rng):
    mu_eq = rng.normal(scale=0.1, size=toy_problem.A_eq.shape[0])
    dec = AngleDecomposition(toy_problem, mu_eq)
    v, _ = dec.lagrangian(dec.mu_eq[dec.link_eq])
    assert v == pytest.approx(dec.bound(*full_box(dec)), rel=1e-12)


def test_assignment_budget(small_example):
    with pytest.raises(ValueError, match="budget"):
        AngleDecomposition(small_example, max_assignments=10)


def test_maximize_concave_piecewise_linear():
    a = np.array([1.0, -2.0, 0.5])

    def f(x):
        return -float(np.sum(np.abs(x - a))), -np.sign(x - a)

    x, val = maximize_concave(f, np.zeros(3), iterations=200)
    assert val > -1e-6
    assert np.allclose(x, a, atol=1e-5)


def test_maximize_concave_smooth():
    c = np.array([3.0, -1.0])

    def f(x):
        return -float((x - c) @ (x - c)), -2.0 * (x - c)

    x, val = maximize_concave(f, np.zeros(2), iterations=200)
    assert val == pytest.approx(0.0, abs=1e-8)


def test_maximize_concave_stops_on_infinite_start():
    x, val = maximize_concave(lambda x: (-np.inf, np.zeros(1)), np.zeros(1))
    assert val == -np.inf
