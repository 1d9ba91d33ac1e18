import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from srmwave.qp import INFEASIBLE, OPTIMAL, QpError, QpInstance, solve_qp, warm_solve


def enumerate_active_sets(P, q, E, e, G, h):
    """Exact minimizer of a strictly convex QP by trying every active set.

    Returns (x, objective) or None when no active set satisfies KKT.
    """
    n, mi = q.size, h.size
    best = None
    for r in range(mi + 1):
        for W in itertools.combinations(range(mi), r):
            A = np.vstack([E, G[list(W)]]) if (E.size or W) else np.zeros((0, n))
            b = np.concatenate([e, h[list(W)]])
            k = A.shape[0]
            K = np.block([[P, A.T], [A, np.zeros((k, k))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-q, b]))
            except np.linalg.LinAlgError:
                continue
            if np.linalg.cond(K) > 1e10:
                continue
            x, lam = sol[:n], sol[n:]
            mu = lam[E.shape[0]:]
            if np.all(np.abs(E @ x - e) <= 1e-9) and np.all(G @ x <= h + 1e-9) and np.all(mu >= -1e-9):
                val = 0.5 * x @ P @ x + q @ x
                if best is None or val < best[1] - 1e-12:
                    best = (x, val)
    return best


def random_qp(rng, n=4, me=1, mi=3, box=True):
    B = rng.normal(size=(n, n))
    P = B @ B.T + 0.5 * np.eye(n)
    q = rng.normal(size=n)
    E = rng.normal(size=(me, n))
    x_feas = rng.normal(size=n)
    e = E @ x_feas
    G = rng.normal(size=(mi, n))
    h = G @ x_feas + rng.uniform(0.0, 1.0, mi)
    lb = x_feas - rng.uniform(0.1, 2.0, n) if box else None
    ub = x_feas + rng.uniform(0.1, 2.0, n) if box else None
    return P, q, E, e, G, h, lb, ub


def as_rows(G, h, lb, ub):
    n = G.shape[1]
    if lb is None:
        return G, h
    return np.vstack([G, -np.eye(n), np.eye(n)]), np.concatenate([h, -lb, ub])


@given(st.integers(0, 100_000))
def test_matches_active_set_oracle(seed):
    rng = np.random.default_rng(seed)
    P, q, E, e, G, h, lb, ub = random_qp(rng)
    res = solve_qp(QpInstance(P, q, E, e, G, h, lb, ub), tolerance=1e-9)
    oracle = enumerate_active_sets(P, q, E, e, *as_rows(G, h, lb, ub))
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(oracle[1], rel=1e-7, abs=1e-9)
    assert np.allclose(res.x, oracle[0], atol=1e-6)
    assert max(res.kkt.values()) < 1e-7


def test_duals_satisfy_stationarity(rng):
    P, q, E, e, G, h, lb, ub = random_qp(rng, n=6, me=2, mi=4)
    res = solve_qp(QpInstance(P, q, E, e, G, h, lb, ub))
    stat = P @ res.x + q + E.T @ res.y_eq + G.T @ res.y_in - res.y_lb + res.y_ub
    assert np.max(np.abs(stat)) < 1e-7
    assert min(res.y_in.min(), res.y_lb.min(), res.y_ub.min()) >= -1e-9
    # strong duality for the polished point
    assert res.dual_objective == pytest.approx(res.objective, abs=1e-7)


def test_unconstrained_closed_form(rng):
    B = rng.normal(size=(5, 5))
    P = B @ B.T + np.eye(5)
    q = rng.normal(size=5)
    res = solve_qp(QpInstance(P, q, const=2.5))
    x = np.linalg.solve(P, -q)
    assert np.allclose(res.x, x, atol=1e-9)
    assert res.objective == pytest.approx(2.5 + 0.5 * q @ x, rel=1e-10)


def test_infeasible_has_farkas_certificate():
    # x0 + x1 = 3 with both variables in [0, 1]
    inst = QpInstance(sp.eye(2), np.zeros(2), A_eq=[[1.0, 1.0]], b_eq=[3.0], lb=np.zeros(2), ub=np.ones(2))
    res = solve_qp(inst)
    assert res.status == INFEASIBLE
    c = res.certificate
    assert c["violation"] > 1e-6 and c["residual"] < 1e-8
    comb = inst.A_eq.T @ c["y_eq"] - c["z_lb"] + c["z_ub"]
    assert np.max(np.abs(comb)) < 1e-8
    assert np.all(c["z_lb"] >= 0) and np.all(c["z_ub"] >= 0)


def test_crossed_bounds_are_reported():
    res = solve_qp(QpInstance(sp.eye(2), np.zeros(2), lb=[0.0, 2.0], ub=[1.0, 1.0]))
    assert res.status == INFEASIBLE
    assert res.certificate["variable"] == 1


def test_fixed_variables_are_presolved(rng):
    P, q, E, e, G, h, lb, ub = random_qp(rng, n=5, me=1, mi=2)
    res = solve_qp(QpInstance(P, q, E, e, G, h, lb, ub))
    lb2, ub2 = lb.copy(), ub.copy()
    lb2[[0, 3]] = ub2[[0, 3]] = res.x[[0, 3]]
    again = solve_qp(QpInstance(P, q, E, e, G, h, lb2, ub2))
    assert again.status == OPTIMAL
    assert again.objective == pytest.approx(res.objective, rel=1e-8, abs=1e-10)
    assert np.array_equal(again.x[[0, 3]], res.x[[0, 3]])


def test_all_fixed_and_violated_row():
    inst = QpInstance(sp.eye(2), np.ones(2), A_in=[[1.0, 1.0]], b_in=[1.0], lb=[1.0, 1.0], ub=[1.0, 1.0])
    assert solve_qp(inst).status == INFEASIBLE
    inst = QpInstance(sp.eye(2), np.ones(2), A_in=[[1.0, 1.0]], b_in=[3.0], lb=[1.0, 1.0], ub=[1.0, 1.0])
    res = solve_qp(inst)
    assert res.status == OPTIMAL and res.objective == pytest.approx(3.0)


def test_warm_start_reuses_active_set(rng):
    P, q, E, e, G, h, lb, ub = random_qp(rng, n=8, me=2, mi=5)
    parent = solve_qp(QpInstance(P, q, E, e, G, h, lb, ub))
    child_ub = ub.copy()
    child_ub[0] = min(ub[0], parent.x[0] + 1e-3)
    inst = QpInstance(P, q, E, e, G, h, lb, child_ub)
    warm = warm_solve(inst, parent)
    cold = solve_qp(inst)
    assert warm.status == cold.status == OPTIMAL
    assert warm.objective == pytest.approx(cold.objective, rel=1e-9, abs=1e-10)
    assert warm.method == "active-set"


def test_warm_start_falls_back_when_parent_is_wrong(rng):
    P, q, E, e, G, h, lb, ub = random_qp(rng, n=6, me=1, mi=3)
    parent = solve_qp(QpInstance(P, q, E, e, G, h, lb, ub))
    # push the optimum far away so the parent's active set no longer applies
    inst = QpInstance(P, q + 50 * rng.normal(size=6), E, e, G, h, lb, ub)
    warm = warm_solve(inst, parent)
    assert warm.status == OPTIMAL
    assert warm.objective == pytest.approx(solve_qp(inst).objective, rel=1e-8, abs=1e-9)


def test_validation_errors():
    with pytest.raises(QpError, match="symmetric"):
        QpInstance(np.array([[1.0, 1.0], [0.0, 1.0]]), np.zeros(2)).validate()
    with pytest.raises(QpError, match="semidefinite"):
        QpInstance(np.array([[1.0, 0.0], [0.0, -1.0]]), np.zeros(2)).validate()
    with pytest.raises(QpError, match="dimensions"):
        QpInstance(sp.eye(2), np.zeros(2), A_eq=[[1.0, 1.0]], b_eq=[1.0, 2.0])
    with pytest.raises(QpError, match="unbounded"):
        solve_qp(QpInstance(sp.csc_matrix((2, 2)), np.array([1.0, 0.0])))
