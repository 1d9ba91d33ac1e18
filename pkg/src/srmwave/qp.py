"""Convex QP solves with certified KKT residuals.

Problem form::

    minimize    0.5 x'Px + q'x + const
    subject to  A_eq x = b_eq,  A_in x <= b_in,  lb <= x <= ub

Data are Ruiz-equilibrated, solved with the Clarabel interior-point method and
then polished with an exact active-set KKT solve. Warm starts reuse a parent's
active set through a few primal-dual active-set iterations and fall back to a
cold interior-point solve when that does not certify. Residuals are checked on
the scaled data and reported in problem units.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

OPTIMAL = "optimal"
INFEASIBLE = "primal-infeasible"
ITER_LIMIT = "iteration-limit"


class QpError(ValueError):
    pass


@dataclass(eq=False)
class QpInstance:
    P: sp.spmatrix
    q: np.ndarray
    A_eq: sp.spmatrix | None = None
    b_eq: np.ndarray | None = None
    A_in: sp.spmatrix | None = None
    b_in: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    const: float = 0.0
    x0: np.ndarray | None = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        n = self.q.size
        self.P = sp.csc_matrix(self.P, shape=(n, n))
        self.A_eq = sp.csr_matrix((0, n)) if self.A_eq is None else sp.csr_matrix(self.A_eq)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float)
        self.A_in = sp.csr_matrix((0, n)) if self.A_in is None else sp.csr_matrix(self.A_in)
        self.b_in = np.zeros(0) if self.b_in is None else np.asarray(self.b_in, dtype=float)
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        if self.A_eq.shape != (self.b_eq.size, n) or self.A_in.shape != (self.b_in.size, n):
            raise QpError("constraint dimensions inconsistent")
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise QpError("bound dimensions inconsistent")

    @property
    def n(self) -> int:
        return self.q.size

    def validate(self) -> None:
        """Raise unless P is symmetric positive semidefinite (Cholesky attempt)."""
        P = self.P
        if abs(P - P.T).max() > 1e-12 * max(abs(P).max(), 1.0):
            raise QpError("P is not symmetric")
        nz = np.unique(P.nonzero()[0])
        if nz.size == 0:
            return
        sub = P[nz][:, nz].toarray()
        shift = 1e-10 * max(np.max(np.abs(np.diag(sub))), 1e-300)
        # block-diagonal pieces are factored separately to keep this cheap
        n_comp, labels = sp.csgraph.connected_components(sp.csr_matrix(sub != 0), directed=False)
        for c in range(n_comp):
            idx = np.flatnonzero(labels == c)
            try:
                np.linalg.cholesky(sub[np.ix_(idx, idx)] + shift * np.eye(idx.size))
            except np.linalg.LinAlgError:
                raise QpError("P is not positive semidefinite") from None

    def objective(self, x) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x + self.const)


@dataclass(eq=False)
class QpResult:
    status: str
    x: np.ndarray
    objective: float
    y_eq: np.ndarray
    y_in: np.ndarray
    y_lb: np.ndarray
    y_ub: np.ndarray
    kkt: dict
    scaled_kkt: dict
    iterations: int = 0
    method: str = ""
    dual_objective: float = float("nan")
    active_in: np.ndarray | None = None
    active_lb: np.ndarray | None = None
    active_ub: np.ndarray | None = None
    certificate: dict | None = None
    solve_time: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


# ---------------------------------------------------------------------------
class _Standard:
    """Instance rewritten as  E x = e,  G x <= h  over the free variables, Ruiz-scaled.

    Fixed variables (lb == ub) are substituted out and rows left without a
    free variable are dropped (or flagged when violated). Keeping them would
    make the multipliers non-unique, and a degenerate KKT system loses digits.
    """

    def __init__(self, inst: QpInstance, ruiz_iters: int = 15):
        lb, ub = inst.lb, inst.ub
        self.trivially_infeasible = None
        self.empty_row = None
        if np.any(lb > ub):
            self.trivially_infeasible = int(np.flatnonzero(lb > ub)[0])
        fixed = np.isfinite(lb) & (lb == ub)
        free = np.flatnonzero(~fixed)
        fx = np.flatnonzero(fixed)
        xf = lb[fx]
        self.free, self.fx, self.xfix, self.n_full = free, fx, xf, inst.n
        Aeq = sp.csc_matrix(inst.A_eq)
        Ain = sp.csc_matrix(inst.A_in)
        e0 = inst.b_eq - Aeq[:, fx] @ xf
        h0 = inst.b_in - Ain[:, fx] @ xf
        Aeq_f = sp.csr_matrix(Aeq[:, free])
        Ain_f = sp.csr_matrix(Ain[:, free])
        eq_keep = np.diff(Aeq_f.indptr) > 0
        in_keep = np.diff(Ain_f.indptr) > 0
        scale_eq = 1.0 + np.abs(inst.b_eq) + _row_inf(Aeq) * (1.0 + np.max(np.abs(xf), initial=0.0))
        scale_in = 1.0 + np.abs(inst.b_in) + _row_inf(Ain) * (1.0 + np.max(np.abs(xf), initial=0.0))
        bad_eq = np.flatnonzero(~eq_keep & (np.abs(e0) > 1e-9 * scale_eq))
        bad_in = np.flatnonzero(~in_keep & (h0 < -1e-9 * scale_in))
        if bad_eq.size:
            self.empty_row = ("eq", int(bad_eq[0]), float(e0[bad_eq[0]]))
        elif bad_in.size:
            self.empty_row = ("in", int(bad_in[0]), float(h0[bad_in[0]]))
        self.eq_rows = np.flatnonzero(eq_keep)
        self.in_rows = np.flatnonzero(in_keep)
        lbf, ubf = lb[free], ub[free]
        lo = np.flatnonzero(np.isfinite(lbf))
        hi = np.flatnonzero(np.isfinite(ubf))
        self.lo, self.hi = lo, hi
        n = free.size
        I = sp.identity(n, format="csr")
        self.E = Aeq_f[self.eq_rows]
        self.e = e0[self.eq_rows]
        self.nin = self.in_rows.size
        self.G = sp.vstack([Ain_f[self.in_rows], -I[lo], I[hi]], format="csr")
        self.h = np.concatenate([h0[self.in_rows], -lbf[lo], ubf[hi]])
        P = sp.csc_matrix(inst.P)
        self.P = sp.csc_matrix(P[free][:, free])
        self.q = inst.q[free] + (P[free][:, fx] @ xf if fx.size else 0.0)
        self.n = n
        self._scale(ruiz_iters)

    def full(self, xr):
        x = np.empty(self.n_full)
        x[self.free] = xr
        x[self.fx] = self.xfix
        return x

    def _scale(self, iters):
        n = self.n
        Pc = sp.coo_matrix(self.P)
        Ac = sp.coo_matrix(sp.vstack([self.E, self.G], format="csr"))
        m = Ac.shape[0]
        pr, pc, pd = Pc.row, Pc.col, np.abs(Pc.data)
        ar, ac, ad = Ac.row, Ac.col, np.abs(Ac.data)
        D, Ed = np.ones(n), np.ones(m)
        for _ in range(iters):
            pv = pd * D[pr] * D[pc]
            av = ad * Ed[ar] * D[ac]
            cn = np.zeros(n)
            np.maximum.at(cn, pc, pv)
            np.maximum.at(cn, ac, av)
            rn = np.zeros(m)
            np.maximum.at(rn, ar, av)
            cn = np.where(cn > 0, cn, 1.0)
            rn = np.where(rn > 0, rn, 1.0)
            D *= np.clip(1.0 / np.sqrt(cn), 1e-4, 1e4)
            Ed *= np.clip(1.0 / np.sqrt(rn), 1e-4, 1e4)
        P = sp.csc_matrix((Pc.data * D[pr] * D[pc], (pr, pc)), shape=(n, n))
        A = sp.csr_matrix((Ac.data * Ed[ar] * D[ac], (ar, ac)), shape=(m, n))
        qs = D * self.q
        pn = _col_inf(P)
        c = max(float(np.mean(pn)) if pn.size else 0.0, float(np.max(np.abs(qs), initial=0.0)))
        c = 1.0 / c if c > 1e-12 else 1.0
        c = float(np.clip(c, 1e-6, 1e6))
        self.D, self.Edual, self.c = D, Ed, c
        self.Ps = sp.csc_matrix(c * P)
        self.qs = c * qs
        A = A.tocsr()
        me = self.E.shape[0]
        self.Es, self.Gs = A[:me], A[me:]
        self.es, self.hs = Ed[:me] * self.e, Ed[me:] * self.h

    # residuals on the scaled problem
    def residuals(self, xs, ys, zs):
        stat = self.Ps @ xs + self.qs + self.Es.T @ ys + self.Gs.T @ zs
        pe = self.Es @ xs - self.es
        slack = self.hs - self.Gs @ xs
        return {
            "stationarity": float(np.max(np.abs(stat), initial=0.0)),
            "primal": float(max(np.max(np.abs(pe), initial=0.0), np.max(-slack, initial=0.0))),
            "dual_sign": float(np.max(-zs, initial=0.0)),
            "complementarity": float(np.max(np.minimum(np.maximum(zs, 0.0), np.maximum(slack, 0.0)), initial=0.0)),
        }

    def unscale(self, xs, ys, zs):
        x = self.D * xs
        me = self.E.shape[0]
        y = self.Edual[:me] * ys / self.c
        z = self.Edual[me:] * zs / self.c
        return x, y, z

    def scale_primal(self, x):
        return x[self.free] / self.D


def _col_inf(M):
    M = sp.csc_matrix(M)
    out = np.zeros(M.shape[1])
    if M.nnz:
        absd = np.abs(M.data)
        nz = np.diff(M.indptr) > 0
        out[nz] = np.maximum.reduceat(absd, M.indptr[:-1][nz])
    return out


def _row_inf(M):
    return _col_inf(sp.csr_matrix(M).T.tocsc())


def _unscaled_residuals(st: _Standard, x, y, z):
    stat = st.P @ x + st.q + st.E.T @ y + st.G.T @ z
    pe = st.E @ x - st.e
    slack = st.h - st.G @ x
    return {
        "stationarity": float(np.max(np.abs(stat), initial=0.0)),
        "primal": float(max(np.max(np.abs(pe), initial=0.0), np.max(-slack, initial=0.0))),
        "dual_sign": float(np.max(-z, initial=0.0)),
        "complementarity": float(np.max(np.minimum(np.maximum(z, 0.0), np.maximum(slack, 0.0)), initial=0.0)),
    }


def _kkt_ok(res: dict, tol: float) -> bool:
    return max(res.values()) <= tol


# ---------------------------------------------------------------------------
def _active_set_kkt(st: _Standard, W: np.ndarray, start=None, refine: int = 30):
    """Solve the equality-constrained QP with rows G[W] held active (scaled data).

    The regularized factorization is used as a proximal iteration started at
    ``start`` = (xs, ys, zs), so directions the active rows and P leave free
    keep their starting values instead of drifting. A small regularization
    converges fastest; a larger one is the fallback when the first
    factorization is unusable.
    """
    n = st.n
    me = st.Es.shape[0]
    Gw = st.Gs[W]
    A = sp.vstack([st.Es, Gw], format="csc")
    m = A.shape[0]
    K0 = sp.bmat([[st.Ps, A.T], [A, None]], format="csc")
    rhs = np.concatenate([-st.qs, st.es, st.hs[W]])
    tiny = 1e-15 * (1.0 + np.max(np.abs(rhs)))
    best = None
    for reg in (1e-10, 1e-8):
        Kr = K0 + sp.diags(np.concatenate([np.full(n, reg), np.full(m, -reg)]), format="csc")
        try:
            lu = spla.splu(Kr, permc_spec="COLAMD")
        except RuntimeError:
            continue
        if start is None:
            sol = lu.solve(rhs)
        else:
            xs0, ys0, zs0 = start
            sol = np.concatenate([xs0, ys0, zs0[W]])
        rn = np.inf
        for _ in range(refine):
            r = rhs - K0 @ sol
            rn_new = np.max(np.abs(r))
            if not np.isfinite(rn_new) or rn_new <= tiny or rn_new > 0.999 * rn:
                rn = min(rn, rn_new) if np.isfinite(rn_new) else rn_new
                break
            rn = rn_new
            sol = sol + lu.solve(r)
        if np.all(np.isfinite(sol)) and (best is None or rn < best[0]):
            best = (rn, sol)
        if best is not None and best[0] <= 1e-11:
            break
    if best is None:
        return None
    sol = best[1]
    xs = sol[:n]
    ys = sol[n:n + me]
    zs = np.zeros(st.Gs.shape[0])
    zs[W] = sol[n + me:]
    return xs, ys, zs


def _pdas(st: _Standard, W: np.ndarray, tol: float, max_iter: int, start=None):
    """Primal-dual active-set iterations from an initial guess ``W``."""
    seen = set()
    for it in range(1, max_iter + 1):
        key = W.tobytes()
        if key in seen:
            return None, it
        seen.add(key)
        out = _active_set_kkt(st, W, start)
        if out is None:
            return None, it
        xs, ys, zs = out
        res = st.residuals(xs, ys, zs)
        if _kkt_ok(res, tol):
            return (xs, ys, zs, res), it
        start = out
        slack = st.hs - st.Gs @ xs
        W = (zs - slack) > 0
    return None, max_iter


def _clarabel(st: _Standard, tol: float, max_iter: int, inner: float = 1e-12):
    A = sp.vstack([st.Es, st.Gs], format="csc")
    b = np.concatenate([st.es, st.hs])
    cones = []
    if st.Es.shape[0]:
        cones.append(clarabel.ZeroConeT(st.Es.shape[0]))
    if st.Gs.shape[0]:
        cones.append(clarabel.NonnegativeConeT(st.Gs.shape[0]))
    s = clarabel.DefaultSettings()
    s.verbose = False
    s.max_iter = max_iter
    # much tighter than the certification tolerance so the active set is unambiguous
    s.tol_gap_abs = s.tol_gap_rel = min(inner, tol)
    s.tol_feas = min(inner, tol)
    s.tol_ktratio = 1e-10
    s.presolve_enable = False
    solver = clarabel.DefaultSolver(sp.triu(st.Ps, format="csc"), st.qs, A, b, cones, s)
    return solver.solve()


def _expand_duals(inst, st, y, z):
    """Reduced multipliers -> (y_eq, y_in, y_lb, y_ub) on the original rows and bounds."""
    n = inst.n
    y_eq = np.zeros(inst.A_eq.shape[0])
    y_eq[st.eq_rows] = y
    y_in = np.zeros(inst.A_in.shape[0])
    y_in[st.in_rows] = z[:st.nin]
    y_lb = np.zeros(n)
    y_ub = np.zeros(n)
    y_lb[st.free[st.lo]] = z[st.nin:st.nin + st.lo.size]
    y_ub[st.free[st.hi]] = z[st.nin + st.lo.size:]
    return y_eq, y_in, y_lb, y_ub


def _fixed_split(r):
    # a fixed variable's reduced cost is split by sign into its two bounds
    return np.maximum(r, 0.0), np.maximum(-r, 0.0)


def _package(inst, st, status, xs, ys, zs, iterations, method, t0, cert=None):
    xr, y, z = st.unscale(xs, ys, zs)
    x = st.full(xr)
    scaled = st.residuals(xs, ys, zs)
    res = _unscaled_residuals(st, xr, y, z)
    y_eq, y_in, y_lb, y_ub = _expand_duals(inst, st, y, z)
    if st.fx.size:
        r = (inst.P @ x + inst.q + inst.A_eq.T @ y_eq + inst.A_in.T @ y_in)[st.fx]
        y_lb[st.fx], y_ub[st.fx] = _fixed_split(r)
    slack_s = st.hs - st.Gs @ xs
    act = (zs > slack_s) if status == OPTIMAL else np.zeros_like(zs, dtype=bool)
    act_in = np.zeros(inst.A_in.shape[0], dtype=bool)
    act_in[st.in_rows] = act[:st.nin]
    act_lb = np.zeros(inst.n, dtype=bool)
    act_ub = np.zeros(inst.n, dtype=bool)
    act_lb[st.free[st.lo]] = act[st.nin:st.nin + st.lo.size]
    act_ub[st.free[st.hi]] = act[st.nin + st.lo.size:]
    obj = inst.objective(x) if status != INFEASIBLE else float("inf")
    dual = float(obj + y @ (st.E @ xr - st.e) + z @ (st.G @ xr - st.h)) if status == OPTIMAL else float("nan")
    return QpResult(
        status=status, x=x, objective=obj, y_eq=y_eq, y_in=y_in, y_lb=y_lb, y_ub=y_ub,
        kkt=res, scaled_kkt=scaled, iterations=iterations, method=method, dual_objective=dual,
        active_in=act_in, active_lb=act_lb, active_ub=act_ub, certificate=cert,
        solve_time=time.perf_counter() - t0,
    )


def _full_certificate(inst, st, y_eq, z_in, z_lb, z_ub):
    """Farkas certificate on the original rows: A'y + G'z = 0 with b'y + h'z < 0."""
    if st.fx.size:
        r = (inst.A_eq.T @ y_eq + inst.A_in.T @ z_in)[st.fx]
        z_lb[st.fx], z_ub[st.fx] = _fixed_split(r)
    scale = max(np.max(np.abs(y_eq), initial=0.0), np.max(np.abs(z_in), initial=0.0),
                np.max(z_lb, initial=0.0), np.max(z_ub, initial=0.0), 1e-300)
    y_eq, z_in, z_lb, z_ub = y_eq / scale, z_in / scale, z_lb / scale, z_ub / scale
    lbv = np.where(z_lb > 0, inst.lb, 0.0)
    ubv = np.where(z_ub > 0, inst.ub, 0.0)
    comb = inst.A_eq.T @ y_eq + inst.A_in.T @ z_in - z_lb + z_ub
    return {
        "y_eq": y_eq, "z_in": z_in, "z_lb": z_lb, "z_ub": z_ub,
        "violation": float(-(inst.b_eq @ y_eq + inst.b_in @ z_in - lbv @ z_lb + ubv @ z_ub)),
        "residual": float(np.max(np.abs(comb), initial=0.0)),
    }


def _certificate(inst, st, zs_ray):
    me = st.Es.shape[0]
    y = st.Edual[:me] * zs_ray[:me]
    z = np.maximum(st.Edual[me:] * zs_ray[me:], 0.0)
    return _full_certificate(inst, st, *_expand_duals(inst, st, y, z))


def _empty_row_certificate(inst, st):
    kind, row, gap = st.empty_row
    y_eq = np.zeros(inst.A_eq.shape[0])
    z_in = np.zeros(inst.A_in.shape[0])
    if kind == "eq":
        y_eq[row] = -np.sign(gap)
    else:
        z_in[row] = 1.0
    return _full_certificate(inst, st, y_eq, z_in, np.zeros(inst.n), np.zeros(inst.n))


def _bound_certificate(inst, j):
    return {"variable": j, "lb": float(inst.lb[j]), "ub": float(inst.ub[j]),
            "violation": float(inst.lb[j] - inst.ub[j]), "residual": 0.0}


def _infeasible_result(inst, t0, cert, iterations=0):
    n = inst.n
    nan = np.full(n, np.nan)
    return QpResult(
        status=INFEASIBLE, x=nan, objective=float("inf"),
        y_eq=np.zeros(inst.A_eq.shape[0]), y_in=np.zeros(inst.A_in.shape[0]),
        y_lb=np.zeros(n), y_ub=np.zeros(n), kkt={}, scaled_kkt={}, iterations=iterations,
        method="ipm", certificate=cert, solve_time=time.perf_counter() - t0,
    )


def _presolved(inst, st, t0):
    """Result decided without an iterative solve, else None."""
    if st.trivially_infeasible is not None:
        return _infeasible_result(inst, t0, _bound_certificate(inst, st.trivially_infeasible))
    if st.empty_row is not None:
        return _infeasible_result(inst, t0, _empty_row_certificate(inst, st))
    if st.n == 0:
        # every variable fixed and every row satisfied
        return _package(inst, st, OPTIMAL, np.zeros(0), np.zeros(st.Es.shape[0]),
                        np.zeros(st.Gs.shape[0]), 0, "presolve", t0)
    return None


def solve_qp(inst: QpInstance, tolerance: float = 1e-8, max_iters: int = 200, validate: bool = False) -> QpResult:
    """Cold solve. ``optimal`` is only reported when every scaled KKT
    residual is at most ``tolerance``."""
    t0 = time.perf_counter()
    if validate:
        inst.validate()
    st = _Standard(inst)
    early = _presolved(inst, st, t0)
    if early is not None:
        return early
    its = 0
    # tight passes give a clean active set; looser ones recover when the
    # interior-point method stalls short of the tight targets
    for inner in (1e-12, 1e-14, 1e-10, tolerance):
        sol = _clarabel(st, tolerance, max_iters, inner)
        status = str(sol.status)
        its += int(sol.iterations)
        if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            cert = _certificate(inst, st, np.asarray(sol.z))
            if cert["violation"] >= 1e-9:
                return _infeasible_result(inst, t0, cert, its)
            ys, zs = _split(st, np.asarray(sol.z))
            return _package(inst, st, ITER_LIMIT, np.asarray(sol.x), ys, np.maximum(zs, 0.0), its, "ipm", t0)
        if status in ("DualInfeasible", "AlmostDualInfeasible"):
            raise QpError("QP is unbounded below")
        xs = np.asarray(sol.x)
        ys, zs = _split(st, np.asarray(sol.z))
        zs = np.maximum(zs, 0.0)
        res_ipm = st.residuals(xs, ys, zs)
        best = (xs, ys, zs, res_ipm)
        method = "ipm"
        # polish: exact KKT solve on the interior-point active set
        slack = st.hs - st.Gs @ xs
        out, pits = _pdas(st, zs > slack, tolerance, 10, (xs, ys, zs))
        its += pits
        if out is not None and max(out[3].values()) <= max(res_ipm.values()):
            best, method = out, "ipm+polish"
        xs, ys, zs, res = best
        if _kkt_ok(res, tolerance):
            return _package(inst, st, OPTIMAL, xs, ys, zs, its, method, t0)
    return _package(inst, st, ITER_LIMIT, xs, ys, zs, its, method, t0)


def _split(st, z):
    me = st.Es.shape[0]
    return z[:me], z[me:]


def warm_solve(inst: QpInstance, parent: QpResult | None, tolerance: float = 1e-8,
               max_iters: int = 200, pdas_iters: int = 6, active=None) -> QpResult:
    """Solve reusing ``parent``'s active set; same contract as :func:`solve_qp`.

    Constraint rows present in both problems must share positions (rows may
    be appended). ``active`` = (in_mask, lb_mask, ub_mask) overrides the
    parent's masks when rows were reordered. Falls back to a cold solve
    whenever the active-set path does not certify optimality.
    """
    if parent is None or parent.status != OPTIMAL or parent.active_in is None:
        return solve_qp(inst, tolerance, max_iters)
    t0 = time.perf_counter()
    st = _Standard(inst)
    early = _presolved(inst, st, t0)
    if early is not None:
        return early
    a_in, a_lb, a_ub = active if active is not None else (parent.active_in, parent.active_lb, parent.active_ub)
    W_full = np.zeros(inst.A_in.shape[0], dtype=bool)
    k = min(W_full.size, a_in.size)
    W_full[:k] = a_in[:k]
    W = np.concatenate([W_full[st.in_rows], a_lb[st.free[st.lo]], a_ub[st.free[st.hi]]])
    start = None
    if parent.x is not None and parent.x.size == inst.n and np.all(np.isfinite(parent.x)):
        start = (st.scale_primal(parent.x), np.zeros(st.Es.shape[0]), np.zeros(st.Gs.shape[0]))
    out, its = _pdas(st, W, tolerance, pdas_iters, start)
    if out is not None:
        xs, ys, zs, _ = out
        return _package(inst, st, OPTIMAL, xs, ys, zs, its, "active-set", t0)
    res = solve_qp(inst, tolerance, max_iters)
    res.iterations += its
    res.solve_time = time.perf_counter() - t0
    return res
