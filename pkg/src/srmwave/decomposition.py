"""Angle-wise Lagrangian bound.

Only the voltage rows (and the average-torque row) link grid angles;
everything else (magnetic circuit, region encoding, torque, limits) lives at
a single angle. Pricing the linking rows with multipliers ``mu`` splits the
problem into one small mixed-integer QP per angle, solved by enumerating its
region assignments:

    L(mu) = const - mu'b_link + sum_t min_a V_t(a; mu)  <=  optimum.

With the regions of an angle fixed, every variable of that angle is an affine
function of the element MMFs and of the variables that appear in no local
equality (the voltages). When the local inequalities reduce to bounds on
those parameters the subproblem is a box QP in a handful of MMFs, solved
exactly by enumerating its active patterns; otherwise each assignment is
handed to the general QP solver. The multipliers can be improved with a
proximal bundle method on L.
"""
from __future__ import annotations

import itertools
import logging
import time

import numpy as np
import scipy.sparse as sp

from .qp import INFEASIBLE, OPTIMAL, QpInstance, solve_qp
from .transcription import TranscribedProblem

log = logging.getLogger("srmwave.decomposition")


class _Unstructured(Exception):
    pass


class _AngleBlock:
    """Parametrization x = X[a] p + x0[a] of one angle for every assignment a."""

    def __init__(self, t, cols, Ae, be, Ai, bi, Pt, lb, ub, F_loc, z_loc, s_loc, assign, max_curved=4):
        B = cols.size
        self.t, self.cols, self.Pt = t, cols, Pt
        used = np.flatnonzero(np.any(Ae != 0, axis=0))
        sel = set(s_loc.ravel().tolist()) | set(z_loc.ravel().tolist())
        extra = np.array([c for c in range(B) if c not in used and c not in sel], dtype=int)
        par = np.concatenate([F_loc, extra]).astype(int)
        npar, A = par.size, len(assign)
        m, N = s_loc.shape
        X = np.zeros((A, B, npar))
        x0 = np.zeros((A, B))
        lo = np.full((A, npar), -np.inf)
        hi = np.full((A, npar), np.inf)
        ok = np.ones(A, dtype=bool)
        G = np.vstack([Ai, np.eye(B), -np.eye(B)])
        h = np.concatenate([bi, ub, -lb])
        fin = np.isfinite(h)
        G, h = G[fin], h[fin]
        for ia, a in enumerate(assign):
            on = np.zeros((m, N), dtype=bool)
            on[np.arange(m), a] = True
            fx = np.concatenate([s_loc.ravel(), z_loc[~on]])
            fv = np.concatenate([on.ravel().astype(float), np.zeros(int((~on).sum()))])
            dep = np.setdiff1d(np.arange(B), np.concatenate([fx, par]))
            Ad = Ae[:, dep]
            if np.linalg.matrix_rank(Ad) < dep.size:
                raise _Unstructured("local equalities do not determine the angle's variables")
            pinv = np.linalg.pinv(Ad)
            rhs = np.column_stack([-Ae[:, par], be - Ae[:, fx] @ fv])
            sol = pinv @ rhs
            scale = 1.0 + np.max(np.abs(rhs))
            if np.max(np.abs(Ad @ sol - rhs), initial=0.0) > 1e-9 * scale:
                # redundant rows that the parameters could violate
                raise _Unstructured("local equalities constrain the parameters")
            Xa = np.zeros((B, npar))
            xa = np.zeros(B)
            Xa[par, np.arange(npar)] = 1.0
            Xa[dep] = sol[:, :-1]
            xa[dep] = sol[:, -1]
            xa[fx] = fv
            GX = G @ Xa
            hh = h - G @ xa
            nz = np.abs(GX) > 1e-13 * (1.0 + np.max(np.abs(GX), axis=1, keepdims=True))
            cnt = nz.sum(axis=1)
            if np.any(cnt > 1):
                raise _Unstructured("a local inequality couples several parameters")
            const = cnt == 0
            if np.any(hh[const] < -1e-9 * (1.0 + np.abs(h[const]))):
                ok[ia] = False
            for r in np.flatnonzero(cnt == 1):
                j = int(np.flatnonzero(nz[r])[0])
                c = GX[r, j]
                if c > 0:
                    hi[ia, j] = min(hi[ia, j], hh[r] / c)
                else:
                    lo[ia, j] = max(lo[ia, j], hh[r] / c)
            X[ia], x0[ia] = Xa, xa
        ok &= np.all(lo <= hi + 1e-12 * (1.0 + np.abs(hi)), axis=1)
        hi = np.maximum(hi, lo)
        H = np.einsum("abi,bc,acj->aij", X, Pt, X)
        curved = np.flatnonzero(np.any(np.abs(H) > 0, axis=(0, 2)))
        linear = np.setdiff1d(np.arange(npar), curved)
        if curved.size > max_curved:
            raise _Unstructured("too many curved parameters for pattern enumeration")
        if curved.size:
            Hc = H[:, curved][:, :, curved]
            if np.any(np.linalg.eigvalsh(Hc)[:, 0] <= 1e-12 * np.max(np.abs(Hc))):
                raise _Unstructured("reduced Hessian is singular")
        self.X, self.x0, self.lo, self.hi, self.ok, self.H = X, x0, lo, hi, ok, H
        self.curved, self.linear = curved, linear
        self.patterns = np.array(list(itertools.product(range(3), repeat=curved.size)), dtype=int)
        self.c0P = x0 @ Pt  # (A, B)

    def solve(self, q_t):
        """Minimum value and minimizer of every assignment for the linear term q_t."""
        X, x0, H = self.X, self.x0, self.H
        g = np.einsum("abi,ab->ai", X, self.c0P + q_t)
        c0 = 0.5 * np.einsum("ab,ab->a", self.c0P, x0) + x0 @ q_t
        A = x0.shape[0]
        p = np.zeros((A, X.shape[2]))
        val = c0.copy()
        li, ci = self.linear, self.curved
        if li.size:
            gl, lo, hi = g[:, li], self.lo[:, li], self.hi[:, li]
            pl = np.where(gl > 0, lo, np.where(gl < 0, hi, np.clip(0.0, lo, hi)))
            with np.errstate(invalid="ignore"):
                term = np.where(gl == 0, 0.0, gl * pl)
            val = val + term.sum(axis=1)
            p[:, li] = np.where(np.isfinite(pl), pl, 0.0)
        if ci.size:
            Hc = H[:, ci][:, :, ci]
            gc, lo, hi = g[:, ci], self.lo[:, ci], self.hi[:, ci]
            best = np.full(A, np.inf)
            bestp = np.zeros((A, ci.size))
            tol_lo = 1e-9 * (1.0 + np.abs(lo))
            tol_hi = 1e-9 * (1.0 + np.abs(hi))
            for pat in self.patterns:
                fr = pat == 0
                fx = ~fr
                pc = np.where(pat == 1, lo, np.where(pat == 2, hi, 0.0))
                if np.any(~np.isfinite(pc[:, fx])):
                    continue
                if fr.any():
                    Hff = Hc[:, fr][:, :, fr]
                    rhs = -(gc[:, fr] + np.einsum("aij,aj->ai", Hc[:, fr][:, :, fx], pc[:, fx]))
                    pc[:, fr] = np.linalg.solve(Hff, rhs[..., None])[..., 0]
                feas = np.all((pc >= lo - tol_lo) & (pc <= hi + tol_hi), axis=1)
                pc = np.clip(pc, lo, hi)
                obj = 0.5 * np.einsum("ai,aij,aj->a", pc, Hc, pc) + np.sum(gc * pc, axis=1)
                obj = np.where(feas, obj, np.inf)
                better = obj < best
                best = np.where(better, obj, best)
                bestp[better] = pc[better]
            val = val + best
            p[:, ci] = bestp
        val = np.where(self.ok, val, np.inf)
        x = np.einsum("abi,ai->ab", X, p) + x0
        return val, x


class AngleDecomposition:
    def __init__(self, problem: TranscribedProblem, mu_eq=None, mu_in=None,
                 max_assignments: int = 4096, tolerance: float = 1e-8, structured: bool = True):
        L = problem.layout
        self.problem = problem
        self.T, self.m, self.N = L.T, L.m, L.N
        self.block = L.block
        self.tolerance = tolerance
        if self.N ** self.m > max_assignments:
            raise ValueError(f"{self.N ** self.m} assignments per angle exceed the budget {max_assignments}")
        t0 = time.perf_counter()
        eq_lo, eq_hi = _row_blocks(problem.A_eq, L.block)
        in_lo, in_hi = _row_blocks(problem.A_in, L.block)
        self.link_eq = eq_lo != eq_hi
        self.link_in = in_lo != in_hi
        self._eq_lo, self._in_lo = eq_lo, in_lo
        self.assign = np.array(list(itertools.product(range(self.N), repeat=self.m)), dtype=int)
        self.solves = 0
        self.blocks = None
        if structured:
            try:
                self.blocks = self._build_blocks()
            except _Unstructured as exc:
                log.info("event=decomposition-fallback reason=%r", str(exc))
        self.structured = self.blocks is not None
        self.price(mu_eq, mu_in)
        self.build_time = time.perf_counter() - t0

    # -- construction --------------------------------------------------
    def _local(self, t):
        p, L = self.problem, self.problem.layout
        cols = np.arange(t * L.block, (t + 1) * L.block)
        re = np.flatnonzero(~self.link_eq & (self._eq_lo == t))
        ri = np.flatnonzero(~self.link_in & (self._in_lo == t))
        P = sp.csr_matrix(p.P)
        Pt = P[cols][:, cols]
        if P[cols].nnz != Pt.nnz:
            raise ValueError("objective couples grid angles")
        return cols, re, ri, Pt

    def _build_blocks(self):
        p, L = self.problem, self.problem.layout
        Aeq, Ain = sp.csr_matrix(p.A_eq), sp.csr_matrix(p.A_in)
        blocks = []
        for t in range(self.T):
            cols, re, ri, Pt = self._local(t)
            off = t * L.block
            blocks.append(_AngleBlock(
                t, cols, Aeq[re][:, cols].toarray(), p.b_eq[re], Ain[ri][:, cols].toarray(), p.b_in[ri],
                Pt.toarray(), p.lb[cols], p.ub[cols], L.F[t] - off, L.z[t] - off, L.s[t] - off, self.assign,
            ))
        return blocks

    def _priced(self, mu_eq, mu_in):
        p = self.problem
        mu_eq = np.zeros(p.A_eq.shape[0]) if mu_eq is None else np.asarray(mu_eq, dtype=float)
        mu_in = np.zeros(p.A_in.shape[0]) if mu_in is None else np.maximum(np.asarray(mu_in, dtype=float), 0.0)
        mu_eq = np.where(self.link_eq, mu_eq, 0.0)
        mu_in = np.where(self.link_in, mu_in, 0.0)
        q = p.q + p.A_eq.T @ mu_eq + p.A_in.T @ mu_in
        const = float(p.const - mu_eq @ p.b_eq - mu_in @ p.b_in)
        return mu_eq, mu_in, q, const

    def _tables(self, q):
        shape = (self.N,) * self.m
        tables = np.full((self.T,) + shape, np.inf)
        sols = np.zeros((self.T,) + shape + (self.block,))
        if self.structured:
            for b in self.blocks:
                val, x = b.solve(q[b.cols])
                tables[b.t] = val.reshape(shape)
                sols[b.t] = x.reshape(shape + (self.block,))
            return tables, sols
        return self._qp_tables(q, tables, sols)

    def _qp_tables(self, q, tables, sols):
        p, L = self.problem, self.problem.layout
        Aeq, Ain = sp.csr_matrix(p.A_eq), sp.csr_matrix(p.A_in)
        bp = np.asarray(p.pwa.breakpoints, dtype=float)
        for t in range(self.T):
            cols, re, ri, Pt = self._local(t)
            base = dict(P=Pt, q=q[cols], A_eq=Aeq[re][:, cols], b_eq=p.b_eq[re],
                        A_in=Ain[ri][:, cols], b_in=p.b_in[ri])
            lb0, ub0 = p.lb[cols], p.ub[cols]
            off = t * L.block
            s_loc, z_loc, F_loc = L.s[t] - off, L.z[t] - off, L.F[t] - off
            for a in self.assign:
                lb, ub = lb0.copy(), ub0.copy()
                out = np.ones((self.m, self.N), dtype=bool)
                out[np.arange(self.m), a] = False
                ub[s_loc[out]] = 0.0
                lb[s_loc[~out]] = 1.0
                lb[z_loc[out]] = 0.0
                ub[z_loc[out]] = 0.0
                lb[F_loc] = np.maximum(lb[F_loc], bp[a])
                ub[F_loc] = np.minimum(ub[F_loc], bp[a + 1])
                res = solve_qp(QpInstance(lb=lb, ub=ub, **base), self.tolerance)
                self.solves += 1
                key = (t,) + tuple(a)
                if res.status == OPTIMAL:
                    # the dual value is the certified side of the bound
                    v = res.objective
                    if np.isfinite(res.dual_objective):
                        v = min(v, res.dual_objective)
                    tables[key] = v
                    sols[key] = res.x
                elif res.status != INFEASIBLE:
                    # unresolved subproblem: keep the bound valid by ignoring this angle's table
                    tables[key] = -np.inf
        return tables, sols

    def price(self, mu_eq=None, mu_in=None):
        """Rebuild the tables for new multipliers."""
        self.mu_eq, self.mu_in, q, self.constant = self._priced(mu_eq, mu_in)
        self.tables, self.solutions = self._tables(q)

    # -- evaluation ----------------------------------------------------
    def _box(self, t, lo, hi, tables=None):
        m = self.m
        sl = tuple(slice(int(lo[t * m + k]), int(hi[t * m + k]) + 1) for k in range(m))
        return (self.tables if tables is None else tables)[(t,) + sl]

    def bound(self, lo, hi) -> float:
        """Lower bound on the optimum over the box; lo/hi are per-group region limits."""
        total = self.constant
        for t in range(self.T):
            v = np.min(self._box(t, lo, hi))
            if v == np.inf:
                return np.inf
            total += v
        return float(total)

    def best_assignment(self, lo, hi, tables=None) -> np.ndarray:
        """Per-group regions minimizing each angle's table inside the box."""
        out = np.empty(self.T * self.m, dtype=int)
        for t in range(self.T):
            box = self._box(t, lo, hi, tables)
            idx = np.unravel_index(int(np.argmin(box)), box.shape)
            for k in range(self.m):
                out[t * self.m + k] = int(lo[t * self.m + k]) + int(idx[k])
        return out

    def argmin_point(self, lo, hi, solutions=None, tables=None) -> np.ndarray:
        """Concatenated per-angle minimizers inside the box (a Lagrangian minimizer)."""
        sols = self.solutions if solutions is None else solutions
        a = self.best_assignment(lo, hi, tables).reshape(self.T, self.m)
        return np.concatenate([sols[(t,) + tuple(a[t])] for t in range(self.T)])

    def subgradient(self, lo, hi):
        """(eq, in) row residuals at the Lagrangian minimizer; zero on local rows."""
        x = self.argmin_point(lo, hi)
        p = self.problem
        ge = np.where(self.link_eq, p.A_eq @ x - p.b_eq, 0.0)
        gi = np.where(self.link_in, p.A_in @ x - p.b_in, 0.0)
        return ge, gi

    def lagrangian(self, mu_eq, lo=None, hi=None):
        """(L(mu), supergradient on the linking equality rows) over a box, tables untouched."""
        G = self.T * self.m
        lo = np.zeros(G, dtype=int) if lo is None else lo
        hi = np.full(G, self.N - 1, dtype=int) if hi is None else hi
        full = np.zeros(self.problem.A_eq.shape[0])
        full[self.link_eq] = mu_eq
        _, _, q, const = self._priced(full, self.mu_in)
        tables, sols = self._tables(q)
        val = const
        for t in range(self.T):
            v = np.min(self._box(t, lo, hi, tables))
            if v == np.inf:
                return np.inf, np.zeros_like(mu_eq)
            val += v
        x = self.argmin_point(lo, hi, sols, tables)
        p = self.problem
        g = (p.A_eq @ x - p.b_eq)[self.link_eq]
        return float(val), g

    def ascend(self, iterations: int = 60, time_limit: float | None = None, lo=None, hi=None) -> float:
        """Improve the linking-row multipliers with a proximal bundle method,
        then reprice the tables. Returns the new full-box bound."""
        if not self.structured:
            return self.bound(np.zeros(self.T * self.m, dtype=int), np.full(self.T * self.m, self.N - 1))
        A = sp.csr_matrix(self.problem.A_eq)[self.link_eq]
        norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
        S = 1.0 / np.where(norms > 0, norms, 1.0)

        def f(u):
            v, g = self.lagrangian(S * u, lo, hi)
            return v, S * g

        u0 = self.mu_eq[self.link_eq] / S
        u, val = maximize_concave(f, u0, iterations, time_limit)
        full = np.zeros(self.problem.A_eq.shape[0])
        full[self.link_eq] = S * u
        self.price(full, self.mu_in)
        return val


def maximize_concave(f, x0, iterations: int = 60, time_limit: float | None = None, t: float = 1e-3,
                     kappa: float = 0.1, max_bundle: int = 200):
    """Proximal bundle ascent for a concave, possibly nonsmooth f.

    ``f(x)`` returns (value, supergradient). Each step maximizes the cutting
    plane model minus (1/2t)||x - center||^2 through its dual, a small QP over
    the simplex.
    """
    t_end = None if time_limit is None else time.perf_counter() + time_limit
    c = np.asarray(x0, dtype=float).copy()
    fc, gc = f(c)
    if not np.isfinite(fc):
        return c, fc
    cuts = [(fc, gc, c.copy())]
    for _ in range(iterations):
        if t_end is not None and time.perf_counter() > t_end:
            break
        Gm = np.array([g for _, g, _ in cuts]).T
        e = np.array([v + g @ (c - x) for v, g, x in cuts])
        k = e.size
        inst = QpInstance(P=sp.csc_matrix(t * Gm.T @ Gm + 1e-12 * np.eye(k)), q=e,
                          A_eq=sp.csr_matrix(np.ones((1, k))), b_eq=np.ones(1), lb=np.zeros(k))
        r = solve_qp(inst, 1e-9)
        if r.status != OPTIMAL:
            log.debug("event=bundle-stop reason=subproblem status=%s", r.status)
            break
        lam = np.clip(r.x, 0.0, None)
        lam /= lam.sum()
        gbar = Gm @ lam
        cand = c + t * gbar
        pred = lam @ e + t * gbar @ gbar - fc
        if pred <= 1e-12 * max(1.0, abs(fc)):
            log.debug("event=bundle-stop reason=converged pred=%.3g t=%.3g", pred, t)
            break
        fn, gn = f(cand)
        if not np.isfinite(fn):
            t *= 0.5
            continue
        cuts.append((fn, gn, cand.copy()))
        if fn - fc >= kappa * pred:
            if fn - fc >= 0.5 * pred:
                t *= 2.0
            c, fc = cand, fn
        elif fn < fc:
            t *= 0.5
        if len(cuts) > max_bundle:
            keep = set(np.argsort(-lam)[: max_bundle // 2].tolist()) | {len(cuts) - 1}
            cuts = [cuts[i] for i in sorted(keep)]
    return c, fc


def _row_blocks(A, block):
    A = sp.csr_matrix(A)
    lo = np.full(A.shape[0], -1)
    hi = np.full(A.shape[0], -1)
    for r in range(A.shape[0]):
        c = A.indices[A.indptr[r]:A.indptr[r + 1]]
        if c.size:
            lo[r] = c.min() // block
            hi[r] = c.max() // block
    return lo, hi
