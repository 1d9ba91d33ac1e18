"""Branch and bound over the region-selector groups.

Each (angle t, element k) pair owns one group of region selectors ``s``
(exactly one equals 1). A node keeps, per group, an admissible interval
``[lo, hi]`` of region indices; branching splits one interval in two.
Node relaxations are QPs with the perspective-strengthened loss and lazily
separated tangent cuts.
"""
from __future__ import annotations

import heapq
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import perspective as persp
from .decomposition import AngleDecomposition
from .qp import OPTIMAL, INFEASIBLE, QpInstance, QpResult, solve_qp, warm_solve
from .transcription import TranscribedProblem, WaveformSolution, assemble_waveforms

log = logging.getLogger("srmwave.bnb")

INT_TOL = 1e-6


class BnbError(RuntimeError):
    pass


@dataclass
class BnbConfig:
    gap_tol: float = 1e-3
    time_limit: float | None = None
    node_limit: int | None = None
    perspective_on: bool = True
    separation_tol: float = 1e-10  # objective units per term
    max_cut_rounds: int = 25  # at the root
    node_cut_rounds: int = 3  # below the root; children inherit the parent's active cuts
    qp_tolerance: float = 1e-8
    workers: int = 1
    diagnostics: bool = False  # also solve the plain relaxation at every node
    trace_path: str | None = None
    log_every: int = 100
    heuristic_every: int = 1
    decomposition: bool = True  # angle-wise Lagrangian bound priced with the root duals
    decomposition_budget: int = 4096  # max region assignments per angle
    dual_iterations: int = 150  # bundle steps improving the decomposition multipliers
    dual_time: float = 60.0  # seconds, cap on that ascent
    local_search_time: float = 60.0  # seconds, total budget for improving incumbents by region flips


@dataclass(eq=False)
class BnbNode:
    id: int
    parent: int
    depth: int
    lo: np.ndarray  # per group, first admissible region
    hi: np.ndarray  # per group, last admissible region
    bound: float  # parent bound
    cuts: tuple = ()  # pool ids inherited from the parent
    warm: QpResult | None = None
    hint: tuple | None = None

    def fixed(self) -> np.ndarray:
        return self.lo == self.hi


@dataclass
class NodeOutcome:
    node: BnbNode
    status: str
    bound: float
    qp_objective: float
    result: QpResult | None
    cuts: list
    rounds: int
    plain_bound: float | None = None
    certificate: dict | None = None
    decomposition_bound: float = -float("inf")


@dataclass
class BnbResult:
    status: str  # optimal | limit | infeasible
    incumbent: WaveformSolution | None
    x: np.ndarray | None
    upper_bound: float
    lower_bound: float
    gap: float
    nodes: int
    wall_time: float
    root_bound: float = float("nan")
    infeasibility: str | None = None  # relaxation | integer
    message: str = ""
    incumbents: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    cuts_in_pool: int = 0
    cuts: list = field(default_factory=list)  # pool snapshot, filled with diagnostics

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def relative_gap(ub: float, lb: float) -> float:
    if not np.isfinite(ub):
        return float("inf")
    return max(ub - lb, 0.0) / max(1.0, abs(ub))


# ---------------------------------------------------------------------------
class Relaxation:
    """Assembles node QPs for one transcribed problem."""

    def __init__(self, problem: TranscribedProblem, config: BnbConfig):
        self.problem = problem
        self.config = config
        L = problem.layout
        self.T, self.m, self.N = L.T, L.m, L.N
        self.G = L.T * L.m
        self.s_idx = L.s.reshape(self.G, self.N)
        self.z_idx = L.z.reshape(self.G, self.N)
        self.F_idx = L.F.reshape(self.G)
        self.bp = np.asarray(problem.pwa.breakpoints, dtype=float)
        self.on = bool(config.perspective_on)
        self.n_in_base = problem.A_in.shape[0]
        if self.on:
            self.cfg = persp.PerspectiveConfig.for_problem(problem)
            self.ref = persp.reformulate(problem, self.cfg)
            self.on = bool(np.any(self.cfg.D > 0))
        if self.on:
            self.pool = self.cfg.pool
            self.base_cut_ids = persp.initial_cuts(problem, self.pool, self.cfg.D)
            n = self.ref.n_vars
            extra = n - problem.n_vars
            pad = lambda A: sp.hstack([A, sp.csr_matrix((A.shape[0], extra))], format="csr")
            self.A_eq = pad(problem.A_eq)
            base_cuts = persp.cut_rows([self.pool[c] for c in self.base_cut_ids], problem, self.ref)
            self.A_in = sp.vstack([pad(problem.A_in), base_cuts], format="csr")
            self.b_in = np.concatenate([problem.b_in, np.zeros(base_cuts.shape[0])])
            self.P, self.q = self.ref.P, self.ref.q
            self.lb0, self.ub0 = self.ref.lb, self.ref.ub
            self.w_idx = self.ref.w.reshape(self.G, self.N)
            self.D = self.cfg.D
            self.w_cap = self.D * float(np.max(self.bp ** 2)) * (1 + 1e-9) + 1e-9
        else:
            self.pool = persp.CutPool()
            self.base_cut_ids = []
            self.A_eq, self.A_in, self.b_in = problem.A_eq, problem.A_in, problem.b_in
            self.P, self.q = problem.P, problem.q
            self.lb0, self.ub0 = problem.lb, problem.ub
        self.n = self.q.size
        self.n_rows_fixed = self.A_in.shape[0]
        self.decomp = None
        self.deadline = None  # perf_counter() value; optional work stops there

    def time_left(self) -> float:
        return float("inf") if self.deadline is None else self.deadline - time.perf_counter()

    def build_decomposition(self, root: QpResult):
        """Price the angle-linking rows with the root duals (skipped if over budget)."""
        p = self.problem
        if self.N ** self.m > self.config.decomposition_budget:
            return None
        mu_eq = root.y_eq[: p.A_eq.shape[0]] if root is not None and root.status == OPTIMAL else None
        mu_in = root.y_in[: p.A_in.shape[0]] if root is not None and root.status == OPTIMAL else None
        self.decomp = AngleDecomposition(p, mu_eq, mu_in, self.config.decomposition_budget,
                                         self.config.qp_tolerance)
        log.info("event=decomposition structured=%s solves=%d build=%.2f bound=%.10g", self.decomp.structured,
                 self.decomp.solves, self.decomp.build_time, self.decomp.bound(*self._full_box()))
        return self.decomp

    def _full_box(self):
        return np.zeros(self.G, dtype=int), np.full(self.G, self.N - 1, dtype=int)

    def ascend_decomposition(self) -> float:
        """Improve the decomposition multipliers (bundle ascent) and reprice."""
        d = self.decomp
        if d is None or not d.structured or self.config.dual_iterations <= 0:
            return d.bound(*self._full_box()) if d is not None else -float("inf")
        budget = min(self.config.dual_time, self.time_left())
        if budget <= 0:
            return d.bound(*self._full_box())
        t0 = time.perf_counter()
        before = d.bound(*self._full_box())
        d.ascend(self.config.dual_iterations, budget)
        after = d.bound(*self._full_box())
        log.info("event=dual-ascent time=%.2f bound_before=%.10g bound=%.10g", time.perf_counter() - t0, before, after)
        return after

    # -- bounds --------------------------------------------------------
    def bounds(self, lo, hi, n=None):
        p = self.problem
        lb = (self.lb0 if n is None or n == self.n else p.lb).copy()
        ub = (self.ub0 if n is None or n == self.n else p.ub).copy()
        j = np.arange(self.N)[None, :]
        out = (j < lo[:, None]) | (j > hi[:, None])
        ub[self.s_idx[out]] = 0.0
        lb[self.z_idx[out]] = 0.0
        ub[self.z_idx[out]] = 0.0
        fixed = lo == hi
        lb[self.s_idx[fixed, lo[fixed]]] = 1.0
        lb[self.F_idx] = np.maximum(lb[self.F_idx], self.bp[lo])
        ub[self.F_idx] = np.minimum(ub[self.F_idx], self.bp[hi + 1])
        return lb, ub

    # -- node QP -------------------------------------------------------
    def instance(self, node: BnbNode, cut_ids) -> QpInstance:
        lb, ub = self.bounds(node.lo, node.hi)
        P, q = self.P, self.q
        A_in, b_in = self.A_in, self.b_in
        if self.on:
            fixed = np.flatnonzero(node.fixed())
            if fixed.size:
                q = q.copy()
                k_of = fixed % self.m
                zsel = self.z_idx[fixed, node.lo[fixed]]
                P = P + sp.csc_matrix((2.0 * self.D[k_of] / self.T, (zsel, zsel)), shape=P.shape)
                wcols = self.w_idx[fixed]
                q[wcols] = 0.0
                ub[wcols] = self.w_cap[k_of][:, None]
            if cut_ids:
                rows = persp.cut_rows([self.pool[c] for c in cut_ids], self.problem, self.ref)
                A_in = sp.vstack([A_in, rows], format="csr")
                b_in = np.concatenate([b_in, np.zeros(rows.shape[0])])
        return QpInstance(P, q, self.A_eq, self.problem.b_eq, A_in, b_in, lb, ub, self.problem.const)

    def plain_instance(self, lo, hi) -> QpInstance:
        p = self.problem
        lb, ub = self.bounds(lo, hi, n=p.n_vars)
        return QpInstance(p.P, p.q, p.A_eq, p.b_eq, p.A_in, p.b_in, lb, ub, p.const)

    def fixed_instance(self, regions) -> QpInstance:
        regions = np.asarray(regions, dtype=int)
        return self.plain_instance(regions, regions)

    # -- separation ----------------------------------------------------
    def separate(self, node: BnbNode, x, active_cuts: set) -> list:
        if not self.on:
            return []
        tol = self.config.separation_tol
        free = np.flatnonzero(~node.fixed())
        s = x[self.s_idx[free]]
        z = x[self.z_idx[free]]
        w = x[self.w_idx[free]]
        k_of = free % self.m
        d = self.D[k_of][:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            true = np.where(s > 1e-12, d * z * z / np.where(s > 1e-12, s, 1.0), 0.0)
        viol = (true - w) / self.T
        new = []
        for gi, j in zip(*np.nonzero(viol > tol)):
            g = free[gi]
            t, k = divmod(int(g), self.m)
            if d[gi, 0] <= 0 or s[gi, j] <= 1e-12:
                continue
            best, best_v = None, tol * self.T
            for cid in self.pool.for_term(k, int(j), t):
                if cid in active_cuts:
                    continue
                v = self.pool[cid].violation(z[gi, j], s[gi, j], w[gi, j], d[gi, 0])
                if v > best_v:
                    best, best_v = cid, v
            if best is None:
                best = self.pool.add(persp.perspective_cut(k, int(j), t, z[gi, j], s[gi, j]))
                if best in active_cuts:
                    continue
            new.append(best)
            active_cuts.add(best)
        return new

    # -- evaluation ----------------------------------------------------
    def evaluate(self, node: BnbNode, cutoff: float = float("inf")) -> NodeOutcome:
        cfg = self.config
        dbound = self.decomp.bound(node.lo, node.hi) if self.decomp is not None else -float("inf")
        if dbound >= cutoff:
            return NodeOutcome(node, "pruned", max(dbound, node.bound), float("nan"), None, list(node.cuts), 0,
                               decomposition_bound=dbound)
        cuts = list(node.cuts)
        active = set(cuts) | set(self.base_cut_ids)
        inst = self.instance(node, cuts)
        res = warm_solve(inst, node.warm, cfg.qp_tolerance, active=node.hint) if node.warm is not None \
            else solve_qp(inst, cfg.qp_tolerance)
        rounds = 0
        limit = cfg.max_cut_rounds if node.depth == 0 else cfg.node_cut_rounds
        while res.status == OPTIMAL and rounds < limit and self.time_left() > 0:
            new = self.separate(node, res.x, active)
            if not new:
                break
            trial = warm_solve(self.instance(node, cuts + new), res, cfg.qp_tolerance)
            if trial.status != OPTIMAL:
                # more cuts made the QP degenerate; the certified result so far is still a valid bound
                break
            rounds += 1
            cuts += new
            res = trial
        plain = None
        if cfg.diagnostics:
            pr = solve_qp(self.plain_instance(node.lo, node.hi), cfg.qp_tolerance)
            plain = pr.objective if pr.status == OPTIMAL else (float("inf") if pr.status == INFEASIBLE else None)
        if res.status == INFEASIBLE:
            return NodeOutcome(node, INFEASIBLE, float("inf"), float("inf"), res, cuts, rounds, plain,
                               res.certificate, dbound)
        if res.status == OPTIMAL:
            qp_obj = min(res.objective, res.dual_objective) if np.isfinite(res.dual_objective) else res.objective
            return NodeOutcome(node, OPTIMAL, max(qp_obj, dbound, node.bound), qp_obj, res, cuts, rounds, plain,
                               decomposition_bound=dbound)
        return NodeOutcome(node, res.status, max(dbound, node.bound), float("nan"), res, cuts, rounds, plain,
                           decomposition_bound=dbound)


# ---------------------------------------------------------------------------
def group_selectors(relax: Relaxation, x) -> np.ndarray:
    return np.asarray(x)[relax.s_idx]


def branch_rule(lo, hi, s):
    """Pick the most fractional group and split its admissible interval.

    Returns ``(group, (lo1, hi1), (lo2, hi2))``. ``s`` has shape (groups, N).
    """
    lo, hi, s = np.asarray(lo), np.asarray(hi), np.asarray(s, dtype=float)
    j = np.arange(s.shape[1])[None, :]
    adm = (j >= lo[:, None]) & (j <= hi[:, None])
    smax = np.where(adm, s, -np.inf).max(axis=1)
    cand = (hi > lo) & (smax < 1.0 - INT_TOL)
    if not np.any(cand):
        raise BnbError("branch_rule called on an integral relaxation")
    g = int(np.flatnonzero(cand)[np.argmin(smax[cand])])  # argmin keeps the lowest index on ties
    sg = np.clip(np.where(adm[g], s[g], 0.0), 0.0, None)
    tot = sg.sum()
    mean = (sg @ np.arange(s.shape[1])) / tot if tot > 0 else 0.5 * (lo[g] + hi[g])
    cut = int(np.clip(np.floor(mean), lo[g], hi[g] - 1))
    return g, (int(lo[g]), cut), (cut + 1, int(hi[g]))


def is_integral(lo, hi, s) -> bool:
    j = np.arange(s.shape[1])[None, :]
    adm = (j >= lo[:, None]) & (j <= hi[:, None])
    smax = np.where(adm, s, -np.inf).max(axis=1)
    return bool(np.all((hi == lo) | (smax >= 1.0 - INT_TOL)))


def solve_fixed(relax: Relaxation, regions, tolerance=1e-8):
    """Exact QP for a full region assignment. Returns (objective, x) or None."""
    inst = relax.fixed_instance(regions)
    res = solve_qp(inst, tolerance)
    if res.status != OPTIMAL:
        return None
    x = res.x.copy()
    fixed = inst.lb == inst.ub
    x[fixed] = inst.lb[fixed]
    return relax.problem.objective(x), x


def local_search(relax: Relaxation, regions, obj: float, x, time_limit: float, tolerance=1e-8):
    """First-improvement search over single-group region changes.

    Moves that shift an MMF sitting on a breakpoint into the adjacent region
    are tried before the rest of the neighbourhood. Returns the best
    (objective, x, regions) found within ``time_limit`` seconds.
    """
    t_end = time.perf_counter() + time_limit
    L = relax.problem.layout
    bp = np.asarray(relax.problem.pwa.breakpoints)
    N = bp.size - 1
    regions = np.asarray(regions, dtype=int).copy()
    seen = {regions.tobytes()}
    improved = True
    while improved and time.perf_counter() < t_end:
        improved = False
        F = x[L.F].ravel()
        near = lambda j: np.abs(F - bp[j]) <= 1e-6 * np.maximum(1.0, bp[j])  # noqa: E731
        moves = [(g, regions[g] - 1) for g in np.flatnonzero((regions > 0) & near(regions))]
        moves += [(g, regions[g] + 1) for g in np.flatnonzero((regions < N - 1) & near(np.minimum(regions + 1, N)))]
        moves += [(g, j) for g in range(regions.size) for j in range(N) if j != regions[g]]
        for g, j in moves:
            if time.perf_counter() >= t_end:
                break
            trial = regions.copy()
            trial[g] = j
            key = trial.tobytes()
            if key in seen:
                continue
            seen.add(key)
            out = solve_fixed(relax, trial, tolerance)
            if out is not None and out[0] < obj - 1e-9 * max(1.0, abs(obj)):
                obj, x, regions = out[0], out[1], trial
                improved = True
                break
    return obj, x, regions


def round_heuristic(node_relaxation: QpResult, problem: TranscribedProblem, relax: Relaxation | None = None):
    """Fix every group to its largest-s region and re-solve; None if infeasible."""
    if node_relaxation is None or node_relaxation.status != OPTIMAL:
        return None
    relax = relax or Relaxation(problem, BnbConfig(perspective_on=False))
    regions = np.argmax(group_selectors(relax, node_relaxation.x), axis=1)
    out = solve_fixed(relax, regions)
    if out is None:
        return None
    return assemble_waveforms(problem, out[1])


def _binding_message(problem: TranscribedProblem, cert) -> str:
    if not cert or "z_in" not in cert:
        return "relaxation infeasible"
    z = np.abs(np.asarray(cert["z_in"])[: problem.A_in.shape[0]])
    kinds = problem.in_kind
    weight = {k: float(z[kinds == k].sum()) for k in set(kinds.tolist())}
    names = {"g": "winding voltage/current limit", "e": "region bounds", "h": "torque row"}
    top = [k for k, v in sorted(weight.items(), key=lambda kv: -kv[1]) if v > 1e-9]
    if not top:
        return "relaxation infeasible (variable bounds)"
    return "relaxation infeasible; binding: " + ", ".join(names.get(k, k) for k in top[:2])


# ---------------------------------------------------------------------------
def solve(problem: TranscribedProblem, config: BnbConfig | None = None, **overrides) -> BnbResult:
    cfg = config or BnbConfig()
    for k, v in overrides.items():
        setattr(cfg, k, v)
    t0 = time.perf_counter()
    relax = Relaxation(problem, cfg)
    if cfg.time_limit is not None:
        relax.deadline = t0 + cfg.time_limit
    G, N = relax.G, relax.N
    trace_fh = open(cfg.trace_path, "w") if cfg.trace_path else None
    trace = []

    ub, x_best, incumbents = float("inf"), None, []
    next_id = 1
    root = BnbNode(0, -1, 0, np.zeros(G, dtype=int), np.full(G, N - 1, dtype=int), -float("inf"))
    heap: list = []
    dive: list = []
    plunging = True
    nodes = 0
    root_bound = float("nan")
    root_fail = None
    limit_hit = False
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    def offer(obj, x, src):
        nonlocal ub, x_best, plunging
        if obj < ub - 1e-12 * max(1.0, abs(ub if np.isfinite(ub) else obj)):
            ub, x_best = obj, x
            rec = {"objective": obj, "node": nodes, "time": time.perf_counter() - t0, "source": src}
            if cfg.diagnostics:
                rec["x"] = np.array(x, dtype=float)
            incumbents.append(rec)
            plunging = True
            log.info("event=incumbent objective=%.10g source=%s nodes=%d", obj, src, nodes)

    def lower_bound(extra=()):
        vals = [n.bound for _, _, n in heap] + [n.bound for n in dive] + list(extra)
        return min(vals) if vals else ub

    def cutoff(u):
        return u - 1e-12 * max(1.0, abs(u)) if np.isfinite(u) else u

    tried = set()
    best_regions = None
    polished = None
    ls_left = cfg.local_search_time

    def try_assignment(regions, src):
        nonlocal best_regions
        key = np.asarray(regions, dtype=np.int16).tobytes()
        if key in tried:
            return
        tried.add(key)
        sol = solve_fixed(relax, regions, cfg.qp_tolerance)
        if sol is not None:
            before = ub
            offer(sol[0], sol[1], src)
            if ub < before:
                best_regions = np.asarray(regions, dtype=int).copy()

    def improve():
        nonlocal ls_left, polished, best_regions
        budget = min(ls_left, relax.time_left())
        if best_regions is None or budget <= 0 or polished is best_regions:
            return
        if relative_gap(ub, lower_bound()) <= cfg.gap_tol:
            return
        t1 = time.perf_counter()
        obj, x, reg = local_search(relax, best_regions, ub, x_best, budget, cfg.qp_tolerance)
        ls_left -= time.perf_counter() - t1
        if obj < ub:
            offer(obj, x, "local-search")
            best_regions = reg
        polished = best_regions

    pending = [root]
    try:
        while pending or heap or dive:
            # stopping tests
            elapsed = time.perf_counter() - t0
            if (cfg.time_limit is not None and elapsed > cfg.time_limit) or \
               (cfg.node_limit is not None and nodes >= cfg.node_limit):
                limit_hit = True
                break
            if not pending:
                lb = lower_bound()
                if np.isfinite(ub) and relative_gap(ub, lb) <= cfg.gap_tol:
                    break
                batch = []
                while len(batch) < cfg.workers and (dive or heap):
                    nd = dive.pop() if dive else heapq.heappop(heap)[2]
                    if nd.bound < cutoff(ub):
                        batch.append(nd)
                if not batch:
                    continue
                pending = batch
            batch, pending = pending, []
            cut = cutoff(ub)
            outs = list(pool.map(lambda b: relax.evaluate(b, cut), batch)) if pool and len(batch) > 1 \
                else [relax.evaluate(b, cut) for b in batch]
            for out in outs:
                nodes += 1
                nd = out.node
                rec = {"node": nd.id, "decomposition_bound": out.decomposition_bound, "parent": nd.parent, "depth": nd.depth, "status": out.status,
                       "bound": out.bound, "qp_objective": out.qp_objective, "cuts": len(out.cuts),
                       "rounds": out.rounds, "plain_bound": out.plain_bound,
                       "fixed_groups": int(np.sum(nd.fixed())), "time": time.perf_counter() - t0}
                if cfg.diagnostics:
                    trace.append(rec)
                if trace_fh:
                    trace_fh.write(json.dumps(rec) + "\n")
                if nd.id == 0:
                    if out.status == INFEASIBLE:
                        root_fail = _binding_message(problem, out.certificate)
                    elif cfg.decomposition and relax.m > 0 and relax.time_left() > 0:
                        relax.build_decomposition(out.result)
                        if relax.decomp is not None:
                            out.decomposition_bound = relax.decomp.bound(nd.lo, nd.hi)
                            out.bound = max(out.bound, out.decomposition_bound)
                            if np.isfinite(out.decomposition_bound):
                                try_assignment(relax.decomp.best_assignment(nd.lo, nd.hi), "decomposition")
                            if out.status == OPTIMAL and relative_gap(ub, out.bound) > cfg.gap_tol:
                                out.decomposition_bound = relax.ascend_decomposition()
                                out.bound = max(out.bound, out.decomposition_bound)
                    root_bound = out.bound
                if relax.decomp is not None and out.status != INFEASIBLE and np.isfinite(out.decomposition_bound):
                    try_assignment(relax.decomp.best_assignment(nd.lo, nd.hi), "decomposition")
                if out.status in (INFEASIBLE, "pruned") or out.bound >= cutoff(ub):
                    continue
                res = out.result
                if out.status != OPTIMAL:
                    # no usable relaxation point: split the first open interval at its middle
                    open_g = np.flatnonzero(nd.hi > nd.lo)
                    if open_g.size == 0:
                        try_assignment(nd.lo, "leaf")
                        continue
                    g = int(open_g[0])
                    mid = (nd.lo[g] + nd.hi[g]) // 2
                    split = (g, (int(nd.lo[g]), int(mid)), (int(mid) + 1, int(nd.hi[g])))
                    warm, hint, keep = None, None, tuple(out.cuts)
                else:
                    xr = res.x
                    s = group_selectors(relax, xr[: problem.n_vars])
                    if is_integral(nd.lo, nd.hi, s):
                        regions = np.where(nd.lo == nd.hi, nd.lo, np.argmax(s, axis=1))
                        try_assignment(regions, "relaxation")
                        continue
                    if cfg.heuristic_every and (nodes % cfg.heuristic_every == 0 or nd.id == 0):
                        regions = np.where(nd.lo == nd.hi, nd.lo, np.argmax(np.where(
                            (np.arange(N)[None, :] >= nd.lo[:, None]) & (np.arange(N)[None, :] <= nd.hi[:, None]),
                            s, -1.0), axis=1))
                        try_assignment(regions, "rounding")
                        # the region each relaxed MMF falls in
                        by_f = np.searchsorted(relax.bp, xr[relax.F_idx], side="right") - 1
                        try_assignment(np.clip(by_f, nd.lo, nd.hi), "mmf-rounding")
                    if out.bound >= cutoff(ub):
                        continue
                    split = branch_rule(nd.lo, nd.hi, s)
                    # children keep only the cuts active at this node
                    nb = relax.n_rows_fixed
                    act = res.active_in
                    keep = tuple(c for c, a in zip(out.cuts, act[nb:]) if a)
                    hint = (np.concatenate([act[:nb], np.ones(len(keep), dtype=bool)]), res.active_lb, res.active_ub)
                    warm = res
                g, (l1, h1), (l2, h2) = split
                kids = []
                for lo_g, hi_g in ((l1, h1), (l2, h2)):
                    lo, hi = nd.lo.copy(), nd.hi.copy()
                    lo[g], hi[g] = lo_g, hi_g
                    kids.append(BnbNode(next_id, nd.id, nd.depth + 1, lo, hi, out.bound, keep, warm, hint))
                    next_id += 1
                if plunging and out.status == OPTIMAL:
                    # dive towards the side carrying more selector mass
                    sg = s[g]
                    low_mass = sg[l1:h1 + 1].sum()
                    high_mass = sg[l2:h2 + 1].sum()
                    first, second = (kids[0], kids[1]) if low_mass >= high_mass else (kids[1], kids[0])
                    heapq.heappush(heap, (second.bound, second.id, second))
                    dive.append(first)
                else:
                    for kd in kids:
                        heapq.heappush(heap, (kd.bound, kd.id, kd))
            improve()
            if not dive:
                plunging = plunging and not np.isfinite(ub)
            if cfg.log_every and nodes % cfg.log_every == 0:
                lb = lower_bound()
                log.info("nodes=%d open=%d lb=%.10g ub=%.10g gap=%.3g time=%.2f",
                         nodes, len(heap) + len(dive), lb, ub, relative_gap(ub, lb), time.perf_counter() - t0)
    finally:
        if pool:
            pool.shutdown()
        if trace_fh:
            trace_fh.close()

    exhausted = not (heap or dive)
    lb = ub if exhausted and not limit_hit else lower_bound()
    gap = relative_gap(ub, lb)
    elapsed = time.perf_counter() - t0
    snapshot = relax.pool.snapshot() if cfg.diagnostics and relax.pool is not None else []
    if x_best is None:
        if limit_hit:
            status, why, msg = "limit", None, "limit reached without an incumbent"
        elif root_fail is not None:
            status, why, msg = "infeasible", "relaxation", root_fail
        else:
            status, why, msg = "infeasible", "integer", "no region assignment is feasible"
        return BnbResult(status, None, None, float("inf"), lb, gap, nodes, elapsed, root_bound, why, msg,
                         incumbents, trace, len(relax.pool), snapshot)
    lb = min(lb, ub)
    status = "optimal" if gap <= cfg.gap_tol else "limit"
    sol = assemble_waveforms(problem, x_best)
    log.info("event=done status=%s nodes=%d lb=%.10g ub=%.10g gap=%.3g time=%.2f",
             status, nodes, lb, ub, gap, elapsed)
    return BnbResult(status, sol, x_best, ub, lb, gap, nodes, elapsed, root_bound, None,
                     "", incumbents, trace, len(relax.pool), snapshot)
