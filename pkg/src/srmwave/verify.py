"""Independent checks of the solver.

* :func:`enumerate_global` solves one convex QP per region assignment. The QP
  is assembled here, in physical variables only (no selector or segment
  variables), so an assembly bug in the transcription and a solver bug show
  up differently.
* :func:`evaluate_waveforms` recomputes the metrics from trajectories, with
  either the PWA fit or the sampled surfaces.
* :func:`affine_crosscheck` compares the mixed-integer path with a direct QP
  in the winding currents, built from the inductance matrix and back-emf.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator

from .motor import (MotorModel, SampledSurface, affine_parameters, affine_reduction, affine_surfaces, phase_torque,
                    toy_motor, with_derived_torque)
from .pwa import PwaCharacteristic, fit_model
from .qp import INFEASIBLE, OPTIMAL, QpInstance, solve_qp
from .transcription import Grid, TranscribedProblem, WaveformSolution, transcribe, waveform_metrics


class VerifyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# exhaustive enumeration
@dataclass
class EnumerationResult:
    status: str  # "optimal", "infeasible" or "unresolved"
    objective: float
    assignment: np.ndarray | None  # (T, m) region indices
    trajectories: dict | None
    n_assignments: int
    n_feasible: int
    n_unresolved: int


class _PhysicalAssembly:
    """Per-angle blocks [i, v, lam, F, psi, phi, tau]; region choice enters
    only through the flux and torque rows and the bounds on F."""

    def __init__(self, model: MotorModel, pwa: PwaCharacteristic, grid: Grid, omega, tau_des, alpha,
                 current_limit: bool = True):
        n, m, l = model.n_windings, model.m_elements, model.l_meshes
        T = grid.T
        self.model, self.pwa, self.T, self.n, self.m, self.l = model, pwa, T, n, m, l
        sizes = {"i": n, "v": n, "lam": n, "F": m, "psi": m, "phi": l, "tau": 1}
        off, self.idx = 0, {}
        for key, w in sizes.items():
            self.idx[key] = off + np.arange(w)
            off += w
        self.b = off
        self.nv = T * off
        R, M, C = model.resistance, model.mesh_matrix, model.geometry_matrix
        w = omega / grid.delta
        rows, rhs = [], []

        def col(key, t):
            return t * self.b + self.idx[key]

        def row(entries, value):
            r = np.zeros(self.nv)
            for c, v in entries:
                np.add.at(r, c, v)
            rows.append(r)
            rhs.append(value)

        for t in range(T):
            i, v, lam = col("i", t), col("v", t), col("lam", t)
            F, psi, phi = col("F", t), col("psi", t), col("phi", t)
            for k in range(n):
                nxt = col("lam", t + 1)[k] if t < T - 1 else col("lam", 0)[model.winding_perm[k]]
                row([(v[k], 1.0), (i, -R[k]), (lam[k], w), (nxt, -w)], 0.0)
            for k in range(m):
                row([(psi[k], 1.0), (phi, -M[:, k])], 0.0)
            for r in range(l):
                row([(F, M[r]), (i, -C[r])], 0.0)
            for k in range(n):
                row([(lam[k], 1.0), (phi, -C[:, k])], 0.0)
        row([(np.array([col("tau", t)[0] for t in range(T)]), 1.0 / T)], tau_des)
        self.A_fixed = np.array(rows)
        self.b_fixed = np.array(rhs)
        self.lb = np.full(self.nv, -np.inf)
        self.ub = np.full(self.nv, np.inf)
        for t in range(T):
            self.lb[col("v", t)] = -model.v_max
            self.ub[col("v", t)] = model.v_max
            if current_limit and model.i_max is not None:
                self.lb[col("i", t)] = -model.i_max
                self.ub[col("i", t)] = model.i_max
        self.P = sp.lil_matrix((self.nv, self.nv))
        self.q = np.zeros(self.nv)
        for t in range(T):
            i = col("i", t)
            self.P[np.ix_(i, i)] = 2.0 * R / T
            self.P[col("tau", t)[0], col("tau", t)[0]] = 2.0 * alpha / T
            self.q[col("tau", t)[0]] = -2.0 * alpha * tau_des / T
        self.P = sp.csc_matrix(self.P)
        self.const = alpha * tau_des ** 2
        self._col = col

    def instance(self, assignment) -> QpInstance:
        a = np.asarray(assignment).reshape(self.T, self.m)
        pwa, bp = self.pwa, self.pwa.breakpoints
        rows, rhs = [], []
        lb, ub = self.lb.copy(), self.ub.copy()
        for t in range(self.T):
            F, psi, tau = self._col("F", t), self._col("psi", t), self._col("tau", t)[0]
            trow = np.zeros(self.nv)
            trow[tau] = 1.0
            d = 0.0
            for k in range(self.m):
                j = a[t, k]
                r = np.zeros(self.nv)
                r[psi[k]] = 1.0
                r[F[k]] = -pwa.a[k, t, j]
                rows.append(r)
                rhs.append(pwa.b[k, t, j])
                trow[F[k]] = -pwa.c[k, t, j]
                d += pwa.d[k, t, j]
                lb[F[k]], ub[F[k]] = bp[j], bp[j + 1]
            rows.append(trow)
            rhs.append(d)
        A = np.vstack([self.A_fixed, np.array(rows)])
        b = np.concatenate([self.b_fixed, rhs])
        return QpInstance(P=self.P, q=self.q, A_eq=sp.csr_matrix(A), b_eq=b, lb=lb, ub=ub, const=self.const)

    def trajectories(self, x) -> dict:
        out = {}
        for key, cols in self.idx.items():
            arr = np.array([x[t * self.b + cols] for t in range(self.T)])
            out[key] = arr[:, 0] if key == "tau" else arr
        return out


def enumerate_global(problem: TranscribedProblem, budget: int = 2 ** 16, tolerance: float = 1e-8,
                     workers: int = 1, current_limit: bool = True) -> EnumerationResult:
    """Best objective over every region assignment, one QP each.

    Only the model, the fit, the grid and the operating point are taken from
    ``problem``; its matrices are not used.
    """
    L = problem.layout
    T, m, N = L.T, L.m, L.N
    total = N ** (T * m)
    if total > budget:
        raise VerifyError(f"{total} assignments exceed the enumeration budget {budget}")
    asm = _PhysicalAssembly(problem.model, problem.pwa, problem.grid, problem.omega, problem.tau_des,
                            problem.alpha, current_limit)

    def run(a):
        return a, solve_qp(asm.instance(a), tolerance)

    combos = (np.array(a).reshape(T, m) for a in itertools.product(range(N), repeat=T * m))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, combos))
    else:
        results = [run(a) for a in combos]
    best, best_a, best_x, feasible, unresolved = math.inf, None, None, 0, 0
    for a, res in results:
        if res.status == OPTIMAL:
            feasible += 1
            if res.objective < best:
                best, best_a, best_x = res.objective, a, res.x
        elif res.status != INFEASIBLE:
            unresolved += 1
    if unresolved:
        status = "unresolved"
    elif best_a is None:
        status = "infeasible"
    else:
        status = "optimal"
    traj = asm.trajectories(best_x) if best_x is not None else None
    return EnumerationResult(status, best, best_a, traj, total, feasible, unresolved)


# ---------------------------------------------------------------------------
# waveform re-evaluation
@dataclass
class WaveformEvaluation:
    avg_torque: float
    ripple: float
    loss: float
    objective: float
    max_abs_v: float
    tau: np.ndarray
    tau_pwa: np.ndarray | None
    tau_true: np.ndarray | None
    torque_discrepancy: float  # max |tau_true - tau_pwa|, nan unless both are available
    torque_envelope: np.ndarray | None  # per angle, sum over elements of the fit's max torque error
    flux_discrepancy: float  # max |psi - f(F)| with the characteristic used


def _surface_eval(surface: SampledSurface, F, theta):
    Fg, th = surface.mmf_grid, surface.theta_grid
    F = np.asarray(F, dtype=float)
    if np.any(F < Fg[0] - 1e-9) or np.any(F > Fg[-1] + 1e-9):
        raise VerifyError(f"MMF outside the sampled range [{Fg[0]}, {Fg[-1]}]")
    if th.size == 1:
        return np.interp(F, Fg, surface.values[:, 0])
    interp = RegularGridInterpolator((Fg, th), surface.values)
    pts = np.column_stack([np.clip(F, Fg[0], Fg[-1]), np.clip(theta, th[0], th[-1])])
    return interp(pts)


def _pwa_eval(slope, icept, bp, F):
    F = np.asarray(F, dtype=float)
    if np.any(F < bp[0] - 1e-9) or np.any(F > bp[-1] + 1e-9):
        raise VerifyError(f"MMF outside the breakpoint range [{bp[0]}, {bp[-1]}]")
    j = np.clip(np.searchsorted(bp, F, side="right") - 1, 0, bp.size - 2)
    rows = np.arange(F.size)
    return slope[rows, j] * F + icept[rows, j]


def evaluate_waveforms(model: MotorModel, solution: WaveformSolution, use_pwa: bool = True,
                       pwa: PwaCharacteristic | None = None) -> WaveformEvaluation:
    """Recompute torque, ripple, loss and max |v| from the trajectories.

    ``use_pwa`` picks the characteristic used for the reported metrics; the
    discrepancy between PWA and sampled torque is reported whenever ``pwa``
    is given.
    """
    if use_pwa and pwa is None:
        raise VerifyError("use_pwa needs the PWA characteristic")
    T, m = solution.F.shape
    theta = np.asarray(solution.theta, dtype=float)
    tau_pwa = tau_true = None
    psi_pwa = psi_true = None
    env = None
    if pwa is not None:
        if pwa.n_angles < T or np.max(np.abs(pwa.theta[:T] - theta)) > 1e-9:
            raise VerifyError("PWA characteristic does not match the solution's angles")
        bp = pwa.breakpoints
        tau_pwa = np.zeros(T)
        psi_pwa = np.zeros((T, m))
        for k in range(m):
            F = solution.F[:, k]
            tau_pwa += _pwa_eval(pwa.c[k, :T], pwa.d[k, :T], bp, F)
            psi_pwa[:, k] = _pwa_eval(pwa.a[k, :T], pwa.b[k, :T], bp, F)
        if pwa.g_max_error is not None:
            env = np.sum(pwa.g_max_error[:, :T], axis=0)
    if not use_pwa or pwa is not None:
        torque = phase_torque(model)
        tau_true = np.zeros(T)
        psi_true = np.zeros((T, m))
        for k in range(m):
            tau_true += _surface_eval(torque[k], solution.F[:, k], theta)
            psi_true[:, k] = _surface_eval(model.flux[k], solution.F[:, k], theta)
    tau = tau_pwa if use_pwa else tau_true
    psi_ref = psi_pwa if use_pwa else psi_true
    avg, ripple, loss, obj = waveform_metrics(solution.i, tau, model.resistance, solution.alpha, solution.tau_des)
    disc = float(np.max(np.abs(tau_true - tau_pwa))) if tau_pwa is not None and tau_true is not None else float("nan")
    return WaveformEvaluation(
        avg_torque=avg, ripple=ripple, loss=loss, objective=obj,
        max_abs_v=float(np.max(np.abs(solution.v), initial=0.0)),
        tau=tau, tau_pwa=tau_pwa, tau_true=tau_true, torque_discrepancy=disc, torque_envelope=env,
        flux_discrepancy=float(np.max(np.abs(solution.psi - psi_ref), initial=0.0)),
    )


# ---------------------------------------------------------------------------
# affine models and the direct-QP cross-check
def affine_motor(phases: int = 1, pole_pairs: int = 1, slope: float = 4e-6, offset: float = 2e-3,
                 swing: float = 1.5e-3, turns: float = 50.0, resistance: float = 0.5, v_max: float = 200.0,
                 mmf_max: float = 3000.0, mmf_samples: int = 31, n_theta: int = 40, phase: float = 0.4,
                 i_max: float | None = None) -> MotorModel:
    """Characteristic psi = slope * F + offset + swing * cos(Np*theta - phase) per element.

    The slope is angle independent, so the model is affine in MMF with a
    sinusoidal flux offset (a remanent term); torque is linear in MMF.
    ``phases`` is 1 (single winding) or 3 (the fully pitched mesh).
    """
    if phases == 1:
        M = np.eye(1)
    elif phases == 3:
        M = np.ones((3, 3)) - np.eye(3)
    else:
        raise VerifyError("affine_motor supports 1 or 3 phases")
    F = np.linspace(0.0, mmf_max, mmf_samples)
    flux = affine_surfaces(phases, pole_pairs, phases, F, n_theta, slope, offset, swing, phase)
    model = MotorModel(
        resistance=resistance * np.eye(phases), mesh_matrix=M, geometry_matrix=turns * np.eye(phases),
        v_max=v_max, pole_pairs=pole_pairs, phase_count=phases, flux=tuple(flux), i_max=i_max,
        remanent=True, name="affine-toy",
        notes={"flux": {"kind": "affine", "mmf_max": mmf_max, "mmf_samples": mmf_samples, "n_theta": n_theta,
                        "params": {"slope": slope, "offset": offset, "swing": swing, "phase": phase}}},
    )
    return with_derived_torque(model)


@dataclass
class AffineComparison:
    micp_objective: float
    direct_objective: float
    relative_difference: float
    micp_status: str
    direct_status: str
    micp_x: np.ndarray | None = None
    direct_currents: np.ndarray | None = None
    details: dict = field(default_factory=dict)


def _linear_columns(surface: SampledSurface, theta):
    """Per angle (slope, intercept) of a surface that is linear in MMF."""
    out = []
    for th in theta:
        col = surface.column(th)
        slope, icept = np.polyfit(surface.mmf_grid, col, 1)
        out.append((slope, icept))
    return np.array(out)


def direct_affine_qp(model: MotorModel, grid: Grid, omega: float, tau_des: float, alpha: float,
                     tolerance: float = 1e-9, current_limit: bool = True):
    """Convex QP in currents and torque only, using lambda = L i + k(theta)."""
    red = affine_reduction(model)
    A, b_all = affine_parameters(model)
    R, M, C = model.resistance, model.mesh_matrix, model.geometry_matrix
    n, m, T = model.n_windings, model.m_elements, grid.T
    theta = grid.theta[:T]
    j_of = [model.flux[0].theta_index(th) for th in theta]
    b = b_all[j_of]  # (T, m)
    kk = red.back_emf_samples[j_of]  # (T, n)
    Linv_A = np.diag(1.0 / A)
    S = np.linalg.inv(M @ Linv_A @ M.T)
    # F = G i + h_t
    G = Linv_A @ M.T @ S @ C
    H = np.array([Linv_A @ (M.T @ S @ M @ Linv_A @ b[t] - b[t]) for t in range(T)])
    torque = phase_torque(model)
    cd = np.array([_linear_columns(torque[k], theta) for k in range(m)])  # (m, T, 2)
    nv = T * n + T
    ii = lambda t: t * n + np.arange(n)  # noqa: E731
    tt = lambda t: T * n + t  # noqa: E731
    w = omega / grid.delta
    Pm = np.zeros((nv, nv))
    q = np.zeros(nv)
    for t in range(T):
        Pm[np.ix_(ii(t), ii(t))] = 2.0 * R / T
        Pm[tt(t), tt(t)] = 2.0 * alpha / T
        q[tt(t)] = -2.0 * alpha * tau_des / T
    Aeq, beq = [], []
    for t in range(T):
        r = np.zeros(nv)
        r[tt(t)] = 1.0
        c_t, d_t = cd[:, t, 0], cd[:, t, 1]
        r[ii(t)] -= c_t @ G
        Aeq.append(r)
        beq.append(float(c_t @ H[t] + d_t.sum()))
    r = np.zeros(nv)
    r[[tt(t) for t in range(T)]] = 1.0 / T
    Aeq.append(r)
    beq.append(tau_des)
    Ain, bin_ = [], []
    perm = np.array(model.winding_perm)
    Lm = red.inductance
    for t in range(T):
        # v_t = R i_t + w (lam_next - lam_t),  lam = L i + k
        V = np.zeros((n, nv))
        V[:, ii(t)] += R - w * Lm
        const = -w * kk[t]
        if t < T - 1:
            V[:, ii(t + 1)] += w * Lm
            const = const + w * kk[t + 1]
        else:
            V[:, ii(0)] += w * Lm[perm]
            const = const + w * kk[0][perm]
        for sgn in (1.0, -1.0):
            Ain.extend(sgn * V)
            bin_.extend(model.v_max - sgn * const)
        # MMF range of the single fitted region
        Fr = np.zeros((m, nv))
        Fr[:, ii(t)] = G
        lo = model.flux[0].mmf_grid[0]
        hi = model.flux[0].mmf_grid[-1]
        Ain.extend(Fr)
        bin_.extend(hi - H[t])
        Ain.extend(-Fr)
        bin_.extend(H[t] - lo)
    lb = np.full(nv, -np.inf)
    ub = np.full(nv, np.inf)
    if current_limit and model.i_max is not None:
        lb[: T * n] = -model.i_max
        ub[: T * n] = model.i_max
    inst = QpInstance(P=sp.csc_matrix(Pm), q=q, A_eq=sp.csr_matrix(np.array(Aeq)), b_eq=np.array(beq),
                      A_in=sp.csr_matrix(np.array(Ain)), b_in=np.array(bin_), lb=lb, ub=ub,
                      const=alpha * tau_des ** 2)
    res = solve_qp(inst, tolerance)
    return res, (res.x[: T * n].reshape(T, n) if res.status == OPTIMAL else None)


def affine_crosscheck(model: MotorModel, omega: float, tau_des: float, alpha: float, T: int = 20,
                      tolerance: float = 1e-9) -> AffineComparison:
    """Solve once through the single-region mixed-integer path and once as a
    direct QP in the currents; compare objectives."""
    from .bnb import solve as bnb_solve

    affine_parameters(model)  # raises on a non-affine characteristic
    grid = Grid.for_model(model, T)
    F = model.flux[0].mmf_grid
    pwa = fit_model(model, grid.theta, (F[0], F[-1]))
    problem = transcribe(model, pwa, grid, omega, tau_des, alpha)
    res = bnb_solve(problem, gap_tol=1e-9, qp_tolerance=min(tolerance, 1e-8))
    micp = res.upper_bound if res.status == "optimal" else (math.inf if res.status == "infeasible" else math.nan)
    dres, currents = direct_affine_qp(model, grid, omega, tau_des, alpha, tolerance)
    direct = dres.objective if dres.status == OPTIMAL else (math.inf if dres.status == INFEASIBLE else math.nan)
    if np.isfinite(micp) and np.isfinite(direct):
        rel = abs(micp - direct) / max(abs(direct), 1e-12)
    elif micp == direct == math.inf:
        rel = 0.0
    else:
        rel = math.inf
    return AffineComparison(micp, direct, rel, res.status, dres.status, res.x, currents,
                            {"nodes": res.nodes, "gap": res.gap})


# ---------------------------------------------------------------------------
# symmetry
def perm_power(perm, s: int) -> np.ndarray:
    p = np.arange(len(perm))
    for _ in range(s):
        p = np.asarray(perm)[p]
    return p


def unfold(values: np.ndarray, perm, phase_count: int) -> np.ndarray:
    """Reduced-interval samples (T, n) -> one electrical period (K*T, n).

    Uses x_k(theta + s*span) = x_{perm^s[k]}(theta).
    """
    values = np.asarray(values)
    return np.concatenate([values[:, perm_power(perm, s)] for s in range(phase_count)], axis=0)


def glue_mismatch(solution: WaveformSolution) -> float:
    """Largest flux-linkage mismatch where consecutive reduced intervals meet.

    The end-of-interval flux linkage is recovered from the last dynamics step
    and compared with the permuted start value.
    """
    w = solution.omega / (solution.span / solution.T)
    R = solution.resistance
    i, v, lam = solution.i, solution.v, solution.lam
    if w == 0:
        return 0.0
    lam_end = lam[-1] + (v[-1] - R @ i[-1]) / w
    return float(np.max(np.abs(lam_end - lam[0][list(solution.winding_perm)]), initial=0.0))


def period_mismatch(values: np.ndarray, perm, phase_count: int) -> float:
    """|x(theta + 2*pi/Np) - x(theta)| on the unfolded grid (zero iff perm^K = id)."""
    full = unfold(values, perm, phase_count)
    nxt = unfold(np.asarray(values)[:, perm_power(perm, phase_count)], perm, phase_count)
    return float(np.max(np.abs(nxt - full), initial=0.0))


def relabel_phases(model: MotorModel, shift: int = 1) -> MotorModel:
    """Same motor with element/winding/mesh k renamed to perm^shift[k].

    Equivalent to moving the rotor origin by ``shift`` reduced intervals.
    """
    from dataclasses import replace

    ep, wp, mp = (perm_power(p, shift) for p in (model.element_perm, model.winding_perm, model.mesh_perm))
    return replace(
        model,
        mesh_matrix=model.mesh_matrix[np.ix_(mp, ep)],
        geometry_matrix=model.geometry_matrix[np.ix_(mp, wp)],
        resistance=model.resistance[np.ix_(wp, wp)],
        flux=tuple(model.flux[k] for k in ep),
        torque=None if model.torque is None else tuple(model.torque[k] for k in ep),
    )


# ---------------------------------------------------------------------------
def random_toy_problem(rng: np.random.Generator, T: int = 4, N: int = 2) -> TranscribedProblem:
    """Single-winding instance with randomized model and operating point.

    Ranges are set so that a fair share of instances needs branching and a
    few are infeasible.
    """
    model = toy_motor(phase=rng.uniform(0, 2 * math.pi), resistance=rng.uniform(0.2, 1.0),
                      turns=rng.uniform(100, 300), v_max=rng.uniform(100, 400))
    grid = Grid.for_model(model, T)
    inner = np.sort(rng.uniform(300, 1200, N - 1))
    pwa = fit_model(model, grid.theta, (0.0, *inner, 2000.0))
    return transcribe(model, pwa, grid, rng.uniform(10, 80), rng.uniform(0.5, 3.0), rng.uniform(0.5, 20.0))
