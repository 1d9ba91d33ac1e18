"""Discretized torque-control problem as a standard-form MIQP.

The rotor interval ``[0, 2*pi/(K*Np)]`` is split into ``T`` uniform steps.
Variables exist at ``t = 0..T-1``; the value of ``lambda`` at ``t = T`` is the
phase-permuted value at ``t = 0`` (gluing), so no index-``T`` variables exist.

Row kinds (``eq_kind`` / ``in_kind``):

    a  electrical dynamics, forward difference, t < T-1
    b  psi = M^T phi
    c  M F = C i
    d  lambda = C^T phi
    e  disjunctive PWA flux rows (psi, F split, one-region-per-group, z bounds)
    f  PWA torque row
    g  voltage (and optional current) limits
    h  average torque
    i  dynamics at t = T-1 through the gluing map
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .motor import MotorModel
from .pwa import PwaCharacteristic

ROW_KINDS = "abcdefghi"


class TranscriptionError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    T: int
    span: float

    def __post_init__(self):
        if self.T < 1:
            raise TranscriptionError("T must be >= 1")

    @classmethod
    def for_model(cls, model: MotorModel, T: int) -> "Grid":
        return cls(T, model.span)

    @property
    def delta(self) -> float:
        return self.span / self.T

    @property
    def theta(self) -> np.ndarray:
        return np.arange(self.T + 1) * self.delta


class Layout:
    """Index arrays of every variable family, ordered by grid point."""

    def __init__(self, T: int, n: int, m: int, l: int, N: int):
        self.T, self.n, self.m, self.l, self.N = T, n, m, l, N
        sizes = [("i", (n,)), ("v", (n,)), ("lam", (n,)), ("F", (m,)), ("psi", (m,)),
                 ("phi", (l,)), ("tau", ()), ("z", (m, N)), ("s", (m, N))]
        self.block = sum(int(np.prod(s)) for _, s in sizes)
        off = 0
        for name, shape in sizes:
            width = int(np.prod(shape))
            idx = (np.arange(T)[:, None] * self.block + off + np.arange(width)[None, :])
            setattr(self, name, idx.reshape((T,) + shape))
            off += width
        self.n_vars = T * self.block
        self.families = [name for name, _ in sizes]

    def names(self) -> list[str]:
        out = [""] * self.n_vars
        for fam in self.families:
            arr = getattr(self, fam)
            for pos in np.ndindex(arr.shape):
                t, rest = pos[0], pos[1:]
                out[arr[pos]] = f"{fam}[{t}]" + "".join(f"[{r}]" for r in rest)
        return out


@dataclass(eq=False)
class TranscribedProblem:
    """minimize 0.5 x'Px + q'x + const  s.t.  A_eq x = b_eq, A_in x <= b_in, lb <= x <= ub,
    x[binary] in {0, 1}."""

    layout: Layout
    P: sp.csc_matrix
    q: np.ndarray
    const: float
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    eq_kind: np.ndarray
    A_in: sp.csr_matrix
    b_in: np.ndarray
    in_kind: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    binary: np.ndarray
    sos1_groups: np.ndarray  # (T*m, N) variable indices, group g = t*m + k
    model: MotorModel
    pwa: PwaCharacteristic
    grid: Grid
    omega: float
    tau_des: float
    alpha: float
    meta: dict = field(default_factory=dict)

    @property
    def n_vars(self) -> int:
        return self.layout.n_vars

    def group_of(self, t: int, k: int) -> int:
        return t * self.layout.m + k

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x + self.const)


@dataclass
class TranscribeOptions:
    current_limit: bool = True
    tighten_bounds: bool = True


class _Rows:
    def __init__(self):
        self.r, self.c, self.v, self.rhs, self.kind = [], [], [], [], []

    def add(self, cols, vals, rhs, kind):
        row = len(self.rhs)
        self.r.extend([row] * len(cols))
        self.c.extend(int(c) for c in cols)
        self.v.extend(float(v) for v in vals)
        self.rhs.append(float(rhs))
        self.kind.append(kind)

    def build(self, n_vars):
        A = sp.csr_matrix((self.v, (self.r, self.c)), shape=(len(self.rhs), n_vars))
        A.sum_duplicates()
        A.eliminate_zeros()
        return A, np.array(self.rhs, dtype=float), np.array(self.kind, dtype="<U1")


def transcribe(
    model: MotorModel,
    pwa: PwaCharacteristic,
    grid: Grid,
    omega: float,
    tau_des: float,
    alpha: float,
    options: TranscribeOptions | None = None,
) -> TranscribedProblem:
    """Assemble the discretized MIQP (omega in rad/s, tau_des in N m)."""
    opts = options or TranscribeOptions()
    if alpha < 0:
        raise TranscriptionError("alpha must be nonnegative")
    if abs(grid.span - model.span) > 1e-12:
        raise TranscriptionError("grid span does not match the model's reduced interval")
    T = grid.T
    if pwa.n_angles < T or np.max(np.abs(pwa.theta[:T] - grid.theta[:T])) > 1e-9:
        raise TranscriptionError("PWA characteristic was not fitted on the grid angles")
    if pwa.m_elements != model.m_elements:
        raise TranscriptionError("PWA element count does not match the model")

    R, M, C = model.resistance, model.mesh_matrix, model.geometry_matrix
    n, m, l, N = model.n_windings, model.m_elements, model.l_meshes, pwa.n_regions
    L = Layout(T, n, m, l, N)
    bp = pwa.breakpoints
    w = omega / grid.delta
    wperm = model.winding_perm

    eq, ineq = _Rows(), _Rows()
    for t in range(T):
        i, v, lam = L.i[t], L.v[t], L.lam[t]
        F, psi, phi, tau = L.F[t], L.psi[t], L.phi[t], L.tau[t]
        # (a)/(i) v = R i + omega * (lam_{t+1} - lam_t) / delta
        for k in range(n):
            if t < T - 1:
                nxt, kind = L.lam[t + 1][k], "a"
            else:
                nxt, kind = L.lam[0][wperm[k]], "i"
            cols = [v[k], *i, lam[k], nxt]
            vals = [1.0, *(-R[k]), w, -w]
            eq.add(cols, vals, 0.0, kind)
        # (b) psi = M^T phi
        for k in range(m):
            eq.add([psi[k], *phi], [1.0, *(-M[:, k])], 0.0, "b")
        # (c) M F = C i
        for r in range(l):
            eq.add([*F, *i], [*M[r], *(-C[r])], 0.0, "c")
        # (d) lambda = C^T phi
        for k in range(n):
            eq.add([lam[k], *phi], [1.0, *(-C[:, k])], 0.0, "d")
        # (e) disjunctive flux encoding
        for k in range(m):
            z, s = L.z[t, k], L.s[t, k]
            eq.add([psi[k], *z, *s], [1.0, *(-pwa.a[k, t]), *(-pwa.b[k, t])], 0.0, "e")
            eq.add([F[k], *z], [1.0] + [-1.0] * N, 0.0, "e")
            eq.add(list(s), [1.0] * N, 1.0, "e")
            for j in range(N):
                ineq.add([s[j], z[j]], [bp[j], -1.0], 0.0, "e")
                ineq.add([z[j], s[j]], [1.0, -bp[j + 1]], 0.0, "e")
        # (f) torque
        cols, vals = [tau], [1.0]
        for k in range(m):
            cols += [*L.z[t, k], *L.s[t, k]]
            vals += [*(-pwa.c[k, t]), *(-pwa.d[k, t])]
        eq.add(cols, vals, 0.0, "f")
        # (g) limits
        for k in range(n):
            ineq.add([v[k]], [1.0], model.v_max, "g")
            ineq.add([v[k]], [-1.0], model.v_max, "g")
            if opts.current_limit and model.i_max is not None:
                ineq.add([i[k]], [1.0], model.i_max, "g")
                ineq.add([i[k]], [-1.0], model.i_max, "g")
    # (h) average torque
    eq.add(list(L.tau), [1.0 / T] * T, tau_des, "h")

    A_eq, b_eq, eq_kind = eq.build(L.n_vars)
    A_in, b_in, in_kind = ineq.build(L.n_vars)

    lb = np.full(L.n_vars, -np.inf)
    ub = np.full(L.n_vars, np.inf)
    lb[L.s.ravel()] = 0.0
    ub[L.s.ravel()] = 1.0
    if opts.tighten_bounds:
        lb[L.F.ravel()] = bp[0]
        ub[L.F.ravel()] = bp[-1]
        zl = np.minimum(0.0, bp[:-1])
        zu = np.maximum(0.0, bp[1:])
        lb[L.z] = zl
        ub[L.z] = zu

    # objective: (1/T) sum_t [ i_t' R i_t + alpha (tau_t - tau_des)^2 ]
    rows, cols, vals = [], [], []
    for t in range(T):
        for a in range(n):
            for b in range(n):
                if R[a, b]:
                    rows.append(L.i[t][a]); cols.append(L.i[t][b]); vals.append(2.0 * R[a, b] / T)
        if alpha:
            rows.append(L.tau[t]); cols.append(L.tau[t]); vals.append(2.0 * alpha / T)
    P = sp.csc_matrix((vals, (rows, cols)), shape=(L.n_vars, L.n_vars))
    q = np.zeros(L.n_vars)
    q[L.tau] = -2.0 * alpha * tau_des / T
    const = alpha * tau_des ** 2

    groups = L.s.reshape(T * m, N)
    return TranscribedProblem(
        layout=L, P=P, q=q, const=const,
        A_eq=A_eq, b_eq=b_eq, eq_kind=eq_kind,
        A_in=A_in, b_in=b_in, in_kind=in_kind,
        lb=lb, ub=ub, binary=np.sort(L.s.ravel()), sos1_groups=groups,
        model=model, pwa=pwa, grid=grid, omega=float(omega), tau_des=float(tau_des), alpha=float(alpha),
    )


def row_kind_coverage(problem: TranscribedProblem) -> set[str]:
    return set(problem.eq_kind.tolist()) | set(problem.in_kind.tolist())


# ---------------------------------------------------------------------------
@dataclass
class WaveformSolution:
    """Reduced-interval trajectories (index t = 0..T-1) and their metrics."""

    theta: np.ndarray
    i: np.ndarray
    v: np.ndarray
    lam: np.ndarray
    F: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    tau: np.ndarray
    z: np.ndarray | None = None
    s: np.ndarray | None = None
    avg_torque: float = 0.0
    ripple: float = 0.0
    loss: float = 0.0
    objective: float = 0.0
    max_abs_v: float = 0.0
    omega: float = 0.0
    tau_des: float = 0.0
    alpha: float = 0.0
    span: float = 0.0
    pole_pairs: int = 1
    phase_count: int = 1
    winding_perm: tuple = ()
    element_perm: tuple = ()
    mesh_perm: tuple = ()
    resistance: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.theta.size


def waveform_metrics(i: np.ndarray, tau: np.ndarray, R: np.ndarray, alpha: float, tau_des: float):
    """Average torque, ripple, loss and the problem objective (reduced interval)."""
    T = tau.size
    avg = float(np.sum(tau) / T)
    ripple = float(np.sum((tau - avg) ** 2) / T)
    loss = float(np.einsum("ta,ab,tb->", i, R, i) / T)
    obj = loss + alpha * float(np.sum((tau - tau_des) ** 2) / T)
    return avg, ripple, loss, obj


def assemble_waveforms(problem: TranscribedProblem, x) -> WaveformSolution:
    x = np.asarray(x, dtype=float)
    L = problem.layout
    if x.shape != (L.n_vars,):
        raise TranscriptionError(f"solution vector has length {x.size}, layout needs {L.n_vars}")
    model = problem.model
    sol = WaveformSolution(
        theta=problem.grid.theta[:-1].copy(),
        i=x[L.i], v=x[L.v], lam=x[L.lam], F=x[L.F], psi=x[L.psi], phi=x[L.phi], tau=x[L.tau],
        z=x[L.z], s=x[L.s],
        omega=problem.omega, tau_des=problem.tau_des, alpha=problem.alpha,
        span=problem.grid.span, pole_pairs=model.pole_pairs, phase_count=model.phase_count,
        winding_perm=model.winding_perm, element_perm=model.element_perm, mesh_perm=model.mesh_perm,
        resistance=np.array(model.resistance),
    )
    sol.avg_torque, sol.ripple, sol.loss, sol.objective = waveform_metrics(
        sol.i, sol.tau, model.resistance, problem.alpha, problem.tau_des
    )
    sol.max_abs_v = float(np.max(np.abs(sol.v))) if sol.v.size else 0.0
    return sol


@dataclass
class RowCheck:
    eq_residual: dict
    in_violation: dict
    bound_violation: float
    integrality: float
    sos1_ok: bool

    def max_eq(self) -> float:
        return max(self.eq_residual.values(), default=0.0)

    def max_in(self) -> float:
        return max(max(self.in_violation.values(), default=0.0), self.bound_violation)

    def feasible(self, eq_tol: float = 1e-6, in_tol: float = 1e-8, int_tol: float = 0.0) -> bool:
        return self.max_eq() <= eq_tol and self.max_in() <= in_tol and self.integrality <= int_tol and self.sos1_ok


def check_rows(problem: TranscribedProblem, x) -> RowCheck:
    """Row-level feasibility report, per row kind."""
    x = np.asarray(x, dtype=float)
    r_eq = np.abs(problem.A_eq @ x - problem.b_eq)
    r_in = np.maximum(problem.A_in @ x - problem.b_in, 0.0)
    eq = {k: float(np.max(r_eq[problem.eq_kind == k], initial=0.0)) for k in sorted(set(problem.eq_kind))}
    ineq = {k: float(np.max(r_in[problem.in_kind == k], initial=0.0)) for k in sorted(set(problem.in_kind))}
    bviol = float(max(np.max(problem.lb - x, initial=0.0), np.max(x - problem.ub, initial=0.0), 0.0))
    sb = x[problem.binary]
    integ = float(np.max(np.minimum(np.abs(sb), np.abs(sb - 1.0)), initial=0.0))
    groups = x[problem.sos1_groups]
    sos_ok = bool(np.all(np.count_nonzero(np.round(groups) == 1.0, axis=1) == 1))
    return RowCheck(eq, ineq, bviol, integ, sos_ok)


def pwa_consistency(problem: TranscribedProblem, x) -> float:
    """Largest violation of 'F in range and z inside the selected region'."""
    x = np.asarray(x, dtype=float)
    L, bp = problem.layout, problem.pwa.breakpoints
    worst = 0.0
    for t in range(L.T):
        for k in range(L.m):
            s = x[L.s[t, k]]
            j = int(np.argmax(s))
            z = x[L.z[t, k]]
            F = x[L.F[t, k]]
            worst = max(worst, bp[0] - F, F - bp[-1], bp[j] - z[j], z[j] - bp[j + 1],
                        float(np.max(np.abs(np.delete(z, j)), initial=0.0)))
    return float(max(worst, 0.0))


# ---------------------------------------------------------------------------
def dump_miqp(problem: TranscribedProblem, path) -> None:
    """Plain-text sparse dump (0-based indices, '%r' floats).

    Lines:  ``var <j> <name> <lb> <ub> <C|B>``, ``const <c>``, ``q <j> <val>``,
    ``P <i> <j> <val>`` (upper triangle), ``eq <r> <rhs> <kind>``,
    ``Aeq <r> <j> <val>``, ``in <r> <rhs> <kind>`` (row <= rhs),
    ``Ain <r> <j> <val>``, ``sos1 <g> <j1> ... <jN>``.
    """
    names = problem.layout.names()
    binset = set(problem.binary.tolist())
    with open(path, "w") as fh:
        fh.write("# srmwave-miqp v1\n")
        fh.write(f"dims {problem.n_vars} {problem.A_eq.shape[0]} {problem.A_in.shape[0]} {problem.sos1_groups.shape[0]}\n")
        for j in range(problem.n_vars):
            fh.write(f"var {j} {names[j]} {float(problem.lb[j])!r} {float(problem.ub[j])!r} {'B' if j in binset else 'C'}\n")
        fh.write(f"const {float(problem.const)!r}\n")
        for j in np.flatnonzero(problem.q):
            fh.write(f"q {j} {float(problem.q[j])!r}\n")
        Pu = sp.triu(problem.P).tocoo()
        for i, j, v in zip(Pu.row, Pu.col, Pu.data):
            fh.write(f"P {i} {j} {float(v)!r}\n")
        for tag, A, b, kind in (("eq", problem.A_eq, problem.b_eq, problem.eq_kind),
                                ("in", problem.A_in, problem.b_in, problem.in_kind)):
            for r in range(A.shape[0]):
                fh.write(f"{tag} {r} {float(b[r])!r} {kind[r]}\n")
            Ac = A.tocoo()
            for r, j, v in zip(Ac.row, Ac.col, Ac.data):
                fh.write(f"A{tag} {r} {j} {float(v)!r}\n")
        for g, idx in enumerate(problem.sos1_groups):
            fh.write(f"sos1 {g} " + " ".join(str(int(j)) for j in idx) + "\n")


def load_miqp(path) -> dict:
    """Parse a dump back into plain arrays (for differential tests)."""
    data = {"q": {}, "P": [], "Aeq": [], "Ain": [], "eq": {}, "in": {}, "var": {}, "sos1": {}}
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            tok = line.split()
            tag = tok[0]
            if tag == "dims":
                n, meq, min_, ng = map(int, tok[1:])
            elif tag == "var":
                data["var"][int(tok[1])] = (float(tok[3]), float(tok[4]), tok[5])
            elif tag == "const":
                data["const"] = float(tok[1])
            elif tag == "q":
                data["q"][int(tok[1])] = float(tok[2])
            elif tag in ("P", "Aeq", "Ain"):
                data[tag].append((int(tok[1]), int(tok[2]), float(tok[3])))
            elif tag in ("eq", "in"):
                data[tag][int(tok[1])] = (float(tok[2]), tok[3])
            elif tag == "sos1":
                data["sos1"][int(tok[1])] = [int(t) for t in tok[2:]]
    q = np.zeros(n)
    for j, v in data["q"].items():
        q[j] = v
    Pu = sp.coo_matrix(([v for *_, v in data["P"]], ([i for i, *_ in data["P"]], [j for _, j, _ in data["P"]])), shape=(n, n))
    P = (Pu + sp.triu(Pu, 1).T).tocsc()

    def mat(key, rows):
        trip = data[key]
        return sp.csr_matrix(([v for *_, v in trip], ([r for r, *_ in trip], [c for _, c, _ in trip])), shape=(rows, n))

    return {
        "P": P, "q": q, "const": data.get("const", 0.0),
        "A_eq": mat("Aeq", meq), "b_eq": np.array([data["eq"][r][0] for r in range(meq)]),
        "A_in": mat("Ain", min_), "b_in": np.array([data["in"][r][0] for r in range(min_)]),
        "lb": np.array([data["var"][j][0] for j in range(n)]),
        "ub": np.array([data["var"][j][1] for j in range(n)]),
        "binary": np.array([j for j in range(n) if data["var"][j][2] == "B"]),
        "sos1": np.array([data["sos1"][g] for g in range(ng)]),
    }
