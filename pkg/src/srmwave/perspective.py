"""Perspective strengthening of the resistive-loss term.

With C of full column rank the winding current is ``i = pinv(C) M F``, so the
loss is ``F'QF`` with ``Q = M' pinv(C)' R pinv(C) M``. Splitting ``Q`` into
``(Q - D) + D`` with ``D`` diagonal, ``D >= 0`` and ``Q - D`` PSD, the ``D`` part
is replaced by ``sum_j D_kk z_j^2 / s_j``, equal at integer points and convex.
Each perspective term gets an epigraph variable in watts,
``w >= D_kk z^2/s``, enforced by lazily separated tangent cuts
``w >= D_kk (2 r z - r^2 s)``.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .motor import MotorModel
from .transcription import TranscribedProblem


class PerspectiveError(ValueError):
    pass


def compute_q(model: MotorModel) -> np.ndarray:
    C = np.asarray(model.geometry_matrix, dtype=float)
    if np.linalg.matrix_rank(C) < C.shape[1]:
        raise PerspectiveError("geometry matrix is rank deficient")
    Cp = np.linalg.pinv(C)
    M, R = model.mesh_matrix, model.resistance
    Q = M.T @ Cp.T @ R @ Cp @ M
    return 0.5 * (Q + Q.T)


def _min_eig(A) -> float:
    return float(np.linalg.eigvalsh(A)[0]) if A.size else 0.0


def choose_d(Q, tol: float = 1e-10) -> np.ndarray:
    """Diagonal D >= 0 with Q - D PSD, trying to make trace(D) large.

    Uniform diagonal: bisection on the scalar multiplier. Otherwise: greedy
    coordinate ascent, each coordinate raised by bisection as far as PSD
    allows. Returns the diagonal as a vector.
    """
    Q = np.asarray(Q, dtype=float)
    m = Q.shape[0]
    scale = max(np.max(np.abs(Q)), 0.0)
    if scale == 0.0:
        return np.zeros(m)
    psd_tol = 1e-12 * scale

    def ok(d):
        return _min_eig(Q - np.diag(d)) >= -psd_tol

    diag = np.diag(Q)
    if not np.any(Q - np.diag(diag)):
        d = np.maximum(diag, 0.0)
    elif np.ptp(diag) <= 1e-14 * scale:
        lo, hi = 0.0, float(diag[0])
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if ok(np.full(m, mid)):
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * scale:
                break
        d = np.full(m, lo)
    else:
        d = np.full(m, max(_min_eig(Q), 0.0))
        for _ in range(20):
            before = d.sum()
            for k in range(m):
                lo, hi = 0.0, max(diag[k] - d[k], 0.0)
                for _ in range(100):
                    mid = 0.5 * (lo + hi)
                    trial = d.copy()
                    trial[k] += mid
                    if ok(trial):
                        lo = mid
                    else:
                        hi = mid
                    if hi - lo <= 1e-15 * scale:
                        break
                d[k] += lo
            if d.sum() - before <= 1e-12 * scale:
                break
    if np.any(d < 0) or _min_eig(Q - np.diag(d)) < -max(tol, psd_tol):
        d = np.full(m, max(_min_eig(Q), 0.0))
    return d


@dataclass(frozen=True)
class Cut:
    """Tangent of z^2/s along z = r s for element k, region j, angle t.

    The row is ``D_kk (coef_z z + coef_s s) - w <= 0``.
    """

    k: int
    j: int
    t: int
    r: float

    @property
    def coef_z(self) -> float:
        return 2.0 * self.r

    @property
    def coef_s(self) -> float:
        return -self.r * self.r

    def value(self, z, s) -> float:
        return self.coef_z * z + self.coef_s * s

    def violation(self, z, s, w, d=1.0) -> float:
        return d * self.value(z, s) - w


def perspective_cut(k: int, j: int, t: int, z_bar: float, s_bar: float) -> Cut:
    """Supporting hyperplane of z^2/s at (z_bar, s_bar)."""
    if not s_bar > 0:
        raise PerspectiveError("linearization point needs s > 0")
    return Cut(int(k), int(j), int(t), float(z_bar) / float(s_bar))


class CutPool:
    """Global pool of tangent cuts keyed by (k, j, t); never shrinks."""

    def __init__(self):
        self._cuts: list[Cut] = []
        self._index: dict[tuple, int] = {}
        self._by_group: dict[tuple, list[int]] = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._cuts)

    def add(self, cut: Cut) -> int:
        key = (cut.k, cut.j, cut.t, round(cut.r, 9))
        with self._lock:
            if key in self._index:
                return self._index[key]
            cid = len(self._cuts)
            self._cuts.append(cut)
            self._index[key] = cid
            self._by_group.setdefault((cut.k, cut.j, cut.t), []).append(cid)
            return cid

    def __getitem__(self, cid: int) -> Cut:
        return self._cuts[cid]

    def snapshot(self) -> list[Cut]:
        with self._lock:
            return list(self._cuts)

    def for_term(self, k, j, t) -> list[int]:
        return list(self._by_group.get((k, j, t), ()))


@dataclass
class PerspectiveConfig:
    Q: np.ndarray
    D: np.ndarray
    enabled: bool = True
    separation_tol: float = 1e-9  # objective units, relative to max(1, |objective|)
    max_rounds: int = 30
    pool: CutPool = field(default_factory=CutPool)

    @classmethod
    def for_problem(cls, problem: TranscribedProblem, **kw) -> "PerspectiveConfig":
        Q = compute_q(problem.model)
        return cls(Q=Q, D=choose_d(Q), **kw)


@dataclass(eq=False)
class Reformulation:
    """Objective and extra columns of the perspective-strengthened relaxation.

    Columns ``w[t, k, j]`` (after the base columns) hold the epigraph variables.
    """

    P: sp.csc_matrix
    q: np.ndarray
    const: float
    n_base: int
    w: np.ndarray  # (T, m, N) absolute column indices
    lb: np.ndarray
    ub: np.ndarray
    D: np.ndarray
    Q: np.ndarray

    @property
    def n_vars(self) -> int:
        return self.n_base + self.w.size


def reformulate(problem: TranscribedProblem, cfg: PerspectiveConfig) -> Reformulation:
    L = problem.layout
    T, m, N = L.T, L.m, L.N
    nb = problem.n_vars
    w = nb + np.arange(T * m * N).reshape(T, m, N)
    n = nb + w.size
    QmD = cfg.Q - np.diag(cfg.D)
    rows, cols, vals = [], [], []
    # keep every base quadratic term except the winding-current block
    Pb = problem.P.tocoo()
    ivars = set(L.i.ravel().tolist())
    for r, c, v in zip(Pb.row, Pb.col, Pb.data):
        if r in ivars or c in ivars:
            continue
        rows.append(r); cols.append(c); vals.append(v)
    for t in range(T):
        F = L.F[t]
        for a in range(m):
            for b in range(m):
                if QmD[a, b] != 0.0:
                    rows.append(F[a]); cols.append(F[b]); vals.append(2.0 * QmD[a, b] / T)
    P = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    q = np.concatenate([problem.q, np.zeros(w.size)])
    ub = np.concatenate([problem.ub, np.full(w.size, np.inf)])
    for t in range(T):
        for k in range(m):
            q[w[t, k]] = 1.0 / T
            if cfg.D[k] <= 0:
                ub[w[t, k]] = 0.0
    lb = np.concatenate([problem.lb, np.zeros(w.size)])
    return Reformulation(P, q, problem.const, nb, w, lb, ub, cfg.D, cfg.Q)


def initial_cuts(problem: TranscribedProblem, pool: CutPool, D) -> list[int]:
    """Tangents at both region ends and the midpoint of every region."""
    bp = problem.pwa.breakpoints
    L = problem.layout
    ids = []
    for t in range(L.T):
        for k in range(L.m):
            for j in range(L.N):
                if D[k] <= 0:
                    continue
                for r in (bp[j], 0.5 * (bp[j] + bp[j + 1]), bp[j + 1]):
                    if r != 0.0:  # the r = 0 tangent is just w >= 0
                        ids.append(pool.add(Cut(k, j, t, float(r))))
    return sorted(set(ids))


def cut_rows(cuts, problem: TranscribedProblem, ref: Reformulation) -> sp.csr_matrix:
    L = problem.layout
    r, c, v = [], [], []
    for row, cut in enumerate(cuts):
        r += [row, row, row]
        c += [L.z[cut.t, cut.k, cut.j], L.s[cut.t, cut.k, cut.j], ref.w[cut.t, cut.k, cut.j]]
        d = ref.D[cut.k]
        v += [d * cut.coef_z, d * cut.coef_s, -1.0]
    return sp.csr_matrix((v, (r, c)), shape=(len(cuts), ref.n_vars))


def decomposition(problem: TranscribedProblem, x, Q, D) -> tuple[float, float]:
    """(sum_t F'QF, sum_t [F'(Q-D)F + sum_kj D_kk z^2/s]) both divided by T.

    ``z^2/s`` is taken as 0 when z = s = 0.
    """
    L = problem.layout
    x = np.asarray(x, dtype=float)
    direct = split = 0.0
    QmD = Q - np.diag(D)
    for t in range(L.T):
        F = x[L.F[t]]
        direct += F @ Q @ F
        split += F @ QmD @ F
        z, s = x[L.z[t]], x[L.s[t]]
        for k in range(L.m):
            for j in range(L.N):
                if s[k, j] > 0:
                    split += D[k] * z[k, j] ** 2 / s[k, j]
                elif z[k, j] != 0:
                    split += np.inf
    return direct / L.T, split / L.T
