"""Lumped-parameter switched reluctance motor model.

Angles are mechanical radians throughout. Every per-element characteristic is
sampled on the reduced rotor interval ``[0, 2*pi/(K*Np)]`` (both endpoints
included); values outside that interval are reached through the phase
permutations, ``x_k(theta + span) = x_{perm[k]}(theta)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np


class ModelError(ValueError):
    """Invalid motor description. ``path`` points at the offending item."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SampledSurface:
    """Values on a rectangular (MMF, theta) grid; ``values[i, j]`` is at
    ``(mmf_grid[i], theta_grid[j])``."""

    mmf_grid: np.ndarray
    theta_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mmf_grid", _frozen(self.mmf_grid))
        object.__setattr__(self, "theta_grid", _frozen(self.theta_grid))
        object.__setattr__(self, "values", _frozen(self.values))
        if self.mmf_grid.ndim != 1 or self.mmf_grid.size < 2:
            raise ModelError("mmf_grid", "need at least two samples")
        if self.theta_grid.ndim != 1 or self.theta_grid.size < 1:
            raise ModelError("theta_grid", "need at least one sample")
        if np.any(np.diff(self.mmf_grid) <= 0):
            raise ModelError("mmf_grid", "must be strictly ascending")
        if np.any(np.diff(self.theta_grid) <= 0):
            raise ModelError("theta_grid", "must be strictly ascending")
        if self.values.shape != (self.mmf_grid.size, self.theta_grid.size):
            raise ModelError(
                "values",
                f"shape {self.values.shape} does not match grids "
                f"({self.mmf_grid.size}, {self.theta_grid.size})",
            )
        if not np.all(np.isfinite(self.values)):
            raise ModelError("values", "non-finite entries")

    @property
    def theta_step(self) -> float:
        steps = np.diff(self.theta_grid)
        if steps.size == 0:
            raise ModelError("theta_grid", "single sample has no step")
        if np.ptp(steps) > 1e-9 * max(abs(steps.mean()), 1e-300):
            raise ModelError("theta_grid", "theta grid is not uniform")
        return float(steps.mean())

    def theta_index(self, theta: float, tol: float = 1e-9) -> int:
        j = int(np.argmin(np.abs(self.theta_grid - theta)))
        if abs(self.theta_grid[j] - theta) > tol:
            raise ModelError("theta_grid", f"no sample at theta={theta:.12g}")
        return j

    def column(self, theta: float) -> np.ndarray:
        return self.values[:, self.theta_index(theta)]


def _as_perm(p, n: int, path: str) -> tuple[int, ...]:
    p = tuple(int(v) for v in p)
    if sorted(p) != list(range(n)):
        raise ModelError(path, f"not a permutation of 0..{n - 1}")
    return p


def _cyclic(n: int) -> tuple[int, ...]:
    return tuple((k + 1) % n for k in range(n))


@dataclass(frozen=True, eq=False)
class MotorModel:
    resistance: np.ndarray
    mesh_matrix: np.ndarray
    geometry_matrix: np.ndarray
    v_max: float
    pole_pairs: int
    phase_count: int
    flux: tuple[SampledSurface, ...]
    torque: tuple[SampledSurface, ...] | None = None
    i_max: float | None = None
    winding_perm: tuple[int, ...] | None = None
    element_perm: tuple[int, ...] | None = None
    mesh_perm: tuple[int, ...] | None = None
    unipolar: bool = True
    remanent: bool = False
    name: str = ""
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("resistance", _frozen(np.atleast_2d(self.resistance)))
        set_("mesh_matrix", _frozen(np.atleast_2d(self.mesh_matrix)))
        set_("geometry_matrix", _frozen(np.atleast_2d(self.geometry_matrix)))
        set_("flux", tuple(self.flux))
        if self.torque is not None:
            set_("torque", tuple(self.torque))
        n, m, l = self.n_windings, self.m_elements, self.l_meshes
        set_("winding_perm", _as_perm(self.winding_perm or _cyclic_or_id(n, self.phase_count), n, "winding_perm"))
        set_("element_perm", _as_perm(self.element_perm or _cyclic_or_id(m, self.phase_count), m, "element_perm"))
        set_("mesh_perm", _as_perm(self.mesh_perm or _cyclic_or_id(l, self.phase_count), l, "mesh_perm"))
        self._validate()

    # -- dimensions -----------------------------------------------------
    @property
    def n_windings(self) -> int:
        return self.resistance.shape[0]

    @property
    def m_elements(self) -> int:
        return self.mesh_matrix.shape[1]

    @property
    def l_meshes(self) -> int:
        return self.mesh_matrix.shape[0]

    @property
    def span(self) -> float:
        """Length of the reduced rotor interval, 2*pi/(K*Np)."""
        return 2.0 * math.pi / (self.phase_count * self.pole_pairs)

    @property
    def theta_grid(self) -> np.ndarray:
        return self.flux[0].theta_grid

    # -- validation -----------------------------------------------------
    def _validate(self):
        R, M, C = self.resistance, self.mesh_matrix, self.geometry_matrix
        n, m, l = self.n_windings, self.m_elements, self.l_meshes
        if R.shape != (n, n):
            raise ModelError("resistance", "must be square")
        if np.any(R - np.diag(np.diag(R))):
            raise ModelError("resistance", "must be diagonal")
        bad = np.flatnonzero(np.diag(R) <= 0)
        if bad.size:
            raise ModelError(f"resistance[{bad[0]}][{bad[0]}]", "must be strictly positive")
        if not np.all(np.isin(M, (-1.0, 0.0, 1.0))):
            raise ModelError("mesh_matrix", "entries must be -1, 0 or 1")
        if np.linalg.matrix_rank(M) != l:
            raise ModelError("mesh_matrix", "must have full row rank")
        if C.shape != (l, n):
            raise ModelError("geometry_matrix", f"expected shape ({l}, {n}), got {C.shape}")
        if np.linalg.matrix_rank(C) != n:
            raise ModelError("geometry_matrix", "must have full column rank")
        if not self.v_max > 0:
            raise ModelError("v_max", "must be positive")
        if self.i_max is not None and not self.i_max > 0:
            raise ModelError("i_max", "must be positive when given")
        if self.pole_pairs < 1:
            raise ModelError("pole_pairs", "must be >= 1")
        if self.phase_count < 1:
            raise ModelError("phase_count", "must be >= 1")
        if len(self.flux) != m:
            raise ModelError("flux", f"expected {m} surfaces, got {len(self.flux)}")
        if self.torque is not None and len(self.torque) != m:
            raise ModelError("torque", f"expected {m} surfaces, got {len(self.torque)}")

        wp, ep, mp = self.winding_perm, self.element_perm, self.mesh_perm
        if not np.array_equal(M, M[np.ix_(mp, ep)]):
            raise ModelError("mesh_matrix", "not invariant under the mesh/element phase permutation")
        if not np.allclose(C, C[np.ix_(mp, wp)], rtol=1e-12, atol=0):
            raise ModelError("geometry_matrix", "not invariant under the mesh/winding phase permutation")
        if not np.allclose(R, R[np.ix_(wp, wp)], rtol=1e-12, atol=0):
            raise ModelError("resistance", "not invariant under the winding phase permutation")

        theta0 = self.flux[0].theta_grid
        for name, surfaces in (("flux", self.flux), ("torque", self.torque or ())):
            for k, s in enumerate(surfaces):
                path = f"{name}[{k}]"
                if s.theta_grid.shape != theta0.shape or np.max(np.abs(s.theta_grid - theta0)) > 1e-12:
                    raise ModelError(f"{path}.theta_grid", "all surfaces must share one theta grid")
                if abs(s.theta_grid[0]) > 1e-12 or abs(s.theta_grid[-1] - self.span) > 1e-9:
                    raise ModelError(
                        f"{path}.theta_grid",
                        f"must span [0, 2*pi/(K*Np)] = [0, {self.span:.12g}]",
                    )
                if s.theta_grid.size >= 2:
                    s.theta_step  # uniformity
        for k, s in enumerate(self.flux):
            path = f"flux[{k}]"
            d = np.diff(s.values, axis=0)
            if np.any(d <= 0):
                i, j = np.argwhere(d <= 0)[0]
                raise ModelError(
                    f"{path}.values[{i + 1}][{j}]",
                    "flux must be strictly increasing in MMF",
                )
            if not self.remanent:
                z = np.flatnonzero(np.abs(s.mmf_grid) <= 1e-12)
                if z.size and np.max(np.abs(s.values[z[0]])) > 1e-12:
                    raise ModelError(f"{path}.values[{z[0]}]", "flux at zero MMF must be zero (no remanence)")
        for k, issue in periodicity_issues(self):
            raise ModelError(f"flux[{k}]", issue)


def _cyclic_or_id(n: int, phases: int) -> tuple[int, ...]:
    # cyclic shift when the dimension carries one item per phase
    return _cyclic(n) if n == phases else tuple(range(n))


def periodicity_issues(model: MotorModel, rtol: float = 1e-9) -> list[tuple[int, str]]:
    """Check f_k(F, span) == f_{perm[k]}(F, 0) for every element."""
    out = []
    for k, s in enumerate(model.flux):
        other = model.flux[model.element_perm[k]]
        if other.mmf_grid.shape != s.mmf_grid.shape or np.any(other.mmf_grid != s.mmf_grid):
            out.append((k, "phase-linked elements must share an MMF grid"))
            continue
        end, start = s.values[:, -1], other.values[:, 0]
        scale = max(np.max(np.abs(end)), 1e-300)
        if np.max(np.abs(end - start)) > rtol * scale:
            out.append((k, f"value at theta=span differs from element {model.element_perm[k]} at theta=0"))
    return out


def inverse_perm(p: Sequence[int]) -> tuple[int, ...]:
    inv = [0] * len(p)
    for i, v in enumerate(p):
        inv[v] = i
    return tuple(inv)


def _coenergy(s: SampledSurface) -> np.ndarray:
    """Integral of f from 0 to each MMF sample, trapezoid rule."""
    F, f = s.mmf_grid, s.values
    cum = np.zeros_like(f)
    cum[1:] = np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(F)[:, None], axis=0)
    if F[0] > 0 or F[-1] < 0:
        raise ModelError("mmf_grid", "must contain F = 0 for the co-energy integral")
    # shift the origin of integration to F = 0
    i = int(np.searchsorted(F, 0.0, side="right") - 1)
    i = min(i, F.size - 2)
    w = (0.0 - F[i]) / (F[i + 1] - F[i])
    at0 = cum[i] + w * (F[i + 1] - F[i]) * (f[i] + 0.5 * w * (f[i + 1] - f[i]))
    return cum - at0


def derive_phase_torque(model: MotorModel, element: int) -> SampledSurface:
    """g_k(y, theta) = -d/dtheta of the co-energy integral of f_k.

    Central difference in theta; the two ghost columns come from the
    phase-linked elements so the stencil wraps across the reduced interval.
    """
    s = model.flux[element]
    if s.theta_grid.size < 3:
        raise ModelError(f"flux[{element}].theta_grid", "need at least 3 theta samples")
    h = s.theta_step
    nxt = model.element_perm[element]
    prv = inverse_perm(model.element_perm)[element]
    co = _coenergy(s)
    ghost_next = _coenergy(model.flux[nxt])[:, 1]
    ghost_prev = _coenergy(model.flux[prv])[:, -2]
    ext = np.column_stack([ghost_prev, co, ghost_next])
    g = -(ext[:, 2:] - ext[:, :-2]) / (2.0 * h)
    return SampledSurface(s.mmf_grid, s.theta_grid, g)


def with_derived_torque(model: MotorModel) -> MotorModel:
    torque = tuple(derive_phase_torque(model, k) for k in range(model.m_elements))
    return replace(model, torque=torque)


def phase_torque(model: MotorModel) -> tuple[SampledSurface, ...]:
    if model.torque is not None:
        return model.torque
    return tuple(derive_phase_torque(model, k) for k in range(model.m_elements))


class AffineReduction(NamedTuple):
    inductance: np.ndarray
    theta: np.ndarray
    back_emf_samples: np.ndarray  # (len(theta), n)
    back_emf: Callable[[float], np.ndarray]


def affine_parameters(model: MotorModel, rtol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Slopes A (m,) and offsets b(theta) (len(theta), m) of an affine characteristic."""
    slopes, offsets = [], []
    for k, s in enumerate(model.flux):
        F = s.mmf_grid
        X = np.column_stack([F, np.ones_like(F)])
        coef, *_ = np.linalg.lstsq(X, s.values, rcond=None)
        resid = s.values - X @ coef
        scale = max(np.max(np.abs(s.values)), 1e-300)
        if np.max(np.abs(resid)) > rtol * scale:
            raise ModelError(f"flux[{k}]", f"characteristic of element {k} is not affine in MMF")
        a = coef[0]
        if np.ptp(a) > rtol * max(np.max(np.abs(a)), 1e-300):
            raise ModelError(f"flux[{k}]", f"slope of element {k} depends on theta")
        if a.mean() <= 0:
            raise ModelError(f"flux[{k}]", f"slope of element {k} is not positive")
        slopes.append(a.mean())
        offsets.append(coef[1])
    return np.array(slopes), np.column_stack(offsets)


def affine_reduction(model: MotorModel) -> AffineReduction:
    """Inductance matrix and back-emf term for a characteristic psi = A F + b(theta)."""
    A, b = affine_parameters(model)
    M, C = model.mesh_matrix, model.geometry_matrix
    Ainv = np.diag(1.0 / A)
    S = np.linalg.inv(M @ Ainv @ M.T)
    L = C.T @ S @ C
    L = 0.5 * (L + L.T)
    K = C.T @ S @ M @ Ainv  # n x m
    k_samples = b @ K.T
    theta = model.theta_grid.copy()

    def back_emf(th: float) -> np.ndarray:
        if th < theta[0] - 1e-12 or th > theta[-1] + 1e-12:
            raise ValueError(f"theta={th} outside the sampled interval")
        return np.array([np.interp(th, theta, k_samples[:, i]) for i in range(k_samples.shape[1])])

    return AffineReduction(L, theta, k_samples, back_emf)


# ---------------------------------------------------------------------------
# Synthetic saturating characteristic used by the example motor.
#
#   f(F, theta) = psi_sat(theta) * (1 - exp(-F / F_c(theta)))
#   psi_sat(theta) = psi_mean + psi_swing * cos(Np * theta)
#   F_c(theta)     = fc_mean  - fc_swing  * cos(Np * theta)
#
# Element k is element 0 advanced by k reduced intervals, so theta = 0 is the
# aligned position of element 0. With the defaults the aligned knee sits near
# 800 At (visible saturation above ~2000 At) and the unaligned curve stays
# almost linear up to 6000 At.
SATURATING_DEFAULTS = {
    "psi_mean": 0.011,  # Wb
    "psi_swing": 0.007,  # Wb
    "fc_mean": 1600.0,  # At
    "fc_swing": 800.0,  # At
}


def saturating_flux(F, theta, pole_pairs: int, psi_mean, psi_swing, fc_mean, fc_swing, phase=0.0):
    c = np.cos(pole_pairs * np.asarray(theta) - phase)
    psi_sat = psi_mean + psi_swing * c
    fc = fc_mean - fc_swing * c
    return psi_sat * -np.expm1(-np.asarray(F) / fc)


def saturating_surfaces(
    m: int,
    pole_pairs: int,
    phase_count: int,
    mmf_grid,
    n_theta: int,
    params: dict | None = None,
) -> tuple[SampledSurface, ...]:
    p = dict(SATURATING_DEFAULTS, **(params or {}))
    span = 2 * math.pi / (phase_count * pole_pairs)
    theta = np.linspace(0.0, span, n_theta + 1)
    F = np.asarray(mmf_grid, dtype=float)
    out = []
    for k in range(m):
        vals = saturating_flux(F[:, None], theta[None, :] + k * span, pole_pairs, **p)
        out.append(SampledSurface(F, theta, vals))
    return tuple(out)


def affine_surfaces(m: int, pole_pairs: int, phase_count: int, mmf_grid, n_theta: int, slope: float,
                    offset: float, swing: float, phase: float = 0.0) -> tuple[SampledSurface, ...]:
    """psi = slope * F + offset + swing * cos(Np*theta - phase), element k advanced by k intervals."""
    span = 2 * math.pi / (phase_count * pole_pairs)
    theta = np.linspace(0.0, span, n_theta + 1)
    F = np.asarray(mmf_grid, dtype=float)
    out = []
    for k in range(m):
        b = offset + swing * np.cos(pole_pairs * (theta + k * span) - phase)
        out.append(SampledSurface(F, theta, slope * F[:, None] + b[None, :]))
    return tuple(out)


def mmf_samples(mmf_max: float, mmf_step: float) -> np.ndarray:
    return np.linspace(0.0, mmf_max, int(round(mmf_max / mmf_step)) + 1)


EXAMPLE_TURNS = 204


def example_motor(
    mmf_step: float = 5.0,
    mmf_max: float = 6000.0,
    n_theta: int = 120,
    i_max: float | None = None,
    params: dict | None = None,
) -> MotorModel:
    """Three-phase fully pitched SRM (m = n = l = 3, Np = 2, K = 3).

    Circuit matrices and limits are those of the reference design; the flux surface
    is the synthetic saturating characteristic above, sampled every
    ``mmf_step`` ampere-turns and at ``n_theta`` intervals of the reduced
    interval [0, pi/3].
    """
    M = np.array([[0, 1, 1], [1, 0, 1], [1, 1, 0]], dtype=float)
    R = 0.1 * np.eye(3)
    C = 0.5 * EXAMPLE_TURNS * np.eye(3)
    F = mmf_samples(mmf_max, mmf_step)
    flux = saturating_surfaces(3, 2, 3, F, n_theta, params)
    model = MotorModel(
        resistance=R,
        mesh_matrix=M,
        geometry_matrix=C,
        v_max=600.0,
        pole_pairs=2,
        phase_count=3,
        flux=flux,
        i_max=i_max,
        name="fully-pitched-srm-example",
        notes={"flux": {"kind": "saturating", "mmf_max": mmf_max, "mmf_step": mmf_step, "n_theta": n_theta,
                        "params": dict(SATURATING_DEFAULTS, **(params or {}))}},
    )
    return with_derived_torque(model)


def toy_motor(
    phase: float = 0.7,
    resistance: float = 0.5,
    turns: float = 20.0,
    v_max: float = 60.0,
    pole_pairs: int = 1,
    mmf_max: float = 2000.0,
    mmf_step: float = 10.0,
    n_theta: int = 8,
    params: dict | None = None,
    i_max: float | None = None,
) -> MotorModel:
    """One winding on one saturating element (m = n = l = 1, K = 1).

    ``phase`` shifts the aligned position so a coarse grid does not land on
    the zero-torque angles only.
    """
    F = mmf_samples(mmf_max, mmf_step)
    params = dict({"phase": phase}, **(params or {}))
    flux = saturating_surfaces(1, pole_pairs, 1, F, n_theta, params)
    model = MotorModel(
        resistance=np.array([[resistance]]),
        mesh_matrix=np.array([[1.0]]),
        geometry_matrix=np.array([[turns]]),
        v_max=v_max,
        pole_pairs=pole_pairs,
        phase_count=1,
        flux=flux,
        i_max=i_max,
        name="toy",
        notes={"flux": {"kind": "saturating", "mmf_max": mmf_max, "mmf_step": mmf_step, "n_theta": n_theta,
                        "params": dict(SATURATING_DEFAULTS, **params)}},
    )
    return with_derived_torque(model)
