"""Continuous piecewise-affine fits of the flux and phase-torque characteristics.

Breakpoints are shared by every element and angle. Each (element, angle) pair
is fitted independently with :class:`PiecewiseAffineRegressor`, an ordinary
scikit-learn regressor, so the same fitter can be used on raw measurements.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array

from .motor import MotorModel, SampledSurface, phase_torque


class PwaError(ValueError):
    pass


class PwaDomainError(PwaError):
    pass


def _check_breakpoints(breakpoints) -> np.ndarray:
    bp = np.asarray(breakpoints, dtype=float)
    if bp.ndim != 1 or bp.size < 2:
        raise PwaError("need at least two breakpoints")
    if np.any(np.diff(bp) <= 0):
        raise PwaError("breakpoints must be strictly ascending")
    return bp


def _hinge_basis(F: np.ndarray, bp: np.ndarray) -> np.ndarray:
    scale = bp[-1] - bp[0]
    cols = [(F - bp[0]) / scale]
    cols += [np.maximum(F - b, 0.0) / scale for b in bp[1:-1]]
    return np.column_stack(cols)


class PiecewiseAffineRegressor(RegressorMixin, BaseEstimator):
    """Continuous piecewise-affine least-squares fit on fixed breakpoints.

    Parameters
    ----------
    breakpoints : array-like of shape (N + 1,)
        Region boundaries, strictly ascending. Samples outside
        ``[breakpoints[0], breakpoints[-1]]`` are ignored.
    anchor_first : bool, default False
        Pin the fitted value at ``breakpoints[0]`` to the sample located there
        (one must exist). Used to keep ``f(0) = 0`` exact for SRM data.

    Attributes
    ----------
    slopes_, intercepts_ : ndarray of shape (N,)
        Region ``j`` is ``slopes_[j] * x + intercepts_[j]``.
    residual_ : float
        Sum of squared residuals over the samples used.
    max_abs_error_ : float
    """

    def __init__(self, breakpoints=(0.0, 1.0), anchor_first=False):
        self.breakpoints = breakpoints
        self.anchor_first = anchor_first

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_2d=False, y_numeric=True)
        F = np.asarray(X, dtype=float).reshape(len(y), -1)[:, 0]
        bp = _check_breakpoints(self.breakpoints)
        inside = (F >= bp[0]) & (F <= bp[-1])
        F, y = F[inside], y[inside]
        for j in range(bp.size - 1):
            cnt = np.count_nonzero((F >= bp[j]) & (F <= bp[j + 1]))
            if cnt < 2:
                raise PwaError(f"region {j} [{bp[j]}, {bp[j + 1]}] has {cnt} samples, need >= 2")

        B = _hinge_basis(F, bp)
        if self.anchor_first:
            at = np.flatnonzero(F == bp[0])
            if at.size == 0:
                raise PwaError("anchor_first needs a sample at the first breakpoint")
            y0 = float(y[at[0]])
            beta, *_ = np.linalg.lstsq(B, y - y0, rcond=None)
        else:
            B = np.column_stack([np.ones_like(F), B])
            sol, *_ = np.linalg.lstsq(B, y, rcond=None)
            y0, beta = float(sol[0]), sol[1:]

        scale = bp[-1] - bp[0]
        slopes = np.cumsum(beta) / scale
        # value at each region's left boundary, then intercept
        left = np.empty(bp.size - 1)
        left[0] = y0
        for j in range(1, bp.size - 1):
            left[j] = left[j - 1] + slopes[j - 1] * (bp[j] - bp[j - 1])
        self.slopes_ = slopes
        self.intercepts_ = left - slopes * bp[:-1]
        self.breakpoints_ = bp
        pred = self._eval(F)
        self.residual_ = float(np.sum((pred - y) ** 2))
        self.max_abs_error_ = float(np.max(np.abs(pred - y))) if y.size else 0.0
        self.n_samples_ = int(y.size)
        return self

    def _eval(self, F):
        j = np.clip(np.searchsorted(self.breakpoints_, F, side="right") - 1, 0, self.slopes_.size - 1)
        return self.slopes_[j] * F + self.intercepts_[j]

    def predict(self, X):
        check_is_fitted(self, "slopes_")
        X = check_array(X, ensure_2d=False)
        F = np.asarray(X, dtype=float).reshape(X.shape[0], -1)[:, 0]
        bp = self.breakpoints_
        if np.any(F < bp[0]) or np.any(F > bp[-1]):
            raise PwaDomainError("input outside the breakpoint range")
        return self._eval(F)


@dataclass(frozen=True, eq=False)
class PwaCharacteristic:
    """Per element ``k`` and grid angle ``t``: region ``j`` is
    ``a[k, t, j] * F + b[k, t, j]`` (flux, Wb) and ``c*F + d`` (torque, N m)."""

    breakpoints: np.ndarray
    theta: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    f_residual: np.ndarray | None = None
    g_residual: np.ndarray | None = None
    f_max_error: np.ndarray | None = None
    g_max_error: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("breakpoints", "theta", "a", "b", "c", "d"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        bp = _check_breakpoints(self.breakpoints)
        shape = self.a.shape
        if len(shape) != 3 or shape[2] != bp.size - 1 or shape[1] != self.theta.size:
            raise PwaError(f"coefficient shape {shape} inconsistent with breakpoints/theta")
        for name in ("b", "c", "d"):
            if getattr(self, name).shape != shape:
                raise PwaError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def m_elements(self) -> int:
        return self.a.shape[0]

    @property
    def n_regions(self) -> int:
        return self.a.shape[2]

    @property
    def n_angles(self) -> int:
        return self.theta.size

    def region(self, F: float) -> int:
        bp = self.breakpoints
        if not bp[0] <= F <= bp[-1]:
            raise PwaDomainError(f"F={F} outside [{bp[0]}, {bp[-1]}]")
        return int(min(np.searchsorted(bp, F, side="right") - 1, self.n_regions - 1))

    def continuity_error(self) -> float:
        """Largest jump (relative) at an interior breakpoint over both families."""
        bp = self.breakpoints[1:-1]
        worst = 0.0
        for s, i in ((self.a, self.b), (self.c, self.d)):
            left = s[:, :, :-1] * bp + i[:, :, :-1]
            right = s[:, :, 1:] * bp + i[:, :, 1:]
            scale = max(np.max(np.abs(left)), 1e-300)
            worst = max(worst, float(np.max(np.abs(left - right), initial=0.0)) / scale)
        return worst

    def to_dict(self) -> dict:
        return {
            "breakpoints": self.breakpoints.tolist(),
            "theta": self.theta.tolist(),
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "c": self.c.tolist(),
            "d": self.d.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PwaCharacteristic":
        return cls(**{k: np.asarray(data[k], dtype=float) for k in ("breakpoints", "theta", "a", "b", "c", "d")})


def eval_f(pwa: PwaCharacteristic, k: int, t: int, F: float) -> float:
    j = pwa.region(F)
    return float(pwa.a[k, t, j] * F + pwa.b[k, t, j])


def eval_g(pwa: PwaCharacteristic, k: int, t: int, F: float) -> float:
    j = pwa.region(F)
    return float(pwa.c[k, t, j] * F + pwa.d[k, t, j])


def fit(
    flux: SampledSurface | Sequence[SampledSurface],
    torque: SampledSurface | Sequence[SampledSurface],
    breakpoints,
    theta=None,
    anchor_origin: bool = True,
) -> PwaCharacteristic:
    """Fit f and g for every element at every angle in ``theta``.

    ``theta`` defaults to the surfaces' own theta grid; otherwise every angle
    must be a sample of that grid. With ``anchor_origin`` the fit passes
    exactly through the sample at the first breakpoint.
    """
    if isinstance(flux, SampledSurface):
        flux = [flux]
    if isinstance(torque, SampledSurface):
        torque = [torque]
    if len(flux) != len(torque):
        raise PwaError("flux and torque need one surface per element")
    bp = _check_breakpoints(breakpoints)
    theta = flux[0].theta_grid if theta is None else np.asarray(theta, dtype=float)
    m, T, N = len(flux), theta.size, bp.size - 1
    a, b, c, d = (np.empty((m, T, N)) for _ in range(4))
    fres, gres, ferr, gerr = (np.empty((m, T)) for _ in range(4))
    for k in range(m):
        sf, sg = flux[k], torque[k]
        anchor = anchor_origin and np.any(sf.mmf_grid == bp[0])
        for t, th in enumerate(theta):
            rf = PiecewiseAffineRegressor(bp, anchor).fit(sf.mmf_grid, sf.column(th))
            rg = PiecewiseAffineRegressor(bp, anchor and np.any(sg.mmf_grid == bp[0])).fit(
                sg.mmf_grid, sg.column(th)
            )
            bad = np.flatnonzero(rf.slopes_ <= 0)
            if bad.size:
                raise PwaError(f"non-positive flux slope at element {k}, region {bad[0]}, angle index {t}")
            a[k, t], b[k, t] = rf.slopes_, rf.intercepts_
            c[k, t], d[k, t] = rg.slopes_, rg.intercepts_
            fres[k, t], gres[k, t] = rf.residual_, rg.residual_
            ferr[k, t], gerr[k, t] = rf.max_abs_error_, rg.max_abs_error_
    return PwaCharacteristic(bp, theta, a, b, c, d, fres, gres, ferr, gerr)


def fit_model(model: MotorModel, theta, breakpoints, anchor_origin: bool = True) -> PwaCharacteristic:
    return fit(model.flux, phase_torque(model), breakpoints, theta, anchor_origin=anchor_origin)


def implied_torque_mismatch(pwa: PwaCharacteristic, samples: int = 65) -> float:
    """Max |g_fit - g implied by f_fit| over interior grid angles.

    The implied torque is the negative central-difference theta derivative of
    the co-energy of the fitted flux curve.
    """
    if pwa.n_angles < 3:
        return 0.0
    bp = pwa.breakpoints
    F = np.linspace(bp[0], bp[-1], samples)
    j = np.clip(np.searchsorted(bp, F, side="right") - 1, 0, pwa.n_regions - 1)
    h = float(np.mean(np.diff(pwa.theta)))
    worst = 0.0
    for k in range(pwa.m_elements):
        vals = pwa.a[k][:, j] * F + pwa.b[k][:, j]  # (T, samples)
        co = np.zeros_like(vals)
        co[:, 1:] = np.cumsum(0.5 * (vals[:, 1:] + vals[:, :-1]) * np.diff(F), axis=1)
        i0 = int(np.argmin(np.abs(F)))
        co -= co[:, [i0]]
        implied = -(co[2:] - co[:-2]) / (2 * h)
        fitted = pwa.c[k][1:-1][:, j] * F + pwa.d[k][1:-1][:, j]
        worst = max(worst, float(np.max(np.abs(implied - fitted))))
    return worst


def export_curves_csv(pwa: PwaCharacteristic, path, samples_per_region: int = 20) -> None:
    """Write tidy (element, angle, F, f~, g~) rows for plotting."""
    bp = pwa.breakpoints
    F = np.unique(np.concatenate([np.linspace(bp[j], bp[j + 1], samples_per_region + 1) for j in range(bp.size - 1)]))
    j = np.clip(np.searchsorted(bp, F, side="right") - 1, 0, pwa.n_regions - 1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        fh.write("# srmwave-pwa-curves v1\n")
        w.writerow(["element", "t", "theta[rad]", "F[At]", "f_pwa[Wb]", "g_pwa[N*m]"])
        for k in range(pwa.m_elements):
            for t, th in enumerate(pwa.theta):
                fv = pwa.a[k, t, j] * F + pwa.b[k, t, j]
                gv = pwa.c[k, t, j] * F + pwa.d[k, t, j]
                for x, y, z in zip(F, fv, gv):
                    w.writerow([k, t, repr(float(th)), repr(float(x)), repr(float(y)), repr(float(z))])
