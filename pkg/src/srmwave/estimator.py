"""Lookup-table builder with the scikit-learn estimator interface.

``X`` holds operating points, one row ``(speed_rpm, torque_Nm)`` per sample.
``fit`` solves every row, ``partial_fit`` adds rows to the existing table and
``predict`` returns the phase-current waveform of the nearest solved point.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import bnb
from .lut import RPM, default_breakpoints, solve_point
from .motor import MotorModel
from .pwa import fit_model
from .transcription import Grid


class WaveformOptimizer(BaseEstimator):
    """Optimal current waveforms over a set of (speed, torque) points.

    Parameters
    ----------
    model : MotorModel
    alpha : float
        Ripple weight in the objective (loss + alpha * ripple).
    T : int
        Grid points per reduced rotor interval.
    breakpoints : sequence of float, optional
        PWA breakpoints in ampere-turns; the model's default when None.
    gap_tol, time_limit : float
        Branch-and-bound stopping rules per point.
    perspective : bool
        Use perspective cuts.

    Attributes
    ----------
    points_ : ndarray (n_points, 2)
        Solved operating points (rpm, N m).
    status_, objective_, gap_ : ndarray
        Per point solver status, objective (W) and relative gap.
    currents_ : list of ndarray (T, n) or None
        Reduced-interval phase currents per point (None when infeasible).
    """

    def __init__(self, model: MotorModel | None = None, alpha=3.0, T=20, breakpoints=None, gap_tol=1e-3,
                 time_limit=60.0, perspective=True):
        self.model = model
        self.alpha = alpha
        self.T = T
        self.breakpoints = breakpoints
        self.gap_tol = gap_tol
        self.time_limit = time_limit
        self.perspective = perspective

    def _solve_rows(self, X):
        cfg = bnb.BnbConfig(gap_tol=self.gap_tol, time_limit=self.time_limit, perspective_on=self.perspective,
                            log_every=10 ** 9)
        status, obj, gap, cur = [], [], [], []
        for rpm, tq in X:
            _, res = solve_point(self.model, rpm * RPM, tq, self.alpha, self.T, config=cfg, pwa=self.pwa_)
            status.append(res.status)
            obj.append(res.upper_bound)
            gap.append(res.gap)
            cur.append(None if res.incumbent is None else res.incumbent.i.copy())
        return status, obj, gap, cur

    def _reset(self):
        bp = self.breakpoints if self.breakpoints is not None else default_breakpoints(self.model)
        self.pwa_ = fit_model(self.model, Grid.for_model(self.model, self.T).theta, bp)
        self.points_ = np.empty((0, 2))
        self.status_ = np.empty(0, dtype=object)
        self.objective_ = np.empty(0)
        self.gap_ = np.empty(0)
        self.currents_ = []

    def fit(self, X, y=None):
        """Solve every operating point in ``X`` (rows: rpm, N m)."""
        if self.model is None:
            raise ValueError("WaveformOptimizer needs a model")
        self._reset()
        return self.partial_fit(X)

    def partial_fit(self, X, y=None):
        """Solve the points of ``X`` not yet in the table and append them."""
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ValueError(f"X needs 2 columns (rpm, torque), got {X.shape[1]}")
        if not hasattr(self, "points_"):
            if self.model is None:
                raise ValueError("WaveformOptimizer needs a model")
            self._reset()
        known = {tuple(p) for p in self.points_.tolist()}
        new = np.array([r for r in np.unique(X, axis=0) if tuple(r.tolist()) not in known]).reshape(-1, 2)
        if new.shape[0]:
            st, ob, gp, cu = self._solve_rows(new)
            self.points_ = np.vstack([self.points_, new])
            self.status_ = np.concatenate([self.status_, np.array(st, dtype=object)])
            self.objective_ = np.concatenate([self.objective_, ob])
            self.gap_ = np.concatenate([self.gap_, gp])
            self.currents_ += cu
        self.n_features_in_ = 2
        return self

    def _nearest(self, X):
        check_is_fitted(self, "points_")
        X = check_array(X, dtype=float)
        ok = np.flatnonzero(np.array([c is not None for c in self.currents_], dtype=bool))
        if ok.size == 0:
            raise ValueError("no feasible operating point in the table")
        # distances in units of the table's spread along each axis
        scale = np.ptp(self.points_[ok], axis=0)
        scale[scale == 0] = 1.0
        d = np.linalg.norm((X[:, None, :] - self.points_[ok][None]) / scale, axis=2)
        return ok[np.argmin(d, axis=1)]

    def predict(self, X):
        """Flattened reduced-interval currents (T*n per row) of the nearest feasible point."""
        return np.array([self.currents_[j].ravel() for j in self._nearest(X)])

    def predict_objective(self, X):
        return self.objective_[self._nearest(X)]
