import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from srmwave.estimator import WaveformOptimizer
from srmwave.lut import RPM

TOY_OPT = 21.98904204085767
TOY_RPM = 40.0 / RPM


def make(toy):
    return WaveformOptimizer(model=toy, alpha=2.0, T=4, breakpoints=(0.0, 700.0, 2000.0), gap_tol=1e-9)


def test_fit_predict(toy):
    est = make(toy).fit([[TOY_RPM, 1.5], [TOY_RPM, 0.5]])
    assert est.points_.shape == (2, 2)
    j = int(np.flatnonzero(est.points_[:, 1] == 1.5)[0])
    assert est.status_[j] == "optimal"
    assert est.objective_[j] == pytest.approx(TOY_OPT, rel=1e-8)
    pred = est.predict([[TOY_RPM + 1.0, 1.4]])
    assert pred.shape == (1, 4)
    assert np.array_equal(pred[0], est.currents_[j].ravel())
    assert est.predict_objective([[TOY_RPM, 1.6]])[0] == est.objective_[j]


def test_partial_fit_only_adds_new_points(toy):
    est = make(toy).fit([[TOY_RPM, 1.5]])
    first = est.objective_.copy()
    est.partial_fit([[TOY_RPM, 1.5], [TOY_RPM, 1.5], [TOY_RPM, 0.5]])
    assert est.points_.shape == (2, 2)
    assert est.objective_[0] == first[0]


def test_params_and_clone(toy):
    est = make(toy)
    assert est.get_params()["T"] == 4
    c = clone(est)
    assert c.get_params()["alpha"] == 2.0 and not hasattr(c, "points_")


def test_errors(toy):
    with pytest.raises(ValueError, match="model"):
        WaveformOptimizer().fit([[1.0, 1.0]])
    with pytest.raises(ValueError, match="2 columns"):
        make(toy).fit([[1.0, 1.0, 1.0]])
    with pytest.raises(NotFittedError):
        make(toy).predict([[1.0, 1.0]])
    est = make(toy).fit([[4000.0, 3.0]])
    assert est.status_[0] == "infeasible" and est.currents_ == [None]
    with pytest.raises(ValueError, match="no feasible"):
        est.predict([[1.0, 1.0]])
