import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from piic.criteria import waic
from piic.hyperopt import ObjectiveError, XiSearchSpace, minimize_criterion
from piic.inference import conjugate_posterior
from piic.models import LikelihoodModel, PriorSpec

from conftest import make_linear


def test_quadratic_minimum():
    res = minimize_criterion(lambda xi: (xi[0] - 2.0) ** 2, XiSearchSpace())
    assert res.xi_hat[0] == pytest.approx(2.0, abs=1e-3)
    assert res.value <= min(v for _, v in res.trace)


def test_grid_only_is_exhaustive_scan():
    space = XiSearchSpace(q=2, grid_points=9, simplex_budget=0, log_lo=(-2, -1), log_hi=(2, 3))
    f = lambda xi: math.sin(3 * math.log(xi[0])) + math.cos(math.log(xi[1])) * 0.7
    res = minimize_criterion(f, space)
    pts = [10.0 ** np.array(u) for u in itertools.product(*space.axes())]
    vals = [f(p) for p in pts]
    best = int(np.argmin(vals))
    np.testing.assert_array_equal(res.xi_hat, pts[best])
    assert res.value == vals[best]
    assert res.n_evals == 81


def test_grid_ties_go_to_smallest_point():
    res = minimize_criterion(lambda xi: 1.0, XiSearchSpace(q=2, grid_points=4, simplex_budget=0))
    np.testing.assert_allclose(res.xi_hat, [1e-3, 1e-3])


def test_separable_objective_in_three_groups():
    f1 = lambda xi: (math.log(xi[0]) - 0.7) ** 2 + 0.25
    one = minimize_criterion(f1, XiSearchSpace())
    three = minimize_criterion(lambda xi: f1(xi[:1]), XiSearchSpace(q=3))
    assert three.value == pytest.approx(one.value, abs=1e-2)
    assert three.xi_hat[0] == pytest.approx(one.xi_hat[0], rel=1e-2)
    assert np.all((three.xi_hat >= 1e-3) & (three.xi_hat <= 1e3))


def test_nested_class_never_worse_on_waic():
    d = make_linear(3, n=15, p=6, theta=[1.5, 1.5, 0.0, 0.0, 0.3, -0.2])
    m = LikelihoodModel.linear_gaussian(1.0)
    f = lambda prior: waic(conjugate_posterior(m, prior, d), d)
    one = minimize_criterion(lambda xi: f(PriorSpec.shared("normal", 6, xi[0], 15)),
                             XiSearchSpace(grid_points=9))
    three = minimize_criterion(lambda xi: f(PriorSpec.blocks("normal", 6, tuple(xi), 15)),
                               XiSearchSpace(q=3, grid_points=9), initial_points=[one.xi_hat])
    assert three.value <= one.value


def test_repeatable():
    f = lambda xi: (math.log10(xi[0]) - 0.3) ** 2 + (math.log10(xi[1]) + 1) ** 4
    a = minimize_criterion(f, XiSearchSpace(q=2))
    b = minimize_criterion(f, XiSearchSpace(q=2))
    np.testing.assert_array_equal(a.xi_hat, b.xi_hat)
    assert a.value == b.value


@settings(max_examples=30, deadline=None)
@given(st.floats(-2.5, 2.5), st.floats(0.1, 5.0))
def test_returned_value_is_trace_minimum(centre, curv):
    res = minimize_criterion(lambda xi: curv * (math.log10(xi[0]) - centre) ** 2 + math.sin(xi[0]),
                             XiSearchSpace(grid_points=7, simplex_budget=40))
    assert res.value == min(v for _, v in res.trace)
    assert 1e-3 <= res.xi_hat[0] <= 1e3


def test_failures():
    with pytest.raises(ObjectiveError, match="non-finite") as err:
        minimize_criterion(lambda xi: float("nan"), XiSearchSpace(grid_points=3))
    assert err.value.xi is None

    def boom(xi):
        if xi[0] > 1:
            raise ValueError("bad xi")
        return 1.0

    with pytest.raises(ObjectiveError) as err:
        minimize_criterion(boom, XiSearchSpace(grid_points=5))
    assert err.value.xi[0] > 1 and isinstance(err.value.cause, ValueError)
    res = minimize_criterion(lambda xi: math.inf if xi[0] < 1 else xi[0], XiSearchSpace())
    assert res.xi_hat[0] == pytest.approx(1.0, rel=1e-3)


def test_space_validation():
    with pytest.raises(ValueError):
        XiSearchSpace(log_lo=(1.0,), log_hi=(1.0,))
    with pytest.raises(ValueError):
        XiSearchSpace(log_hi=(math.inf,))
    s = XiSearchSpace.from_dict(2, {"grid_points": 3, "log_lo": -1, "log_hi": 1, "other": 0})
    assert s.grid().shape == (9, 2) and s.log_lo == (-1.0, -1.0)
