import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from charmode.mma import MMA, MmaSettings


def run(mma, x, f, g, iters=200, tol=1e-7):
    for _ in range(iters):
        f0, df0, fv, dfv = f(x), g(x), None, None
        if isinstance(f0, tuple):
            f0, fv = f0
            df0, dfv = df0
        xn = mma.update(x, f0, df0, fv, dfv)
        if np.abs(xn - x).max() < tol:
            return xn
        x = xn
    return x


def test_constrained_quadratic():
    # min x1^2 + x2^2  s.t.  1 - x1 - x2 <= 0  ->  (0.5, 0.5)
    mma = MMA(2, 1, 0.0, 1.0)
    f = lambda x: (x @ x, np.array([1 - x.sum()]))
    g = lambda x: (2 * x, np.array([[-1.0, -1.0]]))
    x = run(mma, np.array([0.9, 0.1]), f, g)
    assert np.allclose(x, [0.5, 0.5], atol=1e-4)


def test_unconstrained_interior_optimum():
    c = np.array([0.2, 0.65, 0.4])
    mma = MMA(3, 0, 0.0, 1.0)
    x = run(mma, np.full(3, 0.9), lambda x: float(np.sum((x - c) ** 2)), lambda x: 2 * (x - c),
            iters=400, tol=1e-6)
    assert np.allclose(x, c, atol=1e-3)


def test_linear_objective_goes_to_bounds():
    mma = MMA(4, 0, 0.0, 1.0)
    w = np.array([1.0, -2.0, 0.5, -0.1])
    x = run(mma, np.full(4, 0.5), lambda x: float(w @ x), lambda x: w)
    assert np.allclose(x, [0, 1, 0, 1], atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=5, max_size=5), st.floats(0.01, 0.5))
def test_step_respects_bounds_and_move_limit(grad, move):
    mma = MMA(5, 0, 0.0, 1.0, settings=MmaSettings(move=move))
    x = np.full(5, 0.5)
    xn = mma.update(x, 1.0, np.array(grad))
    assert np.all(xn >= 0) and np.all(xn <= 1)
    assert np.all(np.abs(xn - x) <= move + 1e-12)


def test_minmax_bound_formulation():
    # min max(f1, f2) with f1 = (x-0.2)^2, f2 = (x-0.8)^2 via an auxiliary z -> x = 0.5
    mma = MMA(2, 2, [0, 0], [1, 1])
    def f(v):
        x, z = v
        return z, np.array([(x - 0.2) ** 2 - z, (x - 0.8) ** 2 - z])
    def g(v):
        x, _ = v
        return np.array([0.0, 1.0]), np.array([[2 * (x - 0.2), -1.0], [2 * (x - 0.8), -1.0]])
    v = run(mma, np.array([0.3, 0.5]), f, g, iters=300)
    assert abs(v[0] - 0.5) < 1e-3 and abs(v[1] - 0.09) < 1e-3


def test_bad_bounds():
    with pytest.raises(ValueError):
        MMA(2, 0, 1.0, 0.0)
