import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from holoidet.errors import SolverError
from holoidet.solvers import maxmin_affine_ball, maxmin_affine_simplices, project_simplex


@given(st.integers(0, 10_000), st.integers(1, 8))
def test_project_simplex_is_the_euclidean_projection(seed, n):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) * 3
    p = project_simplex(v)
    assert p.min() >= 0 and p.sum() == pytest.approx(1.0)
    # optimality: no other simplex point is closer
    for _ in range(20):
        other = rng.dirichlet(np.ones(n))
        assert np.linalg.norm(v - p) <= np.linalg.norm(v - other) + 1e-12


def test_project_simplex_keeps_simplex_points():
    w = np.array([0.2, 0.5, 0.3])
    np.testing.assert_allclose(project_simplex(w), w, atol=1e-15)


def cvx_ball_oracle(lin, offset, power):
    x = cp.Variable(lin.shape[1], complex=True)
    t = cp.Variable()
    cons = [cp.sum_squares(x) <= power] + [2 * cp.real(lin[k].conj() @ x) - offset[k] >= t
                                           for k in range(lin.shape[0])]
    cp.Problem(cp.Maximize(t), cons).solve(solver=cp.CLARABEL)
    return t.value


@given(st.integers(0, 10_000))
def test_maxmin_ball_matches_conic_solver(seed):
    rng = np.random.default_rng(seed)
    k, n = rng.integers(1, 5), rng.integers(2, 7)
    lin = rng.standard_normal((k, n)) + 1j * rng.standard_normal((k, n))
    offset = rng.uniform(0, 2, k)
    res = maxmin_affine_ball(lin, offset, 2.0, tol=1e-9, max_iter=20_000)
    assert np.vdot(res.x, res.x).real <= 2.0 * (1 + 1e-12)
    oracle = cvx_ball_oracle(lin, offset, 2.0)
    assert res.value == pytest.approx(oracle, abs=1e-5 * max(1.0, abs(oracle)))
    assert res.value <= res.dual_value + 1e-9


def test_maxmin_simplices_matches_enumeration():
    coef = np.array([[1.0, 0.0, 2.0, 0.0], [0.0, 1.0, 0.0, 3.0]])
    w, val = maxmin_affine_simplices(coef, np.zeros(2), [2, 2])
    # vertices of the product of two 1-simplices
    best = max(min(coef @ np.r_[a, 1 - a, b, 1 - b]) for a in np.linspace(0, 1, 401) for b in np.linspace(0, 1, 401))
    assert val == pytest.approx(best, abs=1e-4)
    assert w[:2].sum() == pytest.approx(1.0) and w[2:].sum() == pytest.approx(1.0)


def test_maxmin_simplices_block_mismatch():
    with pytest.raises(SolverError):
        maxmin_affine_simplices(np.ones((1, 3)), np.zeros(1), [2, 2])
