"""Small convex subproblem solvers used by the alternating optimizers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from holoidet.errors import SolverError


def project_simplex(v: np.ndarray, total: float = 1.0) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, sum x = total}`` (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


@dataclass(frozen=True)
class MaxMinResult:
    x: np.ndarray
    value: float
    dual_value: float
    iterations: int


def _affine_values(lin: np.ndarray, offset: np.ndarray, x: np.ndarray) -> np.ndarray:
    return 2.0 * np.real(lin.conj() @ x) - offset


def maxmin_affine_ball(lin: np.ndarray, offset: np.ndarray, power: float, tol: float = 1e-6,
                       max_iter: int = 2000) -> MaxMinResult:
    """Maximise ``min_k 2 Re{l_k^H x} - c_k`` over ``|x|^2 <= power``.

    Solved through the dual ``min_{mu in simplex} 2 sqrt(P) |sum_k mu_k l_k| - c^T mu``
    by accelerated projected gradient with backtracking; the primal point is
    ``sqrt(P) s / |s|`` for ``s = sum_k mu_k l_k``. Stops when the duality gap
    falls below ``tol`` relative to the objective scale.
    """
    lin = np.atleast_2d(np.asarray(lin, dtype=complex))
    offset = np.asarray(offset, dtype=float)
    n_con = lin.shape[0]
    radius = np.sqrt(power)

    def primal_point(mu):
        s = mu @ lin
        norm = np.linalg.norm(s)
        return (radius * s / norm if norm > 0 else np.zeros(lin.shape[1], dtype=complex)), s, norm

    def dual(mu):
        _, s, norm = primal_point(mu)
        return 2.0 * radius * norm - offset @ mu

    def grad(mu):
        _, s, norm = primal_point(mu)
        if norm == 0:
            return -offset.copy()
        return 2.0 * radius * np.real(lin.conj() @ s) / norm - offset

    if n_con == 1:
        x, _, _ = primal_point(np.ones(1))
        val = float(_affine_values(lin, offset, x)[0])
        return MaxMinResult(x, val, val, 0)

    mu = np.full(n_con, 1.0 / n_con)
    y, mu_prev, t_acc = mu.copy(), mu.copy(), 1.0
    step = 1.0 / max(2.0 * radius * np.linalg.norm(lin, 2), 1e-300)
    best_x, best_val = None, -np.inf
    best_dual = np.inf
    scale = max(np.abs(offset).max(), 2.0 * radius * np.abs(lin).max(), 1e-300)
    it = 0
    for it in range(1, max_iter + 1):
        g = grad(y)
        f_y = dual(y)
        while True:
            cand = project_simplex(y - step * g)
            diff = cand - y
            if dual(cand) <= f_y + g @ diff + diff @ diff / (2.0 * step) + 1e-15 * scale:
                break
            step *= 0.5
            if step < 1e-30:
                break
        mu_prev, mu = mu, cand
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t_acc * t_acc)) / 2.0
        y = mu + (t_acc - 1.0) / t_next * (mu - mu_prev)
        t_acc = t_next
        d_mu = dual(mu)
        if d_mu > dual(mu_prev):
            # restart momentum when the dual goes up
            y, t_acc = mu.copy(), 1.0
        best_dual = min(best_dual, d_mu)
        x, _, _ = primal_point(mu)
        val = float(_affine_values(lin, offset, x).min())
        if val > best_val:
            best_x, best_val = x, val
        if best_dual - best_val <= tol * max(abs(best_dual), abs(best_val), 1e-300):
            break
        step *= 1.5
    if best_x is None or not np.isfinite(best_val):
        raise SolverError("max-min ball solver produced no finite iterate", {"mu": mu.tolist()})
    return MaxMinResult(best_x, best_val, float(best_dual), it)


def maxmin_affine_simplices(coef: np.ndarray, offset: np.ndarray, blocks: list[int]) -> tuple[np.ndarray, float]:
    """Maximise ``min_k coef[k] @ w - offset[k]`` with ``w`` on a product of simplices.

    ``blocks`` lists the size of each simplex block in order. Solved as a
    linear program with HiGHS.
    """
    coef = np.atleast_2d(np.asarray(coef, dtype=float))
    n_con, n_var = coef.shape
    if sum(blocks) != n_var:
        raise SolverError("block sizes do not cover the variable", {"blocks": blocks, "n_var": n_var})
    c = np.zeros(n_var + 1)
    c[-1] = -1.0
    a_ub = np.hstack([-coef, np.ones((n_con, 1))])
    b_ub = -np.asarray(offset, dtype=float)
    a_eq = np.zeros((len(blocks), n_var + 1))
    start = 0
    for i, size in enumerate(blocks):
        a_eq[i, start:start + size] = 1.0
        start += size
    bounds = [(0.0, None)] * n_var + [(None, None)]
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=np.ones(len(blocks)), bounds=bounds, method="highs")
    if res.status != 0:
        raise SolverError(f"simplex LP failed: {res.message}", {"coef": coef.tolist(), "offset": list(offset)})
    w = np.clip(res.x[:-1], 0.0, None)
    start = 0
    for size in blocks:
        w[start:start + size] /= w[start:start + size].sum()
        start += size
    return w, float((coef @ w - offset).min())
