"""Downlink information and energy transfer: metrics, EH curve and the FP optimizer.

Each receiver splits its RF power: a fraction ``rho`` goes to the harvester and
``1 - rho`` to the decoder. Precoders and splitting factors are chosen to
maximise the smallest harvested power subject to a per-receiver rate floor.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from holoidet.errors import InfeasibleError, InvalidArgumentError, SolverError

_REL_TOL = 1e-6
# decoder-share multiplier seen by the precoder step under a rate floor
DECODER_RELAX = 2.0


@dataclass(frozen=True)
class EhCurve:
    """Logistic RF-to-DC conversion; powers in watts."""

    xi: float = 274.0
    nu: float = 0.29
    e0: float = 0.064e-3
    em: float = 24e-3

    @property
    def _base(self) -> float:
        return float(np.exp(-self.xi * self.e0 + self.nu))


def gamma(curve: EhCurve, p):
    """Harvested DC power for RF input ``p`` (clamped at zero below activation)."""
    p = np.asarray(p, dtype=float)
    base = curve._base
    val = curve.em / base * ((1.0 + base) / (1.0 + np.exp(-curve.xi * p + curve.nu)) - 1.0)
    out = np.maximum(val, 0.0)
    return float(out) if out.ndim == 0 else out


def gamma_inverse(curve: EhCurve, p_dc):
    """RF power needed for DC output ``p_dc`` in ``[0, em)``."""
    p_dc = np.asarray(p_dc, dtype=float)
    if np.any(p_dc < 0) or np.any(p_dc >= curve.em):
        raise InvalidArgumentError("DC power must lie in [0, em)")
    base = curve._base
    ratio = p_dc / curve.em
    # (1 + base) / (1 + base * ratio) - 1, rearranged to avoid cancellation
    inner = base * (1.0 - ratio) / (1.0 + base * ratio)
    out = (curve.nu - np.log(inner)) / curve.xi
    return float(out) if out.ndim == 0 else out


def _flat(hbar: np.ndarray) -> np.ndarray:
    hbar = np.asarray(hbar, dtype=complex)
    return hbar.reshape(hbar.shape[0], -1)


def link_matrix(hbar: np.ndarray, precoders: np.ndarray) -> np.ndarray:
    """``G[k, j] = sum_b hbar[k, b] . X[j, b]``."""
    h = _flat(hbar)
    x = np.asarray(precoders, dtype=complex).reshape(h.shape[0], -1)
    return h @ x.T


def sinr(hbar, precoders, rho, noise_var: float, cov_var: float) -> np.ndarray:
    """Per-receiver SINR at the decoder branch; zero where ``rho == 1``."""
    g = np.abs(link_matrix(hbar, precoders)) ** 2
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (g.shape[0],))
    signal = np.diag(g)
    interference = g.sum(axis=1) - signal
    id_share = 1.0 - rho
    denom = id_share * interference + id_share * noise_var + cov_var
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(id_share > 0, id_share * signal / denom, 0.0)
    return out


def eh_rf_power(hbar, precoders, rho, noise_var: float) -> np.ndarray:
    """RF power at the harvester branch, ``rho (sum_j |G[k, j]|^2 + noise)``."""
    g = np.abs(link_matrix(hbar, precoders)) ** 2
    return np.asarray(rho, dtype=float) * (g.sum(axis=1) + noise_var)


@dataclass(frozen=True)
class IdetMetrics:
    sinr: np.ndarray
    rate: np.ndarray
    p_eh: np.ndarray
    p_dc: np.ndarray

    @property
    def min_dc(self) -> float:
        return float(self.p_dc.min())

    @property
    def min_rf(self) -> float:
        return float(self.p_eh.min())


def evaluate(hbar, precoders, rho, noise_var: float, cov_var: float, curve: EhCurve) -> IdetMetrics:
    s = sinr(hbar, precoders, rho, noise_var, cov_var)
    p = eh_rf_power(hbar, precoders, rho, noise_var)
    return IdetMetrics(s, np.log2(1.0 + s), p, np.asarray(gamma(curve, p), dtype=float).reshape(-1))


@dataclass
class IdetState:
    precoders: np.ndarray   # (K, B, Q) or (K, n) complex
    rho: np.ndarray         # (K,)
    vartheta: np.ndarray    # (K,) complex
    varsigma: np.ndarray    # (K, K) complex

    def to_dict(self) -> dict:
        return {
            "precoders_re": np.real(self.precoders).tolist(),
            "precoders_im": np.imag(self.precoders).tolist(),
            "rho": self.rho.tolist(),
        }


def optimal_vartheta(link: np.ndarray, rho: np.ndarray, noise_var: float, cov_var: float) -> np.ndarray:
    """Quadratic-transform auxiliary that makes the rate surrogate tight."""
    g2 = np.abs(link) ** 2
    signal = np.diag(link)
    interference = g2.sum(axis=1) - np.abs(signal) ** 2
    share = 1.0 - rho
    return np.sqrt(share) * signal / (share * (interference + noise_var) + cov_var)


def optimal_varsigma(link: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return np.sqrt(rho)[:, None] * link


def surrogate_sinr(link, rho, vartheta, noise_var, cov_var) -> np.ndarray:
    g2 = np.abs(link) ** 2
    signal = np.diag(link)
    interference = g2.sum(axis=1) - np.abs(signal) ** 2
    share = 1.0 - rho
    return (2.0 * np.sqrt(share) * np.real(vartheta.conj() * signal)
            - np.abs(vartheta) ** 2 * (share * (interference + noise_var) + cov_var))


def surrogate_eh(link, rho, varsigma, noise_var) -> np.ndarray:
    return (2.0 * np.sqrt(rho) * np.real(np.sum(varsigma.conj() * link, axis=1))
            - np.sum(np.abs(varsigma) ** 2, axis=1) + rho * noise_var)


# ---- convex precoder subproblems ------------------------------------------------------

def _real_maps(h: np.ndarray, scale: float) -> np.ndarray:
    """maps[k, j] is the 2 x 2N real matrix taking z to (Re, Im) of G~[k, j]."""
    k_count, n = h.shape
    big_n = k_count * n
    maps = np.zeros((k_count, k_count, 2, 2 * big_n))
    for k in range(k_count):
        hr, hi = h[k].real * scale, h[k].imag * scale
        for j in range(k_count):
            sl = slice(j * n, (j + 1) * n)
            sl_im = slice(big_n + j * n, big_n + (j + 1) * n)
            maps[k, j, 0, sl], maps[k, j, 0, sl_im] = hr, -hi
            maps[k, j, 1, sl], maps[k, j, 1, sl_im] = hi, hr
    return maps


@functools.lru_cache(maxsize=16)
def _eh_problem(k_count: int, dim: int, with_rate: bool):
    z = cp.Variable(dim)
    t = cp.Variable()
    e_lin = cp.Parameter((k_count, dim))
    e_off = cp.Parameter(k_count)
    cons = [e_lin @ z + e_off >= t, cp.sum_squares(z) <= 1.0]
    params = {"e_lin": e_lin, "e_off": e_off}
    if with_rate:
        r_lin = cp.Parameter((k_count, dim))
        r_off = cp.Parameter(k_count)
        quads = [cp.Parameter((2 * (k_count - 1), dim)) for _ in range(k_count)] if k_count > 1 else []
        for k in range(k_count):
            expr = r_lin[k] @ z
            if quads:
                expr = expr - cp.sum_squares(quads[k] @ z)
            cons.append(expr >= r_off[k])
        params.update(r_lin=r_lin, r_off=r_off, quads=quads)
    return cp.Problem(cp.Maximize(t), cons), z, t, params


@functools.lru_cache(maxsize=16)
def _sinr_problem(k_count: int, dim: int):
    z = cp.Variable(dim)
    t = cp.Variable()
    r_lin = cp.Parameter((k_count, dim))
    r_off = cp.Parameter(k_count)
    quads = [cp.Parameter((2 * (k_count - 1), dim)) for _ in range(k_count)] if k_count > 1 else []
    cons = [cp.sum_squares(z) <= 1.0]
    for k in range(k_count):
        expr = r_lin[k] @ z - r_off[k]
        if quads:
            expr = expr - cp.sum_squares(quads[k] @ z)
        cons.append(expr >= t)
    return cp.Problem(cp.Maximize(t), cons), z, t, {"r_lin": r_lin, "r_off": r_off, "quads": quads}


def _rate_terms(maps, vartheta_s, rho, noise_s, cov_s, target):
    """Linear part, quadratic factors and offsets of the scaled rate surrogate."""
    k_count = maps.shape[0]
    share = 1.0 - rho
    lin = np.stack([2.0 * np.sqrt(share[k]) * (vartheta_s[k].real * maps[k, k, 0] + vartheta_s[k].imag * maps[k, k, 1])
                    for k in range(k_count)])
    quads = []
    for k in range(k_count):
        others = [maps[k, j] for j in range(k_count) if j != k]
        if others:
            quads.append(abs(vartheta_s[k]) * np.sqrt(share[k]) * np.vstack(others))
    off = target + np.abs(vartheta_s) ** 2 * (share * noise_s + cov_s)
    return lin, quads, off


def _solve(problem: cp.Problem, context: str):
    try:
        # no solver reuse across calls, so results do not depend on call history
        problem.solve(solver=cp.CLARABEL, warm_start=False)
    except cp.error.SolverError as exc:
        raise SolverError(f"{context}: {exc}") from exc
    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise SolverError(f"{context}: solver status {problem.status}")


def _to_precoders(z: np.ndarray, k_count: int, n: int, p_tx: float) -> np.ndarray:
    big_n = k_count * n
    x = z[:big_n] + 1j * z[big_n:]
    norm = np.linalg.norm(x)
    if norm > 1.0:
        x = x / norm
    return np.sqrt(p_tx) * x.reshape(k_count, n)


# ---- power splitting -------------------------------------------------------------------

def _rho_interval(a_sig: float, interference: float, vartheta: complex, noise_var: float, cov_var: float,
                  target: float, has_rate: bool) -> tuple[float, float] | None:
    """Range of ``rho`` keeping the rate surrogate above ``target``.

    With ``t = sqrt(1 - rho)`` the surrogate is a concave quadratic in ``t``.
    """
    if not has_rate:
        return 0.0, 1.0
    v2 = abs(vartheta) ** 2
    quad = v2 * (interference + noise_var)
    const = v2 * cov_var + target
    if quad <= 0.0:
        if a_sig <= 0.0:
            return None
        t_lo, t_hi = const / (2.0 * a_sig), 1.0
    else:
        disc = a_sig * a_sig - quad * const
        if disc < 0.0:
            return None
        root = np.sqrt(disc)
        t_lo, t_hi = (a_sig - root) / quad, (a_sig + root) / quad
    t_lo, t_hi = max(t_lo, 0.0), min(t_hi, 1.0)
    if t_lo > t_hi:
        return None
    return 1.0 - t_hi * t_hi, 1.0 - t_lo * t_lo


def update_rho(link, rho, vartheta, varsigma, noise_var, cov_var, target, has_rate) -> np.ndarray:
    """Per-receiver splitting factor maximising the EH surrogate.

    The EH surrogate ``2 a sqrt(rho) - |varsigma|^2 + rho noise`` is increasing in
    ``rho`` when ``a >= 0`` and convex otherwise, so the best point of the
    feasible interval is one of its ends.
    """
    g2 = np.abs(link) ** 2
    signal = np.diag(link)
    interference = g2.sum(axis=1) - np.abs(signal) ** 2
    new = np.array(rho, dtype=float)
    for k in range(link.shape[0]):
        a_sig = float(np.real(np.conj(vartheta[k]) * signal[k]))
        interval = _rho_interval(a_sig, float(interference[k]), vartheta[k], noise_var, cov_var, target, has_rate)
        if interval is None:
            continue
        a_eh = float(np.real(np.sum(np.conj(varsigma[k]) * link[k])))
        lo, hi = interval
        f = lambda r: 2.0 * a_eh * np.sqrt(r) + r * noise_var
        new[k] = hi if f(hi) >= f(lo) else lo
    return new


def feasible_rho(link, noise_var, cov_var, target) -> np.ndarray:
    """Largest ``rho`` meeting the true SINR target for fixed precoders."""
    g2 = np.abs(link) ** 2
    signal = np.diag(g2)
    rest = g2.sum(axis=1) - signal + noise_var
    need = signal - target * rest
    with np.errstate(divide="ignore", invalid="ignore"):
        share = np.where(need > 0, target * cov_var / need, np.inf)
    return np.clip(1.0 - share, 0.0, 1.0)


@dataclass
class IdetResult:
    state: IdetState
    metrics: IdetMetrics
    history: list[float] = field(default_factory=list)
    rf_history: list[float] = field(default_factory=list)
    iterations: int = 0


def _max_min_sinr(h, precoders, p_tx, noise_var, cov_var, target, max_iter, eps):
    """Phase-one FP on the decoder branch alone (``rho = 0``)."""
    k_count, n = h.shape
    scale = 1.0 / (np.sqrt(p_tx) * max(np.linalg.norm(h, axis=1).max(), 1e-300))
    maps = _real_maps(h, np.sqrt(p_tx) * scale)
    prob, z, _, params = _sinr_problem(k_count, 2 * k_count * n)
    rho0 = np.zeros(k_count)
    best = precoders
    best_val = sinr(h, precoders, rho0, noise_var, cov_var).min()
    for _ in range(max_iter):
        if best_val >= target:
            break
        link = link_matrix(h, best)
        vt = optimal_vartheta(link, rho0, noise_var, cov_var) / scale
        lin, quads, off = _rate_terms(maps, vt, rho0, noise_var * scale ** 2, cov_var * scale ** 2, 0.0)
        params["r_lin"].value, params["r_off"].value = lin, off
        for par, val in zip(params["quads"], quads):
            par.value = val
        _solve(prob, "max-min SINR subproblem")
        cand = _to_precoders(z.value, k_count, n, p_tx)
        val = sinr(h, cand, rho0, noise_var, cov_var).min()
        if val <= best_val * (1.0 + eps):
            if val > best_val:
                best, best_val = cand, val
            break
        best, best_val = cand, val
    return best, float(best_val)


@dataclass
class _Run:
    precoders: np.ndarray
    rho: np.ndarray
    vartheta: np.ndarray
    varsigma: np.ndarray
    metrics: IdetMetrics
    history: list[float]
    rf_history: list[float]
    iterations: int


def _eh_fp(h, precoders, rho, p_tx, r0, curve, noise_var, cov_var, eps, max_iter, relax: float = 1.0) -> _Run:
    """Fractional-programming loop from a rate-feasible starting point."""
    k_count, n = h.shape
    target = 2.0 ** r0 - 1.0
    has_rate = r0 > 0
    scale = 1.0 / (np.sqrt(p_tx) * max(np.linalg.norm(h, axis=1).max(), 1e-300))
    maps = _real_maps(h, np.sqrt(p_tx) * scale)
    prob, z, _, params = _eh_problem(k_count, 2 * k_count * n, has_rate)
    noise_s, cov_s = noise_var * scale ** 2, cov_var * scale ** 2

    link = link_matrix(h, precoders)
    vartheta = optimal_vartheta(link, rho, noise_var, cov_var)
    varsigma = optimal_varsigma(link, rho)
    metrics = evaluate(h, precoders, rho, noise_var, cov_var, curve)
    history, rf_history = [metrics.min_dc], [metrics.min_rf]
    iterations = 0
    for iterations in range(1, max_iter + 1):
        sig_s = varsigma * scale
        e_lin = np.stack([
            2.0 * np.sqrt(rho[k]) * sum(sig_s[k, j].real * maps[k, j, 0] + sig_s[k, j].imag * maps[k, j, 1]
                                        for j in range(k_count))
            for k in range(k_count)
        ])
        params["e_lin"].value = e_lin
        params["e_off"].value = -np.sum(np.abs(sig_s) ** 2, axis=1) + rho * noise_s
        if has_rate:
            rho_x = 1.0 - np.minimum(1.0, relax * (1.0 - rho))
            vt_x = optimal_vartheta(link_matrix(h, precoders), rho_x, noise_var, cov_var)
            lin, quads, off = _rate_terms(maps, vt_x / scale, rho_x, noise_s, cov_s, target)
            params["r_lin"].value, params["r_off"].value = lin, off
            for par, val in zip(params["quads"], quads):
                par.value = val
        _solve(prob, "min-EH precoder subproblem")
        cand = _to_precoders(z.value, k_count, n, p_tx)
        cand_link = link_matrix(h, cand)
        cand_rho = update_rho(cand_link, rho, vartheta, varsigma, noise_var, cov_var, target, has_rate)
        if has_rate:
            # harvested power grows with rho, so the exact largest feasible split is never worse
            cand_rho = np.maximum(cand_rho, feasible_rho(cand_link, noise_var, cov_var, target))
        cand_metrics = evaluate(h, cand, cand_rho, noise_var, cov_var, curve)
        rate_ok = not has_rate or cand_metrics.rate.min() >= r0 - _REL_TOL
        old_rf = rf_history[-1]
        if not rate_ok or cand_metrics.min_rf < old_rf * (1.0 - 1e-9):
            break
        precoders, rho, metrics = cand, cand_rho, cand_metrics
        vartheta = optimal_vartheta(cand_link, rho, noise_var, cov_var)
        varsigma = optimal_varsigma(cand_link, rho)
        history.append(metrics.min_dc)
        rf_history.append(metrics.min_rf)
        if abs(metrics.min_rf - old_rf) <= eps * max(abs(old_rf), 1e-300):
            break
    return _Run(precoders, rho, vartheta, varsigma, metrics, history, rf_history, iterations)


def optimize_idet(hbar, p_tx: float, r0: float, curve: EhCurve = EhCurve(), noise_var: float = 1e-13,
                  cov_var: float = 1e-8, eps: float = 1e-4, max_iter: int = 100,
                  relax: float = DECODER_RELAX) -> IdetResult:
    """Maximise the minimum harvested power subject to ``rate >= r0`` (bit/s/Hz).

    Each cycle solves a convex precoder problem on the surrogates, moves the
    splitting factors to the best end of their feasible range, and then resets
    both quadratic-transform auxiliaries. A cycle that would lower the true
    objective is rejected and the loop stops.

    With a rate floor the start is the max-min SINR point. The precoder step
    sees the rate floor at ``relax`` times the current decoder share, so that a
    splitting factor sitting exactly on the floor does not freeze the precoders.
    """
    hbar = np.asarray(hbar, dtype=complex)
    shape = hbar.shape
    h = _flat(hbar)
    k_count, n = h.shape
    target = 2.0 ** r0 - 1.0

    norms = np.linalg.norm(h, axis=1)
    x0 = np.where(norms[:, None] > 0, h.conj() / np.maximum(norms[:, None], 1e-300), 1.0 / np.sqrt(n))
    precoders = np.sqrt(p_tx / k_count) * x0
    if r0 <= 0:
        rho = np.ones(k_count)
    else:
        precoders, best_sinr = _max_min_sinr(h, precoders, p_tx, noise_var, cov_var, target, max_iter, eps)
        if best_sinr < target * (1.0 - 1e-9):
            raise InfeasibleError(
                f"rate floor {r0} bit/s/Hz is not reachable at this power",
                {"max_min_rate": float(np.log2(1.0 + best_sinr))},
            )
        rho = feasible_rho(link_matrix(h, precoders), noise_var, cov_var, target)
    run = _eh_fp(h, precoders, rho, p_tx, r0, curve, noise_var, cov_var, eps, max_iter, relax)
    state = IdetState(run.precoders.reshape(shape), run.rho, run.vartheta, run.varsigma)
    return IdetResult(state, run.metrics, run.history, run.rf_history, run.iterations)


def single_user_oracle(hbar, p_tx: float, r0: float, curve: EhCurve, noise_var: float, cov_var: float) -> float:
    """Closed-form DC power for one receiver: matched full-power precoder, tight rate."""
    h = _flat(hbar)
    if h.shape[0] != 1:
        raise InvalidArgumentError("oracle is single-receiver only")
    gain = p_tx * float(np.linalg.norm(h) ** 2)
    if r0 <= 0:
        rho = 1.0
    else:
        target = 2.0 ** r0 - 1.0
        need = gain - target * noise_var
        if need <= 0:
            raise InfeasibleError("rate floor unreachable", {"max_min_rate": float(np.log2(1 + gain / (noise_var + cov_var)))})
        rho = float(np.clip(1.0 - target * cov_var / need, 0.0, 1.0))
    return float(gamma(curve, rho * (gain + noise_var)))
