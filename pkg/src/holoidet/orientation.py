"""Surface orientation from sensed directions, slot selection and feed/precoder refinement.

Surface ``b`` serves receiver ``b``. Its rotation turns the surface's maximum-gain
direction toward that receiver. A greedy sweep then moves surfaces between
discrete slots. Fractional programming alternates between the digital
precoders and the feed weights. The objective is the smallest, over receivers,
of the beamforming power delivered toward each sensed direction.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from holoidet.channel import antenna_mask, steering_from_positions
from holoidet.errors import InfeasibleError, InvalidArgumentError
from holoidet.geometry import (
    FeasibilityReport,
    SurfaceLayout,
    SurfacePose,
    check_feasible,
    element_positions,
    radial_rotation,
    rotation_between,
)
from holoidet.rhs import EmResponse, holo_patterns
from holoidet.solvers import maxmin_affine_ball, maxmin_affine_simplices

_TINY = 1e-300


def rotations_from_sensing(max_gain_dir: np.ndarray, sensed: np.ndarray) -> list[np.ndarray]:
    """One rotation per surface taking its max-gain direction onto a sensed direction."""
    return [rotation_between(np.asarray(max_gain_dir, dtype=float), np.asarray(u, dtype=float)) for u in sensed]


def _converged(old: float, new: float, eps: float) -> bool:
    if np.isinf(eps):
        return True
    return abs(new - old) <= eps * max(abs(old), _TINY)


@dataclass(frozen=True)
class OrientationProblem:
    """Inputs of the orientation stage.

    ``sensed`` holds one global unit direction per receiver, ordered so that
    surface ``b`` serves receiver ``b``. ``max_gain_dir`` is the local-frame
    direction of maximum holographic gain.
    """

    sensed: np.ndarray
    max_gain_dir: np.ndarray
    slots: np.ndarray
    layout: SurfaceLayout
    em: EmResponse
    p_tx: float
    wavelength: float
    d_min: float = 0.25
    mask_mode: str = "position"
    eps: float = 1e-4
    max_outer: int = 20
    max_inner: int = 100

    def __post_init__(self):
        sensed = np.atleast_2d(np.asarray(self.sensed, dtype=float))
        if np.any(np.abs(np.linalg.norm(sensed, axis=1) - 1.0) > 1e-9):
            raise InvalidArgumentError("sensed directions must be unit vectors")
        object.__setattr__(self, "sensed", sensed)

    @property
    def n_surfaces(self) -> int:
        return self.sensed.shape[0]


def design_steering(pose: SurfacePose, layout: SurfaceLayout, direction: np.ndarray, wavelength: float) -> np.ndarray:
    """Steering toward ``direction`` with phases referenced to the surface's anchor element.

    Hologram patterns are built from this, so the achieved gain depends on the
    direction in the surface frame only, not on where the surface sits.
    """
    return steering_from_positions(element_positions(pose, layout) - pose.position, direction, wavelength)


def coupling_tensor(problem: OrientationProblem, b: int, pose: SurfacePose) -> np.ndarray:
    """(K, Q, Q) tensor ``W[k, q, r]`` for surface ``b`` at ``pose``.

    The equivalent coefficient toward receiver ``k`` for feed-weight vector
    ``w`` is ``sum_q w[q] W[k, q, :]``, already multiplied by the antenna mask.
    """
    positions = element_positions(pose, problem.layout)
    steer_all = steering_from_positions(positions, problem.sensed, problem.wavelength)  # (K, M)
    design = design_steering(pose, problem.layout, problem.sensed[b], problem.wavelength)
    patterns = holo_patterns(design, problem.em)  # (M, Q), steered toward receiver b
    mask = antenna_mask(problem.sensed, pose, problem.mask_mode).astype(float)
    return mask[:, None, None] * np.einsum("km,mq,mr->kqr", steer_all, patterns, problem.em.matrix)


def coefficients(tensors: list[np.ndarray], weights: np.ndarray) -> np.ndarray:
    """(K, B, Q) coefficients ``Lambda a^T diag(Psi_b) Theta_b`` toward each sensed direction."""
    return np.stack([np.einsum("q,kqr->kr", weights[b], t) for b, t in enumerate(tensors)], axis=1)


def cross_gains(coef: np.ndarray, precoders: np.ndarray) -> np.ndarray:
    """``Xi[k, j] = sum_b coef[k, b] . X[j, b]``."""
    return np.einsum("kbq,jbq->kj", coef, precoders)


def per_receiver_gain(coef: np.ndarray, precoders: np.ndarray) -> np.ndarray:
    return np.sum(np.abs(cross_gains(coef, precoders)) ** 2, axis=1)


def gain_objective(poses, weights, precoders, problem: OrientationProblem, return_all: bool = False):
    """Minimum over receivers of the delivered beamforming power."""
    tensors = [coupling_tensor(problem, b, pose) for b, pose in enumerate(poses)]
    gains = per_receiver_gain(coefficients(tensors, np.asarray(weights)), np.asarray(precoders))
    return gains if return_all else float(gains.min())


def matched_precoders(coef: np.ndarray, p_tx: float) -> np.ndarray:
    """Equal-power precoders matched to each receiver's coefficients."""
    k_count = coef.shape[0]
    out = np.empty_like(coef)
    for k in range(k_count):
        norm = np.linalg.norm(coef[k])
        out[k] = coef[k].conj() / norm if norm > 0 else np.full(coef[k].shape, 1.0 / np.sqrt(coef[k].size))
    return out * np.sqrt(p_tx / k_count)


@dataclass
class FpResult:
    weights: np.ndarray
    precoders: np.ndarray
    zeta: np.ndarray
    objective: float
    history: list[float] = field(default_factory=list)
    surrogate: list[tuple[float, float, float]] = field(default_factory=list)


def fp_refine(problem: OrientationProblem, poses, weights: np.ndarray, precoders: np.ndarray,
              tensors: list[np.ndarray] | None = None) -> FpResult:
    """Alternate precoder and feed-weight updates with the poses held fixed.

    Each cycle maximises the quadratic-transform surrogate
    ``2 Re{zeta_k^H Xi_k} - |zeta_k|^2`` in the precoders, then in the feed
    weights, then resets ``zeta = Xi``. A step is kept only if it does not
    lower the surrogate, so the true objective never decreases.
    """
    if tensors is None:
        tensors = [coupling_tensor(problem, b, pose) for b, pose in enumerate(poses)]
    weights = np.array(weights, dtype=float)
    precoders = np.array(precoders, dtype=complex)
    k_count, b_count, q_count = precoders.shape
    coef = coefficients(tensors, weights)
    zeta = cross_gains(coef, precoders)
    objective = float(per_receiver_gain(coef, precoders).min())
    result = FpResult(weights, precoders, zeta, objective, [objective])

    for _ in range(problem.max_inner):
        offset = np.sum(np.abs(zeta) ** 2, axis=1)
        start = objective
        # precoders: affine surrogate in x = vec(X)
        lin = (zeta[:, :, None, None] * coef.conj()[:, None, :, :]).reshape(k_count, -1)
        solved = maxmin_affine_ball(lin, offset, problem.p_tx)
        current = float((2.0 * np.real(lin.conj() @ precoders.ravel()) - offset).min())
        after_x = current
        if solved.value >= current:
            precoders = solved.x.reshape(k_count, b_count, q_count)
            after_x = solved.value
        # feed weights: affine surrogate in w, linear program on simplices
        after_w = after_x
        if q_count > 1:
            # resp[k, b, q, j] = W_b[k, q, :] . X[j, b]
            resp = np.stack([np.einsum("kqr,jr->kqj", t, precoders[:, b, :]) for b, t in enumerate(tensors)], axis=1)
            lin_w = 2.0 * np.real(np.einsum("kj,kbqj->kbq", zeta.conj(), resp)).reshape(k_count, -1)
            new_w, val_w = maxmin_affine_simplices(lin_w, offset, [q_count] * b_count)
            cur_w = float((lin_w @ weights.ravel() - offset).min())
            if val_w >= cur_w:
                weights = new_w.reshape(b_count, q_count)
                after_w = val_w
            coef = coefficients(tensors, weights)
        zeta = cross_gains(coef, precoders)
        objective = float(per_receiver_gain(coef, precoders).min())
        result.surrogate.append((start, after_x, after_w))
        result.history.append(objective)
        if _converged(start, objective, problem.eps):
            break
    result.weights, result.precoders, result.zeta, result.objective = weights, precoders, zeta, objective
    return result


@dataclass
class SlotResult:
    slots: np.ndarray
    poses: list[SurfacePose]
    objective: float
    history: list[float]
    evaluations: int
    passes: int


def _poses_for(slots, table, rotation_for) -> list[SurfacePose]:
    return [SurfacePose(rotation_for(b, table[s]), table[s], int(s)) for b, s in enumerate(slots)]


def _assignment_ok(slots, table, rotation_for, d_min) -> bool:
    if len(set(int(s) for s in slots)) != len(slots):
        return False
    return check_feasible(_poses_for(slots, table, rotation_for), d_min=d_min).ok


def feasible_start(problem: OrientationProblem, rotation_for, limit: int = 500_000) -> np.ndarray:
    """Feasible slot assignment maximising the alignment of normals with positions."""
    table = problem.slots
    b_count = problem.n_surfaces
    best, best_score = None, -np.inf
    for count, cand in enumerate(itertools.permutations(range(len(table)), b_count)):
        if count >= limit:
            break
        poses = _poses_for(cand, table, rotation_for)
        if not check_feasible(poses, d_min=problem.d_min).ok:
            continue
        score = sum(p.normal @ p.position / np.linalg.norm(p.position) for p in poses)
        if score > best_score:
            best, best_score = np.array(cand), score
    if best is None:
        raise InfeasibleError("no slot assignment satisfies the placement constraints",
                              {"slots": len(table), "surfaces": b_count})
    return best


def select_slots(problem: OrientationProblem, slots, weights, precoders, rotation_for) -> SlotResult:
    """Greedy slot sweep with the feed weights and precoders held fixed.

    Every (slot, surface) move is visited in scan order, and a move is kept
    when it strictly raises the objective and the placement stays feasible.
    Sweeps repeat until the relative change in a sweep is below ``eps``.
    """
    table = problem.slots
    slots = np.array(slots, dtype=int)
    if not _assignment_ok(slots, table, rotation_for, problem.d_min):
        slots = feasible_start(problem, rotation_for)
    cache: dict[tuple[int, int], np.ndarray] = {}

    def tensor(b, s):
        key = (b, int(s))
        if key not in cache:
            pose = SurfacePose(rotation_for(b, table[s]), table[s], int(s))
            cache[key] = coupling_tensor(problem, b, pose)
        return cache[key]

    def value(assign):
        tensors = [tensor(b, s) for b, s in enumerate(assign)]
        return float(per_receiver_gain(coefficients(tensors, weights), precoders).min())

    best = value(slots)
    history = [best]
    evaluations = 0
    passes = 0
    while True:
        passes += 1
        start = best
        for m1 in range(len(table)):
            for b in range(problem.n_surfaces):
                evaluations += 1
                if slots[b] == m1 or m1 in slots:
                    continue
                cand = slots.copy()
                cand[b] = m1
                if not check_feasible(_poses_for(cand, table, rotation_for), d_min=problem.d_min).ok:
                    continue
                val = value(cand)
                if val > best:
                    slots, best = cand, val
        history.append(best)
        if _converged(start, best, problem.eps) or passes >= problem.max_outer:
            break
    return SlotResult(slots, _poses_for(slots, table, rotation_for), best, history, evaluations, passes)


@dataclass
class OrientationSolution:
    poses: list[SurfacePose]
    weights: np.ndarray
    precoders: np.ndarray
    objective: float
    history: list[float]
    feasibility: FeasibilityReport
    slots: np.ndarray | None = None
    inner: list[FpResult] = field(default_factory=list)
    slot_runs: list[SlotResult] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "poses": [p.to_dict() for p in self.poses],
            "weights": self.weights.tolist(),
            "precoders_re": self.precoders.real.tolist(),
            "precoders_im": self.precoders.imag.tolist(),
            "objective": self.objective,
            "history": list(self.history),
            "feasible": self.feasibility.ok,
            "slots": None if self.slots is None else [int(s) for s in self.slots],
        }


def rotation_rule(problem: OrientationProblem, rule: str):
    """Map ``(surface, position) -> rotation`` for the named rule."""
    if rule == "sensed":
        rotations = rotations_from_sensing(problem.max_gain_dir, problem.sensed)
        return lambda b, q: rotations[b]
    if rule == "radial":
        return lambda b, q: radial_rotation(q)
    raise InvalidArgumentError(f"unknown rotation rule {rule!r}")


def optimize_orientation(problem: OrientationProblem, rotation: str = "sensed",
                         fixed_positions: np.ndarray | None = None,
                         initial_slots=None) -> OrientationSolution:
    """Orientation stage for one instance.

    With ``fixed_positions`` the surfaces stay put and only the feed weights and
    precoders are refined. Otherwise slot selection and refinement alternate
    until the relative objective change drops below ``eps``.
    """
    rotation_for = rotation_rule(problem, rotation)
    b_count, q_count = problem.n_surfaces, problem.layout.n_feeds
    weights = np.full((b_count, q_count), 1.0 / q_count)

    if fixed_positions is not None:
        positions = np.asarray(fixed_positions, dtype=float)
        poses = [SurfacePose(rotation_for(b, positions[b]), positions[b]) for b in range(b_count)]
        # fixed placements are reported, not rejected: there is no freedom left to repair them
        report = check_feasible(poses, d_min=problem.d_min)
        tensors = [coupling_tensor(problem, b, pose) for b, pose in enumerate(poses)]
        precoders = matched_precoders(coefficients(tensors, weights), problem.p_tx)
        fp = fp_refine(problem, poses, weights, precoders, tensors)
        return OrientationSolution(poses, fp.weights, fp.precoders, fp.objective, [fp.objective], report, None, [fp])

    table = problem.slots
    slots = np.arange(b_count) if initial_slots is None else np.array(initial_slots, dtype=int)
    if not _assignment_ok(slots, table, rotation_for, problem.d_min):
        slots = feasible_start(problem, rotation_for)
    poses = _poses_for(slots, table, rotation_for)
    tensors = [coupling_tensor(problem, b, pose) for b, pose in enumerate(poses)]
    precoders = matched_precoders(coefficients(tensors, weights), problem.p_tx)
    objective = float(per_receiver_gain(coefficients(tensors, weights), precoders).min())
    history = [objective]
    inner, slot_runs = [], []
    for _ in range(problem.max_outer):
        sel = select_slots(problem, slots, weights, precoders, rotation_for)
        slot_runs.append(sel)
        slots, poses = sel.slots, sel.poses
        fp = fp_refine(problem, poses, weights, precoders)
        inner.append(fp)
        weights, precoders = fp.weights, fp.precoders
        new = fp.objective
        if new < objective - 1e-12 * max(abs(objective), _TINY):
            raise AssertionError(f"orientation objective decreased: {objective} -> {new}")
        history.append(new)
        done = _converged(objective, new, problem.eps)
        objective = new
        if done:
            break
    return OrientationSolution(poses, weights, precoders, objective, history,
                               check_feasible(poses, d_min=problem.d_min), slots, inner, slot_runs)
