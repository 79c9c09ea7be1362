"""Holographic surface response, amplitude-only beamformer and directional gain.

Feeds launch a reference wave across the surface; each element scales it by a
real amplitude in [0, 1]. The beamformer is the interference pattern between
the wanted steering vector and that reference wave. Because the amplitude is
real, the pattern also radiates a conjugate lobe, and the resulting gain
depends on direction even for a steered beam.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from holoidet import kernels
from holoidet.channel import SPEED_OF_LIGHT, direction_angles, direction_vector
from holoidet.errors import InfeasibleError, InvalidArgumentError
from holoidet.geometry import SurfaceLayout

_SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class EmResponse:
    """Feed-to-element propagation, an (M, Q) complex matrix.

    ``phase`` holds ``kappa * distance`` so kernels can reuse it; ``matrix``
    equals ``sqrt(eta) * exp(-1j * phase)``.
    """

    matrix: np.ndarray
    phase: np.ndarray
    eta: float
    wavelength: float

    @property
    def n_elements(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_feeds(self) -> int:
        return self.matrix.shape[1]


def em_response(layout: SurfaceLayout, eta: float = 1.0, refractive: float = 3.0,
                carrier_hz: float = 30e9) -> EmResponse:
    """Reference-wave response from every feed to every element.

    Distances are taken in the local frame, so the response does not depend on
    the surface pose.
    """
    if eta <= 0:
        raise InvalidArgumentError("efficiency must be positive")
    elems = layout.local_coords()
    dist = np.linalg.norm(elems[:, None, :] - layout.feeds[None, :, :], axis=-1)
    phase = 2.0 * np.pi * carrier_hz * refractive / SPEED_OF_LIGHT * dist
    return EmResponse(np.sqrt(eta) * np.exp(-1j * phase), phase, float(eta), SPEED_OF_LIGHT / carrier_hz)


@dataclass(frozen=True)
class HoloBeamformer:
    psi: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float)
        if psi.min(initial=0.0) < 0.0 or psi.max(initial=0.0) > 1.0:
            raise InvalidArgumentError("holographic amplitudes must lie in [0, 1]")
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "weights", check_weights(self.weights))


def check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float).ravel()
    if w.size == 0 or w.min() < -_SIMPLEX_TOL or abs(w.sum() - 1.0) > _SIMPLEX_TOL:
        raise InvalidArgumentError(f"feed weights must lie on the simplex, got {w!r}")
    return np.clip(w, 0.0, None)


def holo_patterns(steer: np.ndarray, em: EmResponse) -> np.ndarray:
    """(M, Q) single-feed holograms; the beamformer is ``patterns @ weights``."""
    steer = np.asarray(steer)
    if steer.shape != (em.n_elements,):
        raise InvalidArgumentError("steering vector length does not match the response")
    scaled = np.sqrt(em.n_elements / em.eta) * em.matrix * steer[:, None]
    return np.clip(0.5 * (scaled.real + 1.0), 0.0, 1.0)


def holo_beamformer(steer: np.ndarray, em: EmResponse, weights) -> HoloBeamformer:
    """Amplitude pattern steering toward the direction encoded in ``steer``."""
    w = check_weights(weights)
    if w.size != em.n_feeds:
        raise InvalidArgumentError("one weight per feed is required")
    return HoloBeamformer(np.clip(holo_patterns(steer, em) @ w, 0.0, 1.0), w)


def beam_gain(psi: np.ndarray, em: EmResponse, steer: np.ndarray) -> float:
    """``|sum_q a^T diag(psi) Theta_q|`` by direct matrix evaluation."""
    psi = getattr(psi, "psi", psi)
    return float(abs((np.asarray(steer) * psi) @ em.matrix.sum(axis=1)))


def beam_gain_expanded(layout: SurfaceLayout, weights, direction: np.ndarray, *, eta: float = 1.0,
                       refractive: float = 3.0, carrier_hz: float = 30e9,
                       offset: np.ndarray | None = None) -> float:
    """Self-steered gain from the three-part expansion, used as a cross-check.

    Rebuilds every phase from geometry rather than from :class:`EmResponse`.
    ``offset`` is the surface position, which shifts all steering phases.
    Splitting the double feed sum into same-feed and cross-feed terms gives a
    constant part, a conjugate-lobe part, and a feed-coupling part.
    """
    wavelength = SPEED_OF_LIGHT / carrier_hz
    k = 2.0 * np.pi / wavelength
    w = np.asarray(weights, dtype=float)
    elems = layout.local_coords()
    if offset is not None:
        elems = elems + np.asarray(offset, dtype=float)
    feeds = layout.feeds + (0.0 if offset is None else np.asarray(offset, dtype=float))
    n_elem = elems.shape[0]
    dist = np.sqrt(((elems[None, :, :] - feeds[:, None, :]) ** 2).sum(axis=-1))  # (Q, M)
    psi = k * (elems @ np.asarray(direction, dtype=float))[None, :] - k * refractive * dist
    rot = np.exp(1j * psi)

    part_one = n_elem / 4.0 * w.sum()
    part_two = np.sum(w[:, None] * rot * (rot + 2.0) / 4.0)
    cos_half = (np.cos(psi) + 1.0) / 2.0
    part_three = 0.0 + 0.0j
    for q in range(len(w)):
        for qp in range(len(w)):
            if q != qp:
                part_three += w[q] * np.sum(rot[qp] * cos_half[q])
    return float(np.sqrt(eta) / np.sqrt(n_elem) * abs(part_one + part_two + part_three))


def directional_gain(layout: SurfaceLayout, em: EmResponse, weights, dirs_local: np.ndarray) -> np.ndarray:
    """Self-steered gain toward each local direction (rows of ``dirs_local``)."""
    dirs = np.atleast_2d(np.asarray(dirs_local, dtype=float))
    elem_xy = np.ascontiguousarray(layout.local_coords()[:, :2])
    return kernels.holo_gain_map(
        elem_xy,
        np.ascontiguousarray(em.phase),
        np.ascontiguousarray(np.asarray(weights, dtype=float)),
        np.ascontiguousarray(dirs[:, :2]),
        2.0 * np.pi / em.wavelength,
        float(np.sqrt(em.eta)),
    )


@dataclass(frozen=True)
class GainProfile:
    theta: np.ndarray     # (n_theta,)
    phi: np.ndarray       # (n_phi,)
    gain: np.ndarray      # (n_theta, n_phi)

    @property
    def argmax(self) -> tuple[float, float]:
        i, j = np.unravel_index(int(np.argmax(self.gain)), self.gain.shape)
        return float(self.theta[i]), float(self.phi[j])

    @property
    def argmax_direction(self) -> np.ndarray:
        return direction_vector(*self.argmax)

    @property
    def anisotropy(self) -> float:
        lo = self.gain.min()
        return float(np.inf if lo == 0 else self.gain.max() / lo)

    def to_csv(self, path) -> None:
        tt, pp = np.meshgrid(self.theta, self.phi, indexing="ij")
        rows = np.stack([tt.ravel(), pp.ravel(), self.gain.ravel()], axis=1)
        np.savetxt(path, rows, delimiter=",", header="theta,phi,gain", comments="", fmt="%.17g")


def gain_profile(layout: SurfaceLayout, em: EmResponse, weights, n_theta: int = 181,
                 n_phi: int = 91) -> GainProfile:
    """Sample the self-steered gain over the local front hemisphere.

    Elevation here is measured from the surface plane, so ``phi = pi/2`` is
    broadside (local +z).
    """
    theta = np.linspace(-np.pi, np.pi, n_theta)
    phi = np.linspace(0.0, np.pi / 2.0, n_phi)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    dirs = direction_vector(tt.ravel(), pp.ravel())
    gain = directional_gain(layout, em, weights, dirs).reshape(n_theta, n_phi)
    return GainProfile(theta, phi, gain)


@dataclass(frozen=True)
class SearchConfig:
    """Budget for :func:`find_max_gain_direction`.

    ``step`` is the final perturbation size in normalised coordinates: direction
    cosines, feed positions as a fraction of the aperture, and feed weights.
    """

    coarse: int = 41
    restarts: int = 12
    feed_grid: int = 6
    refine_top: int = 4
    initial_step: float = 0.05
    step: float = 1e-3
    seed: int = 0


@dataclass(frozen=True)
class MaxGainResult:
    direction: np.ndarray
    theta: float
    phi: float
    feeds: np.ndarray
    weights: np.ndarray
    gain: float
    evaluations: int


class _GainSearch:
    """Pattern search over (direction, feeds, weights) in normalised units."""

    def __init__(self, layout: SurfaceLayout, n_feeds: int, eta: float, refractive: float,
                 carrier_hz: float, min_feed_distance: float):
        self.layout = layout
        self.n_feeds = n_feeds
        self.eta = eta
        self.refractive = refractive
        self.carrier_hz = carrier_hz
        self.min_dist = min_feed_distance
        self.extent = np.array(layout.aperture)
        self.evaluations = 0

    def feeds_xyz(self, feeds_norm: np.ndarray) -> np.ndarray:
        xy = feeds_norm * self.extent
        return np.hstack([xy, np.zeros((xy.shape[0], 1))])

    def feeds_ok(self, feeds_norm: np.ndarray) -> bool:
        if feeds_norm.min() < 0.0 or feeds_norm.max() > 1.0:
            return False
        if self.n_feeds < 2:
            return True
        xy = feeds_norm * self.extent
        diff = np.linalg.norm(xy[:, None, :] - xy[None, :, :], axis=-1)
        return bool(diff[np.triu_indices(self.n_feeds, 1)].min() >= self.min_dist)

    def response(self, feeds_norm: np.ndarray) -> EmResponse:
        return em_response(self.layout.with_feeds(self.feeds_xyz(feeds_norm)), self.eta, self.refractive,
                           self.carrier_hz)

    def gains(self, feeds_norm: np.ndarray, weights: np.ndarray, uv: np.ndarray) -> np.ndarray:
        em = self.response(feeds_norm)
        uv = np.atleast_2d(uv)
        self.evaluations += uv.shape[0]
        return directional_gain(self.layout, em, weights, np.hstack([uv, np.zeros((uv.shape[0], 1))]))

    def value(self, state) -> float:
        uv, feeds_norm, weights = state
        if uv @ uv > 1.0 or not self.feeds_ok(feeds_norm) or weights.min() < 0.0:
            return -np.inf
        return float(self.gains(feeds_norm, weights, uv)[0])

    def moves(self, state, step: float):
        """Coordinate perturbations of size ``step``."""
        uv, feeds_norm, weights = state
        for i in range(2):
            for sign in (1.0, -1.0):
                new = uv.copy()
                new[i] += sign * step
                yield new, feeds_norm, weights
        for q in range(self.n_feeds):
            for axis in range(2):
                if self.extent[axis] == 0:
                    continue
                for sign in (1.0, -1.0):
                    new = feeds_norm.copy()
                    new[q, axis] += sign * step
                    yield uv, new, weights
        for q in range(self.n_feeds):
            for qp in range(self.n_feeds):
                if q != qp:
                    new = weights.copy()
                    new[q] += step
                    new[qp] -= step
                    yield uv, feeds_norm, new

    def refine(self, state, value: float, initial_step: float, final_step: float):
        step = max(initial_step, final_step)
        while True:
            improved = True
            while improved:
                improved = False
                for cand in self.moves(state, step):
                    val = self.value(cand)
                    if val > value:
                        state, value, improved = cand, val, True
                        break
            if step <= final_step:
                return state, value
            step = max(step / 2.0, final_step)


def _random_feeds(search: _GainSearch, rng: np.random.Generator, tries: int = 2000) -> np.ndarray | None:
    for _ in range(tries):
        cand = rng.uniform(0.0, 1.0, size=(search.n_feeds, 2))
        cand[:, search.extent == 0] = 0.0
        if search.feeds_ok(cand):
            return cand
    return None


def _packing_capacity(extent: np.ndarray, min_dist: float) -> int:
    if min_dist <= 0:
        return np.iinfo(np.int64).max
    return int(np.prod(np.floor(extent / min_dist) + 1))


def find_max_gain_direction(layout: SurfaceLayout, n_feeds: int = 1, *, eta: float = 1.0,
                            refractive: float = 3.0, carrier_hz: float = 30e9,
                            min_feed_distance: float | None = None,
                            cfg: SearchConfig = SearchConfig()) -> MaxGainResult:
    """Jointly search steering direction, feed positions and feed weights.

    Feeds stay in the local element plane inside the aperture with pairwise
    distance at least ``min_feed_distance`` (half a wavelength by default).
    A coarse direction grid is scanned for several feed/weight starts, and the
    best starts are refined by pattern search down to ``cfg.step``. The
    centred-feed broadside configuration is always one of the starts.
    """
    wavelength = SPEED_OF_LIGHT / carrier_hz
    if min_feed_distance is None:
        min_feed_distance = wavelength / 2.0
    if n_feeds < 1:
        raise InvalidArgumentError("need at least one feed")
    search = _GainSearch(layout, n_feeds, eta, refractive, carrier_hz, min_feed_distance)
    if n_feeds > 1 and n_feeds > _packing_capacity(search.extent, min_feed_distance):
        raise InfeasibleError(
            f"{n_feeds} feeds cannot keep {min_feed_distance:.4g} m spacing inside the aperture",
            {"capacity": _packing_capacity(search.extent, min_feed_distance)},
        )
    rng = np.random.default_rng(cfg.seed)

    grid = np.linspace(-1.0, 1.0, cfg.coarse)
    uu, vv = np.meshgrid(grid, grid, indexing="ij")
    coarse_uv = np.stack([uu.ravel(), vv.ravel()], axis=1)
    coarse_uv = coarse_uv[(coarse_uv ** 2).sum(axis=1) <= 1.0]

    starts = []
    uniform_w = np.full(n_feeds, 1.0 / n_feeds)
    if n_feeds == 1:
        centre = np.full((1, 2), 0.5)
        centre[:, search.extent == 0] = 0.0
        starts.append((centre, uniform_w))
        if cfg.feed_grid > 1:
            ticks = np.linspace(0.0, 1.0, cfg.feed_grid)
            for fx in ticks:
                for fy in ticks:
                    feed = np.array([[fx, fy]])
                    feed[:, search.extent == 0] = 0.0
                    starts.append((feed, uniform_w))
    for r in range(cfg.restarts):
        feeds = _random_feeds(search, rng)
        if feeds is None:
            continue
        weights = uniform_w if r % 2 == 0 else rng.dirichlet(np.ones(n_feeds))
        starts.append((feeds, weights))
    if not starts:
        raise InfeasibleError("no feasible feed placement found", {"min_feed_distance": min_feed_distance})

    candidates = []
    if n_feeds == 1:
        base = (np.zeros(2), starts[0][0], uniform_w)
        candidates.append((search.value(base), base))
    for feeds, weights in starts:
        g = search.gains(feeds, weights, coarse_uv)
        best = int(np.argmax(g))
        candidates.append((float(g[best]), (coarse_uv[best].copy(), feeds, np.asarray(weights, dtype=float))))
    candidates.sort(key=lambda item: -item[0])

    best_state, best_value = candidates[0][1], candidates[0][0]
    for value, state in candidates[:cfg.refine_top]:
        state, value = search.refine(state, value, cfg.initial_step, cfg.step)
        if value > best_value:
            best_state, best_value = state, value
    if candidates[0][0] > best_value:
        best_state, best_value = candidates[0][1], candidates[0][0]

    uv, feeds_norm, weights = best_state
    direction = np.array([uv[0], uv[1], np.sqrt(max(0.0, 1.0 - uv @ uv))])
    theta, phi = direction_angles(direction)
    return MaxGainResult(direction, float(theta), float(phi), search.feeds_xyz(feeds_norm), weights.copy(),
                         float(best_value), search.evaluations)


def is_local_max(layout: SurfaceLayout, result: MaxGainResult, *, eta: float = 1.0, refractive: float = 3.0,
                 carrier_hz: float = 30e9, min_feed_distance: float | None = None, step: float = 1e-3) -> bool:
    """True when no single coordinate move of size ``step`` raises the gain."""
    wavelength = SPEED_OF_LIGHT / carrier_hz
    min_dist = wavelength / 2.0 if min_feed_distance is None else min_feed_distance
    search = _GainSearch(layout, result.feeds.shape[0], eta, refractive, carrier_hz, min_dist)
    extent = np.where(search.extent > 0, search.extent, 1.0)
    state = (result.direction[:2].copy(), result.feeds[:, :2] / extent, result.weights.copy())
    base = search.value(state)
    return all(search.value(cand) <= base for cand in search.moves(state, step))


@functools.lru_cache(maxsize=32)
def cached_max_gain(mx: int, my: int, spacing: float, n_feeds: int, eta: float, refractive: float,
                    carrier_hz: float, min_feed_distance: float | None, cfg: SearchConfig) -> MaxGainResult:
    """Memoised :func:`find_max_gain_direction` for repeated scenario runs."""
    layout = SurfaceLayout(mx, my, spacing)
    return find_max_gain_direction(layout, n_feeds, eta=eta, refractive=refractive, carrier_hz=carrier_hz,
                                   min_feed_distance=min_feed_distance, cfg=cfg)
