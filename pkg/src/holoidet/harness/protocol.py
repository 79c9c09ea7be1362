"""Three-stage protocol: uplink sensing, orientation, downlink transmission.

Every scheme shares the same channel and sensing draws for a given trial seed,
so scheme comparisons are paired.
"""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field

import numpy as np

from holoidet import sensing
from holoidet.channel import ChannelConfig, ChannelRealization, draw_channel, equivalent_channel
from holoidet.errors import InfeasibleError
from holoidet.geometry import (
    E3,
    SurfaceLayout,
    SurfacePose,
    fibonacci_sphere,
    radial_rotation,
)
from holoidet.harness.scenario import Scenario
from holoidet.idet import EhCurve, IdetMetrics, IdetResult, optimize_idet
from holoidet.orientation import OrientationProblem, design_steering, OrientationSolution, optimize_orientation
from holoidet.rhs import EmResponse, SearchConfig, cached_max_gain, directional_gain, em_response, holo_patterns

# independent random streams inside one trial
STREAM_CHANNEL, STREAM_SENSING, STREAM_LS, STREAM_INJECTION, STREAM_CSI = range(5)


def stream(seed: int, which: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, which]))


@dataclass(frozen=True)
class Hardware:
    """Trial-independent pieces derived from a scenario."""

    layout: SurfaceLayout
    em: EmResponse
    weights0: np.ndarray
    max_gain_dir: np.ndarray
    max_gain: float
    slots: np.ndarray
    fpa_positions: np.ndarray
    sensing_layout: sensing.SensingLayout


def _centered_feeds(mx: int, my: int, spacing: float, n_feeds: int, min_dist: float) -> np.ndarray:
    cx, cy = (mx - 1) * spacing / 2.0, (my - 1) * spacing / 2.0
    offsets = (np.arange(n_feeds) - (n_feeds - 1) / 2.0) * min_dist
    return np.stack([cx + offsets, np.full(n_feeds, cy), np.zeros(n_feeds)], axis=1)


@functools.lru_cache(maxsize=32)
def _hardware(key: tuple) -> Hardware:
    (mx, my, spacing, n_feeds, eta, refractive, carrier, feed_min, feed_mode, align_mode, coarse, restarts,
     step, search_seed, n_slots, slot_radius, n_surf, snx, sny, sspacing) = key
    wavelength = 3e8 / carrier
    min_dist = wavelength / 2.0 if feed_min is None else feed_min
    if feed_mode == "optimized":
        cfg = SearchConfig(coarse=coarse, restarts=restarts, step=step, seed=search_seed)
        best = cached_max_gain(mx, my, spacing, n_feeds, eta, refractive, carrier, feed_min, cfg)
        layout = SurfaceLayout(mx, my, spacing, best.feeds)
        weights, direction, gain = best.weights, best.direction, best.gain
    else:
        layout = SurfaceLayout(mx, my, spacing, _centered_feeds(mx, my, spacing, n_feeds, min_dist))
        weights = np.full(n_feeds, 1.0 / n_feeds)
        em0 = em_response(layout, eta, refractive, carrier)
        ticks = np.linspace(-1.0, 1.0, 201)
        uu, vv = np.meshgrid(ticks, ticks, indexing="ij")
        uv = np.stack([uu.ravel(), vv.ravel()], axis=1)
        uv = uv[(uv ** 2).sum(axis=1) <= 1.0]
        dirs = np.hstack([uv, np.sqrt(1.0 - (uv ** 2).sum(axis=1, keepdims=True))])
        g = directional_gain(layout, em0, weights, dirs)
        direction, gain = dirs[int(np.argmax(g))], float(g.max())
    if align_mode == "normal":
        em_tmp = em_response(layout, eta, refractive, carrier)
        direction, gain = E3.copy(), float(directional_gain(layout, em_tmp, weights, E3[None])[0])
    em = em_response(layout, eta, refractive, carrier)
    return Hardware(layout, em, np.asarray(weights), np.asarray(direction), gain,
                    fibonacci_sphere(n_slots, slot_radius), fibonacci_sphere(n_surf, slot_radius),
                    sensing.SensingLayout(snx, sny, sspacing))


def hardware(sc: Scenario) -> Hardware:
    key = (sc.mx, sc.my, sc.element_spacing, sc.n_feeds, sc.eta, sc.refractive, sc.carrier_hz,
           sc.feed_min_distance, sc.feed_mode, sc.align_mode, sc.search_coarse, sc.search_restarts,
           sc.search_step, sc.search_seed, sc.n_slots, sc.slot_radius, sc.n_surfaces, sc.sense_nx, sc.sense_ny,
           sc.sensing_spacing)
    return _hardware(key)


def channel_config(sc: Scenario) -> ChannelConfig:
    return ChannelConfig(
        n_receivers=sc.n_receivers, n_surfaces=sc.n_surfaces, n_nlos=sc.n_nlos, rician_k_db=sc.rician_k_db,
        wavelength=sc.wavelength, path_loss_exponent=sc.path_loss_exponent, radius_min=sc.rx_radius_min,
        radius_max=sc.rx_radius_max, height=sc.rx_height, mask_mode=sc.mask_mode,
    )


def initial_poses(hw: Hardware) -> list[SurfacePose]:
    """Benchmark placement: sphere points with radially pointing normals."""
    return [SurfacePose(radial_rotation(q), q) for q in hw.fpa_positions]


def nearest_slots(table: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Distinct slots closest to each point, assigned greedily by distance."""
    dist = np.linalg.norm(points[:, None, :] - table[None, :, :], axis=-1)
    chosen = -np.ones(len(points), dtype=int)
    taken = set()
    for flat in np.argsort(dist, axis=None, kind="stable"):
        b, s = np.unravel_index(flat, dist.shape)
        if chosen[b] < 0 and s not in taken:
            chosen[b] = s
            taken.add(s)
    return chosen


def assign_receivers(positions: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """Permutation ``order`` maximising ``sum_b qhat_b . u_order[b]``: surface b serves receiver order[b]."""
    qhat = positions / np.linalg.norm(positions, axis=1, keepdims=True)
    score = qhat @ directions.T
    best, best_val = None, -np.inf
    for perm in itertools.permutations(range(len(directions))):
        val = score[np.arange(len(perm)), perm].sum()
        if val > best_val:
            best, best_val = np.array(perm), val
    return best


@dataclass
class SensingOutcome:
    estimates: np.ndarray          # (K, 3) global directions handed to the orientation stage
    truths: np.ndarray             # (K, 3) dominant-path directions
    errors: np.ndarray             # (K,) squared distance estimate vs truth
    records: list = field(default_factory=list)


def dominant_directions(channel: ChannelRealization, poses) -> np.ndarray:
    out = []
    for k in range(channel.n_receivers):
        path, _ = channel.dominant_path(k, poses)
        out.append(channel.directions[k, path])
    return np.array(out)


def holographic_sensing(sc: Scenario, hw: Hardware, channel: ChannelRealization, poses, rng) -> list:
    rotations = [p.rotation for p in poses]
    out = []
    for k in range(channel.n_receivers):
        ref_power = sc.ref_power_factor * sc.sense_power_w * float(channel.path_loss[k].mean())
        images = []
        for b, pose in enumerate(poses):
            dirs_local = channel.directions[k] @ pose.rotation
            uplink = sensing.border_channel(dirs_local, channel.masked_gains(k, b, pose), hw.sensing_layout,
                                            sc.wavelength)
            ref = sensing.draw_reference(hw.sensing_layout, ref_power, sc.sigma1, rng)
            readings = sensing.meter_readings(uplink, ref, sc.sense_power_w, sc.sense_noise_w, rng)
            images.append(sensing.excite(readings, ref))
        out.append(sensing.fft_detect(images, hw.sensing_layout, sc.wavelength, rotations, pad=sc.fft_pad,
                                      mapping=sc.bin_mapping))
    return out


def ls_sensing(sc: Scenario, hw: Hardware, channel: ChannelRealization, poses, rng) -> list:
    rotations = [p.rotation for p in poses]
    elem_local = hw.layout.local_coords()
    patterns = sensing.random_patterns(sc.ls_snapshots, hw.layout.n_elements, rng)
    out = []
    for k in range(channel.n_receivers):
        signals = []
        for b, pose in enumerate(poses):
            dirs_local = channel.directions[k] @ pose.rotation
            signals.append(sensing.feed_signals(dirs_local, channel.masked_gains(k, b, pose), elem_local, hw.em,
                                                patterns, sc.sense_power_w, sc.sense_noise_w, sc.wavelength, rng))
        out.append(sensing.ls_baseline_detect(signals, hw.em, elem_local, patterns, sc.wavelength, rotations,
                                              sc.ls_grid))
    return out


def inject_error(truths: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
    """Rotate each truth so that its squared distance to the result equals ``level``."""
    angle = np.arccos(np.clip(1.0 - level / 2.0, -1.0, 1.0))
    out = []
    for f in truths:
        g = rng.standard_normal(3)
        g -= (g @ f) * f
        g /= np.linalg.norm(g)
        out.append(np.cos(angle) * f + np.sin(angle) * g)
    return np.array(out)


def stage_sensing(sc: Scenario, hw: Hardware, channel: ChannelRealization, seed: int) -> SensingOutcome:
    poses = initial_poses(hw)
    truths = dominant_directions(channel, poses)
    records = []
    if sc.scheme == "perfect_csi":
        est = truths.copy()
    elif sc.scheme == "los_only":
        est = channel.directions[:, 0].copy()
    elif sc.rmse_injection is not None:
        est = inject_error(truths, sc.rmse_injection, stream(seed, STREAM_INJECTION))
    elif sc.scheme == "ls_sensing":
        records = ls_sensing(sc, hw, channel, poses, stream(seed, STREAM_LS))
        est = np.array([r.global_direction for r in records])
    else:
        records = holographic_sensing(sc, hw, channel, poses, stream(seed, STREAM_SENSING))
        est = np.array([r.global_direction for r in records])
    est = est / np.linalg.norm(est, axis=1, keepdims=True)
    return SensingOutcome(est, truths, np.sum((est - truths) ** 2, axis=1), records)


def stage_orientation(sc: Scenario, hw: Hardware, sensed: np.ndarray) -> tuple[OrientationSolution, np.ndarray]:
    """Returns the solution and the receiver order (surface b serves receiver order[b])."""
    order = assign_receivers(hw.fpa_positions, sensed)
    problem = OrientationProblem(
        sensed=sensed[order], max_gain_dir=hw.max_gain_dir, slots=hw.slots, layout=hw.layout, em=hw.em,
        p_tx=sc.p_tx_w, wavelength=sc.wavelength, d_min=sc.d_min, mask_mode=sc.mask_mode, eps=sc.eps,
        max_outer=sc.max_outer, max_inner=sc.max_inner,
    )
    start = nearest_slots(hw.slots, hw.fpa_positions)
    if sc.scheme == "fpa":
        sol = optimize_orientation(problem, "radial", fixed_positions=hw.fpa_positions)
    elif sc.scheme == "rotation_only":
        sol = optimize_orientation(problem, "sensed", fixed_positions=hw.fpa_positions)
    elif sc.scheme == "translation_only":
        sol = optimize_orientation(problem, "radial", initial_slots=start)
    else:
        sol = optimize_orientation(problem, "sensed", initial_slots=start)
    return sol, order


def equivalent_channels(sc: Scenario, hw: Hardware, channel: ChannelRealization, sol: OrientationSolution,
                        sensed_ordered: np.ndarray, order: np.ndarray) -> np.ndarray:
    """(K, B, Q) per-feed channels through the final surfaces' beamformers."""
    k_count, b_count, q_count = len(order), len(sol.poses), hw.layout.n_feeds
    hbar = np.zeros((k_count, b_count, q_count), dtype=complex)
    for b, pose in enumerate(sol.poses):
        steer = design_steering(pose, hw.layout, sensed_ordered[b], sc.wavelength)
        psi = holo_patterns(steer, hw.em) @ sol.weights[b]
        for k in range(k_count):
            h = channel.channel_vector(int(order[k]), b, pose, hw.layout)
            hbar[k, b] = equivalent_channel(h, psi, hw.em.matrix)
    return hbar


def overhead_scale(sc: Scenario, layout: SurfaceLayout) -> float:
    """Fraction of the coherence block left after pilots."""
    blocks = sc.paths_per_receiver if sc.pilot_blocks is None else sc.pilot_blocks
    if sc.scheme == "perfect_csi":
        symbols = sc.pilot_alpha * sc.n_receivers * blocks * np.log2(sc.n_surfaces * layout.n_elements)
    else:
        symbols = sc.pilot_alpha * sc.n_receivers * blocks * np.log2(sc.n_surfaces * layout.n_feeds)
    return float(max(0.0, (sc.coherence_time - symbols) / sc.coherence_time))


@dataclass
class Prepared:
    """Outputs of the first two stages, reusable across downlink settings."""

    scenario: Scenario
    seed: int
    hardware: Hardware
    channel: ChannelRealization
    sensing: SensingOutcome
    orientation: OrientationSolution
    order: np.ndarray
    hbar: np.ndarray


@dataclass
class ProtocolResult:
    scheme: str
    seed: int
    status: str
    metrics: IdetMetrics | None
    idet: IdetResult | None
    prepared: Prepared
    overhead: float
    min_dc: float
    min_dc_raw: float
    certificate: dict = field(default_factory=dict)


def prepare(sc: Scenario, seed: int) -> Prepared:
    hw = hardware(sc)
    channel = draw_channel(channel_config(sc), np.random.SeedSequence([seed, STREAM_CHANNEL]))
    sensed = stage_sensing(sc, hw, channel, seed)
    sol, order = stage_orientation(sc, hw, sensed.estimates)
    hbar = equivalent_channels(sc, hw, channel, sol, sensed.estimates[order], order)
    if sc.csi_noise_var > 0:
        rng = stream(seed, STREAM_CSI)
        hbar = hbar + np.sqrt(sc.csi_noise_var / 2.0) * (rng.standard_normal(hbar.shape)
                                                         + 1j * rng.standard_normal(hbar.shape))
    return Prepared(sc, seed, hw, channel, sensed, sol, order, hbar)


def transmit(prep: Prepared, sc: Scenario | None = None) -> ProtocolResult:
    """Downlink stage on prepared channels; ``sc`` may change downlink-only knobs such as ``r0``."""
    sc = prep.scenario if sc is None else sc
    curve = EhCurve(sc.eh_xi, sc.eh_nu, sc.eh_e0_mw * 1e-3, sc.eh_em_mw * 1e-3)
    scale = overhead_scale(sc, prep.hardware.layout) if sc.apply_overhead else 1.0
    try:
        res = optimize_idet(prep.hbar, sc.p_tx_w, sc.r0, curve, sc.noise_w, sc.cov_noise_w, sc.eps, sc.max_inner)
    except InfeasibleError as exc:
        return ProtocolResult(sc.scheme, prep.seed, "infeasible", None, None, prep, scale, 0.0, 0.0, exc.certificate)
    raw = res.metrics.min_dc
    return ProtocolResult(sc.scheme, prep.seed, "ok", res.metrics, res, prep, scale, scale * raw, raw)


def run_protocol(sc: Scenario, seed: int) -> ProtocolResult:
    """Sensing, orientation and transmission for ``sc.scheme`` on trial ``seed``."""
    return transmit(prepare(sc, seed), sc)
