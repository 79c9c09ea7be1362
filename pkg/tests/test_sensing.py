import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from holoidet.errors import InvalidArgumentError, NoDetectionError
from holoidet.geometry import SurfaceLayout
from holoidet.rhs import em_response
from holoidet.sensing import (
    HolographicImage,
    SensingLayout,
    bin_directions,
    border_channel,
    correlation,
    draw_reference,
    excite,
    feed_signals,
    fft_detect,
    ls_baseline_detect,
    matched_filter_oracle,
    meter_readings,
    random_patterns,
    rmse,
)

WAVELENGTH = 0.01
P_S = 0.01


def front(f1, f2):
    return np.array([f1, f2, np.sqrt(1.0 - f1 * f1 - f2 * f2)])


def image_for(layout, direction, gain, rng, power_factor=1e6, noise=0.0):
    ref = draw_reference(layout, power_factor * P_S * abs(gain) ** 2, 0.5, rng)
    h = border_channel(direction, [gain], layout, WAVELENGTH)
    return excite(meter_readings(h, ref, P_S, noise, rng), ref), ref, h


def test_layout_counts_and_border():
    layout = SensingLayout(5, 4, WAVELENGTH / 2)
    assert layout.count == 14 == layout.border_mask.sum()
    assert not layout.border_mask[1:-1, 1:-1].any()
    assert layout.border_coords().shape == (14, 3)
    with pytest.raises(InvalidArgumentError):
        SensingLayout(1, 4, 0.005)


def test_border_channel_broadside_and_interior():
    layout = SensingLayout(6, 5, WAVELENGTH / 2)
    h = border_channel(np.array([0.0, 0.0, 1.0]), [0.3 - 0.1j], layout, WAVELENGTH)
    np.testing.assert_allclose(h[layout.border_mask], 0.3 - 0.1j, atol=1e-15)
    assert np.all(h[~layout.border_mask] == 0)


def test_border_channel_matches_elementwise_evaluation(rng):
    layout = SensingLayout(7, 6, WAVELENGTH / 3)
    dirs = np.array([front(0.3, -0.2), front(-0.5, 0.1)])
    gains = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    h = border_channel(dirs, gains, layout, WAVELENGTH)
    coords = layout.grid_coords()
    k = 2 * np.pi / WAVELENGTH
    for ix in range(7):
        for iy in range(6):
            expect = sum(g * np.exp(1j * k * f @ coords[ix, iy]) for f, g in zip(dirs, gains))
            expect = expect if layout.border_mask[ix, iy] else 0.0
            assert abs(h[ix, iy] - expect) < 1e-12


def test_reference_amplitude(rng):
    layout = SensingLayout(8, 8, WAVELENGTH / 2)
    ref = draw_reference(layout, 4.0, 0.5, rng)
    np.testing.assert_allclose(np.abs(ref.values[layout.border_mask]), 2.0, atol=1e-14)
    assert np.all(ref.values[~layout.border_mask] == 0)


def test_meter_readings_zero_signal_and_positivity(rng):
    layout = SensingLayout(6, 6, WAVELENGTH / 2)
    ref = draw_reference(layout, 2.5, 0.5, rng)
    zero = meter_readings(np.zeros((6, 6), complex), ref, P_S, 0.0, None)
    np.testing.assert_allclose(zero[layout.border_mask], 2.5, rtol=1e-14)
    noisy = meter_readings(border_channel(front(0.1, 0.2), [1.0], layout, WAVELENGTH), ref, P_S, 1e-3, rng)
    assert np.isrealobj(noisy) and noisy.min() >= 0.0
    np.testing.assert_array_equal(excite(zero, ref).values, 0.0)


@given(st.integers(0, 10_000))
def test_meter_approximation_residual_bound(seed):
    rng = np.random.default_rng(seed)
    layout = SensingLayout(6, 5, WAVELENGTH / 2)
    gain = rng.standard_normal() + 1j * rng.standard_normal()
    ref = draw_reference(layout, 1e3, 0.5, rng)
    h = border_channel(front(*rng.uniform(-0.6, 0.6, 2)), [gain], layout, WAVELENGTH)
    y = np.sqrt(P_S) * h
    readings = meter_readings(h, ref, P_S, 0.0, None)
    linear = ref.power + 2 * np.real(np.conj(y) * ref.values)
    residual = (readings - linear)[layout.border_mask]
    assert np.all(residual <= np.abs(y).max() ** 2 * (1 + 1e-9) + 1e-12)


def test_correlation_at_truth_approaches_scaled_gain(rng):
    layout = SensingLayout(64, 64, WAVELENGTH / 2)
    gain = 0.02 - 0.01j
    f = front(0.25, -0.4)
    img, ref, _ = image_for(layout, f, gain, rng)
    c = correlation(img, layout, f[None], WAVELENGTH)[0]
    target = np.sqrt(P_S) * ref.power * gain
    # residual terms average like 1/sqrt(N) through the random reference phase
    assert abs(c - target) / abs(target) < 4.0 / np.sqrt(layout.count)


def test_leakage_at_orthogonal_bin_is_small(rng):
    layout = SensingLayout(32, 32, WAVELENGTH / 2)
    fx, fy = bin_directions(layout, WAVELENGTH)
    truth = front(fx[20], fy[14])
    img, ref, _ = image_for(layout, truth, 1.0, rng)
    peak = abs(correlation(img, layout, truth[None], WAVELENGTH)[0])
    other = abs(correlation(img, layout, front(fx[8], fy[22])[None], WAVELENGTH)[0])
    assert other < 0.25 * peak


@given(st.integers(0, 10_000))
def test_fft_matches_oracle_on_bin_aligned_direction(seed):
    rng = np.random.default_rng(seed)
    layout = SensingLayout(16, 16, WAVELENGTH / 2)
    uv, _ = __import__("holoidet.sensing", fromlist=["bin_grid"]).bin_grid(layout, WAVELENGTH)
    uv = uv[(uv ** 2).sum(axis=1) < 0.8]
    truth = front(*uv[rng.integers(len(uv))])
    img, _, _ = image_for(layout, truth, np.exp(1j * rng.uniform(-3, 3)), rng)
    est = fft_detect([img], layout, WAVELENGTH, pad=1)
    oracle = matched_filter_oracle(img, layout, WAVELENGTH, 1)
    np.testing.assert_allclose(est.local_direction, truth, atol=1e-9)
    np.testing.assert_allclose(oracle.local_direction, truth, atol=1e-9)
    assert est.bins == oracle.bins


def test_alias_pair_at_full_wavelength_spacing():
    # odd grid puts every element on a whole multiple of the wavelength
    layout = SensingLayout(17, 17, WAVELENGTH)
    rng = np.random.default_rng(5)
    ref = draw_reference(layout, 1e3, 0.5, rng)
    images = []
    for f1 in (0.6, 0.6 - 1.0):
        h = border_channel(front(f1, 0.0), [1.0], layout, WAVELENGTH)
        images.append(excite(meter_readings(h, ref, P_S, 0.0, None), ref))
    np.testing.assert_allclose(np.abs(np.fft.fft2(images[0].values)), np.abs(np.fft.fft2(images[1].values)),
                               rtol=1e-6, atol=1e-9)


def test_off_grid_error_within_one_bin(rng):
    layout = SensingLayout(32, 32, WAVELENGTH / 2)
    width = WAVELENGTH / (32 * layout.spacing)
    for _ in range(10):
        truth = front(*rng.uniform(-0.5, 0.5, 2))
        img, _, _ = image_for(layout, truth, 1.0, rng)
        est = fft_detect(img, layout, WAVELENGTH)
        assert np.all(np.abs(est.local_direction[:2] - truth[:2]) <= width)


def test_fft_detect_picks_strongest_surface_and_rotates(rng):
    layout = SensingLayout(16, 16, WAVELENGTH / 2)
    weak, _, _ = image_for(layout, front(0.0, 0.0), 0.1, rng)
    strong, _, _ = image_for(layout, front(0.0, 0.0), 1.0, rng)
    rot = np.array([[0, -1.0, 0], [1.0, 0, 0], [0, 0, 1.0]])
    est = fft_detect([weak, strong], layout, WAVELENGTH, rotations=[np.eye(3), rot])
    assert est.surface == 1
    np.testing.assert_allclose(est.global_direction, rot @ est.local_direction)
    assert est.local_direction[2] >= 0 and abs(np.linalg.norm(est.local_direction) - 1) < 1e-12


def test_zero_image_is_no_detection():
    layout = SensingLayout(8, 8, WAVELENGTH / 2)
    zero = HolographicImage(np.zeros((8, 8), complex))
    with pytest.raises(NoDetectionError):
        fft_detect(zero, layout, WAVELENGTH)
    with pytest.raises(NoDetectionError):
        matched_filter_oracle(zero, layout, WAVELENGTH)


def test_oracle_exact_on_explicit_grid(rng):
    layout = SensingLayout(12, 12, WAVELENGTH / 2)
    grid = rng.uniform(-0.6, 0.6, (50, 2))
    truth = front(*grid[17])
    img, _, _ = image_for(layout, truth, 1.0, rng)
    np.testing.assert_allclose(matched_filter_oracle(img, layout, WAVELENGTH, grid).local_direction, truth, atol=1e-12)


def ls_setup(rng, truth, snapshots=8):
    layout = SurfaceLayout(8, 8, WAVELENGTH / 2, np.array([[0.0175, 0.0175, 0.0]]))
    em = em_response(layout)
    patterns = random_patterns(snapshots, 64, rng)
    y = feed_signals(truth, [1.0], layout.local_coords(), em, patterns, P_S, 0.0, WAVELENGTH, None)
    return layout, em, patterns, y


def test_ls_baseline_recovers_noise_free_direction(rng):
    truth = front(0.25, -0.125)
    layout, em, patterns, y = ls_setup(rng, truth)
    grid = 65  # ticks at multiples of 1/32 so the truth is on the grid
    est = ls_baseline_detect(y, em, layout.local_coords(), patterns, WAVELENGTH, grid=grid)
    np.testing.assert_allclose(est.local_direction, truth, atol=1e-9)


def test_ls_residual_is_smallest_at_truth(rng):
    truth = front(0.25, -0.125)
    layout, em, patterns, y = ls_setup(rng, truth)
    k = 2 * np.pi / WAVELENGTH
    coords = layout.local_coords()

    def residual(f):
        model = (patterns * np.exp(1j * k * coords @ f)[None, :]) @ em.matrix * np.sqrt(P_S)
        m, v = model.ravel(), y.ravel()
        return np.vdot(v, v).real - abs(np.vdot(m, v)) ** 2 / np.vdot(m, m).real

    at_truth = residual(truth)
    assert abs(at_truth) < 1e-12 * np.vdot(y, y).real
    for f1, f2 in [(0.0, 0.0), (0.3, -0.1), (-0.4, 0.4), (0.25, 0.125)]:
        assert residual(front(f1, f2)) >= at_truth


def test_ls_zero_signal_and_no_feed_errors(rng):
    layout, em, patterns, y = ls_setup(rng, front(0.1, 0.1))
    with pytest.raises(NoDetectionError):
        ls_baseline_detect(np.zeros_like(y), em, layout.local_coords(), patterns, WAVELENGTH, grid=17)


def test_rmse_examples():
    f = np.array([[0.0, 0.0, 1.0]])
    assert rmse(f, f) == 0.0
    assert rmse(f, -f) == pytest.approx(4.0)
    assert rmse([[1.0, 0, 0]], [[0, 1.0, 0]]) == pytest.approx(2.0)
    assert rmse([[1.0, 0, 0], [0, 0, 1.0]], [[1.0, 0, 0], [0, 0, -1.0]]) == pytest.approx(2.0)
    with pytest.raises(InvalidArgumentError):
        rmse(np.empty((0, 3)), np.empty((0, 3)))


def test_image_csv_export(tmp_path, rng):
    layout = SensingLayout(5, 5, WAVELENGTH / 2)
    img, _, _ = image_for(layout, front(0.1, 0.0), 1.0, rng)
    img.to_csv(tmp_path / "img.csv")
    back = np.loadtxt(tmp_path / "img.csv", delimiter=",")
    np.testing.assert_array_equal(back[:5] + 1j * back[5:], img.values)
