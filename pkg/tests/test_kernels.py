import numpy as np
import pytest

from holoidet import _pykernels, kernels

BACKENDS = sorted(kernels.BACKENDS)


def gain_inputs(seed, n_elem=36, n_feeds=2, n_dirs=300):
    rng = np.random.default_rng(seed)
    elem = rng.uniform(0, 0.03, (n_elem, 2))
    phase = rng.uniform(0, 40, (n_elem, n_feeds))
    weights = rng.dirichlet(np.ones(n_feeds))
    uv = rng.uniform(-0.7, 0.7, (n_dirs, 2))
    return elem, phase, weights, uv


def direct_gain(elem, phase, weights, uv, k, sqrt_eta):
    out = []
    theta = sqrt_eta * np.exp(-1j * phase)
    for d in uv:
        a = np.exp(1j * k * elem @ d) / np.sqrt(len(elem))
        psi = (0.5 * (np.real(np.sqrt(len(elem)) / sqrt_eta * theta * a[:, None]) + 1.0)) @ weights
        out.append(abs((a * psi) @ theta.sum(axis=1)))
    return np.array(out)


@pytest.mark.parametrize("backend", BACKENDS)
def test_gain_map_matches_direct_evaluation(backend):
    impl = kernels.BACKENDS[backend]
    elem, phase, weights, uv = gain_inputs(0)
    got = impl.holo_gain_map(elem, phase, weights, uv, 628.3, 0.9)
    np.testing.assert_allclose(got, direct_gain(elem, phase, weights, uv, 628.3, 0.9), rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_border_correlation_matches_direct_sum(backend):
    impl = kernels.BACKENDS[backend]
    rng = np.random.default_rng(1)
    pos = rng.uniform(-0.05, 0.05, (60, 2))
    img = rng.standard_normal(60) + 1j * rng.standard_normal(60)
    uv = rng.uniform(-0.7, 0.7, (2500, 2))
    got = impl.border_correlation(img.real.copy(), img.imag.copy(), pos, uv, 628.3)
    expect = np.array([np.mean(np.exp(-1j * 628.3 * pos @ d) * img) for d in uv])
    np.testing.assert_allclose(got, expect, rtol=1e-10, atol=1e-12)


def test_backends_agree():
    elem, phase, weights, uv = gain_inputs(2, n_dirs=5000)
    ref = _pykernels.holo_gain_map(elem, phase, weights, uv, 628.3, 1.0)
    for impl in kernels.BACKENDS.values():
        np.testing.assert_allclose(impl.holo_gain_map(elem, phase, weights, uv, 628.3, 1.0), ref, rtol=1e-10)


def test_selected_backend_is_registered():
    assert kernels.BACKEND in kernels.BACKENDS
