"""Numpy implementations of the hot loops, used when the extension is absent."""
import numpy as np

_CHUNK = 2048


def holo_gain_map(elem_xy, feed_phase, weights, dirs_uv, wavenumber, sqrt_eta):
    elem_xy = np.ascontiguousarray(elem_xy, dtype=float)
    feed_phase = np.ascontiguousarray(feed_phase, dtype=float)
    weights = np.asarray(weights, dtype=float)
    dirs_uv = np.ascontiguousarray(dirs_uv, dtype=float)
    n_elem = elem_xy.shape[0]
    theta_sum = np.exp(-1j * feed_phase).sum(axis=1)
    scale = sqrt_eta / np.sqrt(n_elem)
    out = np.empty(dirs_uv.shape[0])
    for start in range(0, dirs_uv.shape[0], _CHUNK):
        uv = dirs_uv[start:start + _CHUNK]
        beta = wavenumber * (uv @ elem_xy.T)  # (G, M)
        amp = np.zeros_like(beta)
        for q in range(feed_phase.shape[1]):
            amp += weights[q] * 0.5 * (np.cos(beta - feed_phase[:, q]) + 1.0)
        acc = (np.exp(1j * beta) * amp) @ theta_sum
        out[start:start + _CHUNK] = scale * np.abs(acc)
    return out


def border_correlation(image_re, image_im, pos_xy, dirs_uv, wavenumber):
    image = np.asarray(image_re, dtype=float) + 1j * np.asarray(image_im, dtype=float)
    pos_xy = np.asarray(pos_xy, dtype=float)
    dirs_uv = np.asarray(dirs_uv, dtype=float)
    out = np.empty(dirs_uv.shape[0], dtype=complex)
    for start in range(0, dirs_uv.shape[0], _CHUNK):
        uv = dirs_uv[start:start + _CHUNK]
        out[start:start + _CHUNK] = np.exp(-1j * wavenumber * (uv @ pos_xy.T)) @ image
    return out / pos_xy.shape[0]
