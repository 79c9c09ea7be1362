# cython: language_level=3
"""Compiled loops for gain-map sampling and border correlation."""
import numpy as np

from libc.math cimport cos, sin, sqrt


def holo_gain_map(const double[:, ::1] elem_xy,
                  const double[:, ::1] feed_phase,
                  const double[::1] weights,
                  const double[:, ::1] dirs_uv,
                  double wavenumber,
                  double sqrt_eta):
    """Self-steered holographic gain for many local directions.

    Elements lie in the local z=0 plane, so only the first two direction
    components enter the steering phase.
    """
    cdef Py_ssize_t n_elem = elem_xy.shape[0]
    cdef Py_ssize_t n_feed = feed_phase.shape[1]
    cdef Py_ssize_t n_dir = dirs_uv.shape[0]
    cdef Py_ssize_t g, m, q
    cdef double u, v, beta, psi, amp, acc_re, acc_im, ts_re, ts_im, c, s
    cdef double scale = sqrt_eta / sqrt(<double>n_elem)

    # sum over feeds of exp(-j * feed_phase), independent of direction
    theta_re = np.zeros(n_elem)
    theta_im = np.zeros(n_elem)
    cdef double[::1] tre = theta_re
    cdef double[::1] tim = theta_im
    for m in range(n_elem):
        for q in range(n_feed):
            tre[m] += cos(feed_phase[m, q])
            tim[m] -= sin(feed_phase[m, q])

    out = np.empty(n_dir)
    cdef double[::1] res = out
    for g in range(n_dir):
        u = dirs_uv[g, 0]
        v = dirs_uv[g, 1]
        acc_re = 0.0
        acc_im = 0.0
        for m in range(n_elem):
            beta = wavenumber * (u * elem_xy[m, 0] + v * elem_xy[m, 1])
            amp = 0.0
            for q in range(n_feed):
                psi = beta - feed_phase[m, q]
                amp += weights[q] * 0.5 * (cos(psi) + 1.0)
            c = cos(beta)
            s = sin(beta)
            ts_re = tre[m]
            ts_im = tim[m]
            acc_re += amp * (c * ts_re - s * ts_im)
            acc_im += amp * (c * ts_im + s * ts_re)
        res[g] = scale * sqrt(acc_re * acc_re + acc_im * acc_im)
    return out


def border_correlation(const double[::1] image_re,
                       const double[::1] image_im,
                       const double[:, ::1] pos_xy,
                       const double[:, ::1] dirs_uv,
                       double wavenumber):
    """Mean of exp(-j k f.r) * image over border elements, per direction."""
    cdef Py_ssize_t n = pos_xy.shape[0]
    cdef Py_ssize_t n_dir = dirs_uv.shape[0]
    cdef Py_ssize_t g, i
    cdef double u, v, ph, c, s, acc_re, acc_im
    cdef double inv_n = 1.0 / <double>n

    out_re = np.empty(n_dir)
    out_im = np.empty(n_dir)
    cdef double[::1] ore = out_re
    cdef double[::1] oim = out_im
    for g in range(n_dir):
        u = dirs_uv[g, 0]
        v = dirs_uv[g, 1]
        acc_re = 0.0
        acc_im = 0.0
        for i in range(n):
            ph = wavenumber * (u * pos_xy[i, 0] + v * pos_xy[i, 1])
            c = cos(ph)
            s = sin(ph)
            # (c - j s) * (re + j im)
            acc_re += c * image_re[i] + s * image_im[i]
            acc_im += c * image_im[i] - s * image_re[i]
        ore[g] = acc_re * inv_n
        oim[g] = acc_im * inv_n
    return out_re + 1j * out_im
