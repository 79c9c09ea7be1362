"""Uplink direction sensing with border power meters and a reference wave.

Each surface carries power-meter elements on the border of an N_x x N_y grid.
A meter reads ``|y + s_ref|^2``; subtracting the reference power and
multiplying by the reference re-creates a phase-bearing image whose 2D
spatial spectrum peaks at the uplink direction. A least-squares detector
that only observes the feed ports is provided as the comparison baseline.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from holoidet import kernels
from holoidet.errors import InvalidArgumentError, NoDetectionError
from holoidet.rhs import EmResponse


@dataclass(frozen=True)
class SensingLayout:
    """Border elements of an ``nx`` x ``ny`` grid, centred on the surface."""

    nx: int
    ny: int
    spacing: float

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise InvalidArgumentError("sensing grid needs at least 2x2 elements")
        if not self.spacing > 0:
            raise InvalidArgumentError("sensing spacing must be positive")

    @property
    def count(self) -> int:
        return 2 * self.nx + 2 * self.ny - 4

    @property
    def border_mask(self) -> np.ndarray:
        mask = np.zeros((self.nx, self.ny), dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return mask

    def grid_coords(self) -> np.ndarray:
        """(nx, ny, 3) centred local coordinates of the full grid."""
        x = (np.arange(self.nx) - (self.nx - 1) / 2.0) * self.spacing
        y = (np.arange(self.ny) - (self.ny - 1) / 2.0) * self.spacing
        xx, yy = np.meshgrid(x, y, indexing="ij")
        return np.stack([xx, yy, np.zeros_like(xx)], axis=-1)

    def border_coords(self) -> np.ndarray:
        """(N, 3) border coordinates in row-major grid order."""
        return self.grid_coords()[self.border_mask]


@dataclass(frozen=True)
class ReferenceField:
    values: np.ndarray   # (nx, ny) complex, zero off the border
    power: float         # A, the per-element reference power


def draw_reference(layout: SensingLayout, power: float, sigma1: float, rng: np.random.Generator) -> ReferenceField:
    """Reference wave ``sqrt(A) exp(j 2 pi chi)`` with ``chi ~ U(-sigma1, sigma1)``."""
    chi = rng.uniform(-sigma1, sigma1, size=(layout.nx, layout.ny))
    values = np.where(layout.border_mask, np.sqrt(power) * np.exp(2j * np.pi * chi), 0.0)
    return ReferenceField(values, float(power))


@dataclass(frozen=True)
class HolographicImage:
    values: np.ndarray   # (nx, ny) complex, interior exactly zero

    def to_csv(self, path) -> None:
        stacked = np.vstack([self.values.real, self.values.imag])
        np.savetxt(path, stacked, delimiter=",", fmt="%.17g",
                   header=f"rows 0..{self.values.shape[0] - 1} real part, then imaginary part", comments="# ")


@dataclass(frozen=True)
class AngleEstimate:
    local_direction: np.ndarray
    global_direction: np.ndarray
    surface: int
    bins: tuple[int, int]
    peak: float

    def to_dict(self) -> dict:
        return {
            "local_direction": self.local_direction.tolist(),
            "global_direction": self.global_direction.tolist(),
            "surface": self.surface,
            "bins": list(self.bins),
            "peak": self.peak,
        }


def border_channel(dirs_local: np.ndarray, gains: np.ndarray, layout: SensingLayout,
                   wavelength: float) -> np.ndarray:
    """Uplink channel on the border: ``sum_i gain_i exp(j k f_i . r)``.

    ``dirs_local`` are (L, 3) path directions in the surface frame and
    ``gains`` the masked path gains. Interior entries are zero.
    """
    k = 2.0 * np.pi / wavelength
    dirs_local = np.atleast_2d(dirs_local)
    gains = np.atleast_1d(np.asarray(gains, dtype=complex))
    phase = k * np.einsum("ijc,lc->ijl", layout.grid_coords(), dirs_local)
    h = np.exp(1j * phase) @ gains
    return np.where(layout.border_mask, h, 0.0)


def meter_readings(uplink: np.ndarray, ref: ReferenceField, tx_power: float, noise_var: float,
                   rng: np.random.Generator | None) -> np.ndarray:
    """Exact power-meter values ``|sqrt(P_S) h + z + s_ref|^2`` on the border."""
    mask = ref.values != 0
    y = np.sqrt(tx_power) * uplink
    if noise_var > 0:
        if rng is None:
            raise InvalidArgumentError("noise requires a random generator")
        z = rng.standard_normal(uplink.shape + (2,)) @ np.array([1.0, 1j]) * np.sqrt(noise_var / 2.0)
        y = y + z
    return np.where(mask, np.abs(y + ref.values) ** 2, 0.0)


def excite(readings: np.ndarray, ref: ReferenceField, power: float | None = None) -> HolographicImage:
    """Holographic image ``(reading - |s_ref|^2) * s_ref`` on the border.

    ``power`` overrides the per-element reference power with a scalar.
    """
    power = np.abs(ref.values) ** 2 if power is None else power
    mask = ref.values != 0
    return HolographicImage(np.where(mask, (readings - power) * ref.values, 0.0))


def correlation(image: HolographicImage, layout: SensingLayout, dirs_local: np.ndarray,
                wavelength: float) -> np.ndarray:
    """``(1/N) sum_n exp(-j k f . r_n) H_n`` for each row of ``dirs_local``."""
    vals = image.values[layout.border_mask]
    pos = np.ascontiguousarray(layout.border_coords()[:, :2])
    dirs = np.ascontiguousarray(np.atleast_2d(dirs_local)[:, :2], dtype=float)
    return kernels.border_correlation(np.ascontiguousarray(vals.real), np.ascontiguousarray(vals.imag), pos,
                                      dirs, 2.0 * np.pi / wavelength)


def bin_directions(layout: SensingLayout, wavelength: float, pad: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Direction cosines of the centred DFT bins along x and y."""
    px, py = pad * layout.nx, pad * layout.ny
    kx = np.arange(px) - px // 2
    ky = np.arange(py) - py // 2
    return wavelength * kx / (px * layout.spacing), wavelength * ky / (py * layout.spacing)


def _literal_bin_directions(layout: SensingLayout, wavelength: float) -> tuple[np.ndarray, np.ndarray]:
    # axis-swapped variant with d / (N lambda) scaling, kept for comparison only
    n = layout.count
    f1_from_ny = (2 * np.arange(layout.ny) - layout.ny + 1) * layout.spacing / (2 * n * wavelength)
    f2_from_nx = (2 * np.arange(layout.nx) - layout.nx + 1) * layout.spacing / (2 * n * wavelength)
    return f2_from_nx, f1_from_ny


def _front(f1: float, f2: float) -> np.ndarray:
    r2 = f1 * f1 + f2 * f2
    if r2 > 1.0:
        scale = 1.0 / np.sqrt(r2)
        f1, f2, r2 = f1 * scale, f2 * scale, 1.0
    return np.array([f1, f2, np.sqrt(max(0.0, 1.0 - r2))])


def fft_spectrum(image: HolographicImage, pad: int = 4) -> np.ndarray:
    """Centred |2D DFT| of the image, zero-padded by ``pad``, divided by N."""
    nx, ny = image.values.shape
    spec = np.fft.fftshift(np.fft.fft2(image.values, s=(pad * nx, pad * ny)))
    count = 2 * nx + 2 * ny - 4
    return np.abs(spec) / count


def fft_detect(images, layout: SensingLayout, wavelength: float, rotations=None, pad: int = 4,
               mapping: str = "dft") -> AngleEstimate:
    """Strongest spectral peak over all surfaces' images.

    Bins map to direction cosines with ``f1 = lambda kx / (Px d_S)`` on the
    centred grid, and only bins inside the unit disk compete. ``mapping="literal"``
    uses the axis-swapped variant on unpadded bins instead.
    """
    if isinstance(images, HolographicImage):
        images = [images]
    if rotations is None:
        rotations = [np.eye(3)] * len(images)
    if mapping == "dft":
        fx, fy = bin_directions(layout, wavelength, pad)
    elif mapping == "literal":
        pad = 1
        fx, fy = _literal_bin_directions(layout, wavelength)
    else:
        raise InvalidArgumentError(f"unknown bin mapping {mapping!r}")
    visible = fx[:, None] ** 2 + fy[None, :] ** 2 <= 1.0 + 1e-12

    best = (-1.0, 0, (0, 0))
    for b, image in enumerate(images):
        if mapping == "literal":
            spec = np.abs(np.fft.fft2(image.values)) / layout.count
        else:
            spec = fft_spectrum(image, pad)
        spec = np.where(visible, spec, -1.0)
        idx = np.unravel_index(int(np.argmax(spec)), spec.shape)
        if spec[idx] > best[0]:
            best = (float(spec[idx]), b, (int(idx[0]), int(idx[1])))
    peak, b_star, (ix, iy) = best
    if peak <= 0.0:
        raise NoDetectionError("all holographic images are zero")
    local = _front(fx[ix], fy[iy])
    if mapping == "dft":
        bins = (ix - (pad * layout.nx) // 2, iy - (pad * layout.ny) // 2)
    else:
        bins = (ix, iy)
    return AngleEstimate(local, rotations[b_star] @ local, b_star, bins, peak)


def bin_grid(layout: SensingLayout, wavelength: float, refine: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Visible (u, v) points on the DFT bin grid refined ``refine`` times, and their bin labels."""
    fx, fy = bin_directions(layout, wavelength, refine)
    uu, vv = np.meshgrid(fx, fy, indexing="ij")
    kx = np.arange(refine * layout.nx) - (refine * layout.nx) // 2
    ky = np.arange(refine * layout.ny) - (refine * layout.ny) // 2
    kk = np.stack(np.meshgrid(kx, ky, indexing="ij"), axis=-1).reshape(-1, 2)
    uv = np.stack([uu.ravel(), vv.ravel()], axis=1)
    keep = (uv ** 2).sum(axis=1) <= 1.0 + 1e-12
    return uv[keep], kk[keep]


def matched_filter_oracle(image: HolographicImage, layout: SensingLayout, wavelength: float,
                          grid: int | np.ndarray = 1) -> AngleEstimate:
    """Brute-force correlation scan; the argmax is the oracle estimate.

    ``grid`` is either a refinement factor of the DFT bin grid or an explicit
    (G, 2) array of direction cosines. Bin labels are only meaningful for the
    former.
    """
    if isinstance(grid, (int, np.integer)):
        uv, labels = bin_grid(layout, wavelength, int(grid))
    else:
        uv = np.asarray(grid, dtype=float)
        uv = uv[(uv ** 2).sum(axis=1) <= 1.0 + 1e-12]
        labels = np.full((uv.shape[0], 2), -1)
    mags = np.abs(correlation(image, layout, uv, wavelength))
    best = int(np.argmax(mags))
    if mags[best] == 0.0:
        raise NoDetectionError("holographic image is zero")
    local = _front(*uv[best])
    return AngleEstimate(local, local.copy(), 0, (int(labels[best, 0]), int(labels[best, 1])), float(mags[best]))


def random_patterns(n_snapshots: int, n_elements: int, rng: np.random.Generator) -> np.ndarray:
    """(T, M) random amplitude patterns in [0, 1] used by the LS baseline."""
    return rng.uniform(0.0, 1.0, size=(n_snapshots, n_elements))


def feed_signals(dirs_local: np.ndarray, gains: np.ndarray, elem_local: np.ndarray, em: EmResponse,
                 patterns: np.ndarray, tx_power: float, noise_var: float, wavelength: float,
                 rng: np.random.Generator | None) -> np.ndarray:
    """(T, Q) feed-port observations ``Theta_q^T diag(Psi_t) h + z``."""
    k = 2.0 * np.pi / wavelength
    h = np.exp(1j * k * (elem_local @ np.atleast_2d(dirs_local).T)) @ np.atleast_1d(gains)
    y = np.sqrt(tx_power) * (patterns * h[None, :]) @ em.matrix
    if noise_var > 0:
        if rng is None:
            raise InvalidArgumentError("noise requires a random generator")
        y = y + rng.standard_normal(y.shape + (2,)) @ np.array([1.0, 1j]) * np.sqrt(noise_var / 2.0)
    return y


@functools.lru_cache(maxsize=8)
def _ls_dictionary(elem_key: bytes, n_elem: int, wavelength: float, grid: int):
    elem = np.frombuffer(elem_key).reshape(n_elem, 3)
    ticks = np.linspace(-1.0, 1.0, grid)
    uu, vv = np.meshgrid(ticks, ticks, indexing="ij")
    uv = np.stack([uu.ravel(), vv.ravel()], axis=1)
    uv = uv[(uv ** 2).sum(axis=1) <= 1.0]
    k = 2.0 * np.pi / wavelength
    steer = np.exp(1j * k * (uv @ elem[:, :2].T))
    steer.setflags(write=False)
    return uv, steer


def ls_baseline_detect(signals, em: EmResponse, elem_local: np.ndarray, patterns: np.ndarray,
                       wavelength: float, rotations=None, grid: int = 128) -> AngleEstimate:
    """Least-squares direction fit from feed-port observations only.

    For each candidate direction the model response ``m[t, q]`` is fitted with
    one complex gain; the residual is ``|y|^2 - |m^H y|^2 / |m|^2``. The
    direction and surface with the smallest residual (largest explained
    energy) win.
    """
    if em.n_feeds == 0:
        raise InvalidArgumentError("LS detection needs at least one feed")
    if isinstance(signals, np.ndarray) and signals.ndim == 2:
        signals = [signals]
    if rotations is None:
        rotations = [np.eye(3)] * len(signals)
    elem_local = np.ascontiguousarray(elem_local, dtype=float)
    uv, steer = _ls_dictionary(elem_local.tobytes(), elem_local.shape[0], float(wavelength), int(grid))

    best = (-1.0, 0, 0)
    for b, y in enumerate(signals):
        y = np.asarray(y)
        if not np.any(y):
            continue
        # model[g, t, q] = sum_m steer[g, m] * patterns[t, m] * em[m, q]
        basis = (patterns[:, :, None] * em.matrix[None, :, :]).reshape(patterns.shape[0], -1, em.n_feeds)
        model = np.einsum("gm,tmq->gtq", steer, basis, optimize=True).reshape(steer.shape[0], -1)
        proj = np.abs(model.conj() @ y.ravel()) ** 2 / np.maximum((np.abs(model) ** 2).sum(axis=1), 1e-300)
        g = int(np.argmax(proj))
        if proj[g] > best[0]:
            best = (float(proj[g]), b, g)
    explained, b_star, g_star = best
    if explained <= 0.0:
        raise NoDetectionError("feed signals are zero")
    local = _front(*uv[g_star])
    return AngleEstimate(local, rotations[b_star] @ local, b_star, (g_star, -1), float(np.sqrt(explained)))


def rmse(estimates, truths) -> float:
    """Mean squared distance between paired unit vectors (no square root)."""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    tru = np.atleast_2d(np.asarray(truths, dtype=float))
    if est.size == 0 or est.shape != tru.shape:
        raise InvalidArgumentError("need equally shaped, non-empty estimate and truth arrays")
    return float(np.mean(np.sum((est - tru) ** 2, axis=1)))
