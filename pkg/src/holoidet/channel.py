"""Rician multipath channel between receivers and surfaces.

Path directions are global and shared by all surfaces (far field, one
direction per scatterer per receiver). Complex gains are drawn per surface.
The antenna-gain mask is evaluated against a pose on demand, because poses
change during orientation while the propagation environment does not.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from holoidet.errors import InvalidArgumentError
from holoidet.geometry import SurfaceLayout, SurfacePose, element_positions

SPEED_OF_LIGHT = 3e8


def direction_vector(theta, phi) -> np.ndarray:
    """Unit direction from azimuth ``theta`` and elevation ``phi`` (radians).

    Broadcasts; the trailing axis holds the three components.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return np.stack([np.cos(theta) * np.cos(phi), np.sin(theta) * np.cos(phi), np.sin(phi)], axis=-1)


def direction_angles(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`direction_vector`: returns (azimuth, elevation)."""
    f = np.asarray(f, dtype=float)
    theta = np.arctan2(f[..., 1], f[..., 0])
    phi = np.arcsin(np.clip(f[..., 2], -1.0, 1.0))
    return theta, phi


def steering_from_positions(positions: np.ndarray, direction: np.ndarray, wavelength: float) -> np.ndarray:
    """Unit-norm steering vector(s) for element ``positions`` (M, 3).

    ``direction`` may be (3,) or (..., 3); the result has shape (..., M).
    """
    k = 2.0 * np.pi / wavelength
    phase = k * (np.asarray(direction, dtype=float) @ positions.T)
    return np.exp(1j * phase) / np.sqrt(positions.shape[0])


def steering(pose: SurfacePose, layout: SurfaceLayout, theta, phi, wavelength: float) -> np.ndarray:
    """Steering vector of one surface toward angles ``(theta, phi)``."""
    return steering_from_positions(element_positions(pose, layout), direction_vector(theta, phi), wavelength)


def free_space_path_loss(distance, wavelength: float, exponent: float = 2.0):
    """Power gain ``(lambda / 4 pi)^2 / d^exponent``; exponent 2 is free space."""
    distance = np.asarray(distance, dtype=float)
    return (wavelength / (4.0 * np.pi)) ** 2 / distance ** exponent


def antenna_mask(directions: np.ndarray, pose: SurfacePose, mode: str = "position") -> np.ndarray:
    """Boolean mask of which ``directions`` (..., 3) a surface can radiate to.

    ``mode="position"`` tests ``q . f > 0`` with the surface position ``q``;
    ``mode="normal"`` tests ``n . f > 0`` with the outward normal.
    """
    if mode == "position":
        ref = pose.position
    elif mode == "normal":
        ref = pose.normal
    else:
        raise InvalidArgumentError(f"unknown mask mode {mode!r}")
    return np.asarray(directions) @ ref > 0.0


@dataclass(frozen=True)
class PathComponent:
    theta: float
    phi: float
    eta: complex
    is_los: bool


@dataclass(frozen=True)
class ChannelConfig:
    """Parameters for :func:`draw_channel`. Distances in metres."""

    n_receivers: int = 3
    n_surfaces: int = 3
    n_nlos: int = 3
    rician_k_db: float = 10.0
    wavelength: float = 0.01
    path_loss_exponent: float = 2.0
    radius_min: float = 5.0
    radius_max: float = 25.0
    height: float = -2.0
    mask_mode: str = "position"
    receivers: np.ndarray | None = None


@dataclass(frozen=True)
class ChannelRealization:
    """One draw of the propagation environment.

    Arrays are indexed ``[k, path]`` for angles and ``[k, path, b]`` for gains;
    path 0 is the line-of-sight component.
    """

    receivers: np.ndarray      # (K, 3)
    theta: np.ndarray          # (K, L)
    phi: np.ndarray            # (K, L)
    gains: np.ndarray          # (K, L, B) complex
    path_loss: np.ndarray      # (K, B)
    rician_k: float
    wavelength: float
    mask_mode: str = "position"
    _dirs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_dirs", direction_vector(self.theta, self.phi))

    @property
    def n_receivers(self) -> int:
        return self.gains.shape[0]

    @property
    def n_paths(self) -> int:
        return self.gains.shape[1]

    @property
    def n_surfaces(self) -> int:
        return self.gains.shape[2]

    @property
    def directions(self) -> np.ndarray:
        """(K, L, 3) global unit directions of every path."""
        return self._dirs

    def mask(self, k: int, b: int, pose: SurfacePose) -> np.ndarray:
        return antenna_mask(self._dirs[k], pose, self.mask_mode)

    def masked_gains(self, k: int, b: int, pose: SurfacePose) -> np.ndarray:
        """Per-path ``Lambda * eta`` for receiver ``k`` and surface ``b``."""
        return np.where(self.mask(k, b, pose), self.gains[k, :, b], 0.0)

    def paths(self, k: int, b: int) -> list[PathComponent]:
        return [
            PathComponent(float(self.theta[k, i]), float(self.phi[k, i]), complex(self.gains[k, i, b]), i == 0)
            for i in range(self.n_paths)
        ]

    def channel_vector(self, k: int, b: int, pose: SurfacePose, layout: SurfaceLayout) -> np.ndarray:
        """Length-M channel of surface ``b`` toward receiver ``k``."""
        positions = element_positions(pose, layout)
        gains = self.masked_gains(k, b, pose)
        a = steering_from_positions(positions, self._dirs[k], self.wavelength)  # (L, M)
        return np.sqrt(layout.n_elements) * (gains @ a)

    def dominant_path(self, k: int, poses) -> tuple[int, int]:
        """(path, surface) with the largest unmasked ``|eta|^2``."""
        power = np.stack(
            [np.abs(self.masked_gains(k, b, pose)) ** 2 for b, pose in enumerate(poses)], axis=1
        )
        path, surface = np.unravel_index(int(np.argmax(power)), power.shape)
        return int(path), int(surface)

    def to_dict(self) -> dict:
        return {
            "receivers": self.receivers.tolist(),
            "theta": self.theta.tolist(),
            "phi": self.phi.tolist(),
            "gains_re": self.gains.real.tolist(),
            "gains_im": self.gains.imag.tolist(),
            "path_loss": self.path_loss.tolist(),
            "rician_k": self.rician_k,
            "wavelength": self.wavelength,
            "mask_mode": self.mask_mode,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChannelRealization":
        return cls(
            receivers=np.array(data["receivers"], dtype=float),
            theta=np.array(data["theta"], dtype=float),
            phi=np.array(data["phi"], dtype=float),
            gains=np.array(data["gains_re"], dtype=float) + 1j * np.array(data["gains_im"], dtype=float),
            path_loss=np.array(data["path_loss"], dtype=float),
            rician_k=float(data["rician_k"]),
            wavelength=float(data["wavelength"]),
            mask_mode=data.get("mask_mode", "position"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "ChannelRealization":
        return cls.from_dict(json.loads(text))


def place_receivers(cfg: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform-in-area placement on an annulus at fixed height."""
    r2 = rng.uniform(cfg.radius_min ** 2, cfg.radius_max ** 2, size=cfg.n_receivers)
    azimuth = rng.uniform(-np.pi, np.pi, size=cfg.n_receivers)
    r = np.sqrt(r2)
    return np.stack([r * np.cos(azimuth), r * np.sin(azimuth), np.full_like(r, cfg.height)], axis=1)


def draw_channel(cfg: ChannelConfig, seed) -> ChannelRealization:
    """Draw receivers, path angles and Rician gains from ``seed``."""
    rng = np.random.default_rng(seed)
    k_count, b_count, n_paths = cfg.n_receivers, cfg.n_surfaces, 1 + cfg.n_nlos
    receivers = place_receivers(cfg, rng) if cfg.receivers is None else np.asarray(cfg.receivers, dtype=float)
    if receivers.shape != (k_count, 3):
        raise InvalidArgumentError("receiver array must be (K, 3)")

    theta = np.empty((k_count, n_paths))
    phi = np.empty((k_count, n_paths))
    theta[:, 0], phi[:, 0] = direction_angles(receivers / np.linalg.norm(receivers, axis=1, keepdims=True))
    # NLoS directions uniform in solid angle over the upper hemisphere
    theta[:, 1:] = rng.uniform(-np.pi, np.pi, size=(k_count, cfg.n_nlos))
    phi[:, 1:] = np.arcsin(rng.uniform(0.0, 1.0, size=(k_count, cfg.n_nlos)))

    distance = np.linalg.norm(receivers, axis=1)
    omega = np.repeat(free_space_path_loss(distance, cfg.wavelength, cfg.path_loss_exponent)[:, None], b_count, axis=1)
    kr = 10.0 ** (cfg.rician_k_db / 10.0)

    gains = np.empty((k_count, n_paths, b_count), dtype=complex)
    los_phase = rng.uniform(-np.pi, np.pi, size=(k_count, b_count))
    gains[:, 0, :] = np.sqrt(kr / (kr + 1.0) * omega) * np.exp(1j * los_phase)
    nlos_std = np.sqrt(omega / (kr + 1.0) / 2.0)[:, None, :]
    noise = rng.standard_normal((k_count, cfg.n_nlos, b_count, 2))
    gains[:, 1:, :] = nlos_std * (noise[..., 0] + 1j * noise[..., 1])
    return ChannelRealization(receivers, theta, phi, gains, omega, kr, cfg.wavelength, cfg.mask_mode)


def equivalent_channel(h: np.ndarray, psi: np.ndarray, em: np.ndarray) -> np.ndarray:
    """Per-feed equivalent channel ``h^T diag(psi) em`` (length Q).

    ``h`` is a surface channel vector from :meth:`ChannelRealization.channel_vector`
    and ``em`` the (M, Q) electromagnetic response.
    """
    h = np.asarray(h)
    psi = np.asarray(psi, dtype=float)
    em = np.asarray(em)
    if h.ndim != 1 or psi.shape != h.shape or em.ndim != 2 or em.shape[0] != h.shape[0]:
        raise InvalidArgumentError(
            f"dimension mismatch: h {h.shape}, psi {psi.shape}, em {em.shape}"
        )
    return (h * psi) @ em
