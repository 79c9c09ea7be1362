"""Surface coordinates, rotations and placement constraints.

The base station sits at the global origin. Each surface is a planar
M_x x M_y grid in its local z=0 plane whose element (0, 0) sits at the surface
position ``q``. The radiating face is local +z, so the outward normal is
``R @ e3``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from holoidet.errors import InvalidArgumentError

E1 = np.array([1.0, 0.0, 0.0])
E2 = np.array([0.0, 1.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])

_UNIT_TOL = 1e-9
_PARALLEL_TOL = 1e-6


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def rodrigues(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rotation by ``angle`` radians about the unit vector ``axis``."""
    axis = np.asarray(axis, dtype=float)
    if axis.shape != (3,) or abs(np.linalg.norm(axis) - 1.0) > _UNIT_TOL:
        raise InvalidArgumentError(f"rotation axis must be a unit 3-vector, got {axis!r}")
    c, s = np.cos(angle), np.sin(angle)
    return c * np.eye(3) + (1.0 - c) * np.outer(axis, axis) + s * skew(axis)


def _check_unit(vec: np.ndarray, name: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (3,) or abs(np.linalg.norm(vec) - 1.0) > _UNIT_TOL:
        raise InvalidArgumentError(f"{name} must be a unit 3-vector, got {vec!r}")
    return vec


def rotation_between(u_local: np.ndarray, u_global: np.ndarray) -> np.ndarray:
    """Rotation taking ``u_local`` onto ``u_global``.

    Axis is the normalised cross product and angle the arccos of the dot
    product. Parallel inputs give the identity. Antiparallel inputs rotate by
    pi about the axis orthogonal to ``u_local`` closest to e1 (e2 if
    ``u_local`` is itself along e1).
    """
    u = _check_unit(u_local, "u_local")
    w = _check_unit(u_global, "u_global")
    cross = np.cross(u, w)
    norm = np.linalg.norm(cross)
    dot = float(np.clip(u @ w, -1.0, 1.0))
    if norm < _PARALLEL_TOL:
        if dot > 0:
            return np.eye(3)
        axis = E1 - (E1 @ u) * u
        if np.linalg.norm(axis) < _PARALLEL_TOL:
            axis = E2 - (E2 @ u) * u
        return rodrigues(axis / np.linalg.norm(axis), np.pi)
    return rodrigues(cross / norm, float(np.arccos(dot)))


def radial_rotation(position: np.ndarray) -> np.ndarray:
    """Rotation pointing the local normal radially away from the origin."""
    position = np.asarray(position, dtype=float)
    return rotation_between(E3, position / np.linalg.norm(position))


@dataclass(frozen=True)
class SurfaceLayout:
    """Planar element grid plus feed positions in the local frame.

    Element ``(mx, my)`` is stored at flat index ``mx * my_count + my``.
    """

    mx: int
    my: int
    spacing: float
    feeds: np.ndarray = field(default_factory=lambda: np.zeros((1, 3)))

    def __post_init__(self):
        if self.mx < 1 or self.my < 1:
            raise InvalidArgumentError("element counts must be positive")
        if not self.spacing > 0:
            raise InvalidArgumentError("element spacing must be positive")
        feeds = np.atleast_2d(np.asarray(self.feeds, dtype=float))
        if feeds.shape[1] != 3:
            raise InvalidArgumentError("feeds must be an (Q, 3) array")
        object.__setattr__(self, "feeds", feeds)

    @property
    def n_elements(self) -> int:
        return self.mx * self.my

    @property
    def n_feeds(self) -> int:
        return self.feeds.shape[0]

    @property
    def aperture(self) -> tuple[float, float]:
        """Extent of the element grid along local x and y."""
        return (self.mx - 1) * self.spacing, (self.my - 1) * self.spacing

    def local_coords(self) -> np.ndarray:
        """(M, 3) element coordinates in the local frame."""
        ix, iy = np.meshgrid(np.arange(self.mx), np.arange(self.my), indexing="ij")
        xy = np.stack([ix.ravel(), iy.ravel()], axis=1) * self.spacing
        return np.hstack([xy, np.zeros((xy.shape[0], 1))])

    def with_feeds(self, feeds: np.ndarray) -> "SurfaceLayout":
        return SurfaceLayout(self.mx, self.my, self.spacing, np.asarray(feeds, dtype=float))

    def min_feed_distance(self) -> float:
        if self.n_feeds < 2:
            return np.inf
        diff = self.feeds[:, None, :] - self.feeds[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        return float(dist[np.triu_indices(self.n_feeds, 1)].min())


@dataclass(frozen=True)
class SurfacePose:
    """Rotation and centre position of one surface.

    ``slot_index`` refers to a row of the slot table when the position came
    from it, and is ``None`` for fixed benchmark positions.
    """

    rotation: np.ndarray
    position: np.ndarray
    slot_index: int | None = None

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float)
        if rot.shape != (3, 3):
            raise InvalidArgumentError("rotation must be 3x3")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))

    @property
    def normal(self) -> np.ndarray:
        return self.rotation[:, 2].copy()

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "position": self.position.tolist(),
            "slot_index": self.slot_index,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SurfacePose":
        return cls(np.array(data["rotation"]), np.array(data["position"]), data.get("slot_index"))


def element_coords(pose: SurfacePose, layout: SurfaceLayout, mx: int, my: int) -> np.ndarray:
    """Global coordinate of element ``(mx, my)``."""
    if not (0 <= mx < layout.mx and 0 <= my < layout.my):
        raise InvalidArgumentError(f"element index ({mx}, {my}) outside {layout.mx}x{layout.my} grid")
    local = np.array([mx * layout.spacing, my * layout.spacing, 0.0])
    return pose.position + pose.rotation @ local


def element_positions(pose: SurfacePose, layout: SurfaceLayout) -> np.ndarray:
    """(M, 3) global coordinates of all elements in flat order."""
    return pose.position + layout.local_coords() @ pose.rotation.T


@dataclass(frozen=True)
class FeasibilityReport:
    """Violations of the reflection, blockage and collision constraints.

    Reflection entries ``(b1, b2)`` mean surface ``b2`` faces surface ``b1``:
    ``n_b2 . (q_b1 - q_b2) > 0``.
    """

    reflection: tuple[tuple[int, int], ...]
    blockage: tuple[int, ...]
    collision: tuple[tuple[int, int], ...]

    @property
    def ok(self) -> bool:
        return not (self.reflection or self.blockage or self.collision)


def check_feasible(poses, normals=None, d_min: float = 0.25, tol: float = 1e-12) -> FeasibilityReport:
    """Evaluate the placement constraints for every surface and pair.

    ``normals`` defaults to each pose's outward normal. ``tol`` absorbs
    rounding on constraints that hold with equality.
    """
    positions = np.array([p.position for p in poses]).reshape(-1, 3)
    if normals is None:
        normals = np.array([p.normal for p in poses]).reshape(-1, 3)
    else:
        normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    n = len(positions)
    reflection = []
    for b1 in range(n):
        for b2 in range(n):
            if b1 != b2 and normals[b2] @ (positions[b1] - positions[b2]) > tol:
                reflection.append((b1, b2))
    blockage = [b for b in range(n) if normals[b] @ positions[b] < -tol]
    collision = [
        (b1, b2) for b1, b2 in combinations(range(n), 2)
        if np.linalg.norm(positions[b1] - positions[b2]) < d_min
    ]
    return FeasibilityReport(tuple(reflection), tuple(blockage), tuple(collision))


def fibonacci_sphere(n: int, radius: float = 1.0) -> np.ndarray:
    """(n, 3) near-uniform points on a sphere (golden-angle spiral)."""
    if n < 1:
        raise InvalidArgumentError("need at least one point")
    i = np.arange(n)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    azimuth = i * np.pi * (3.0 - np.sqrt(5.0))
    return radius * np.stack([r * np.cos(azimuth), r * np.sin(azimuth), z], axis=1)
