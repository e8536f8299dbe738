"""Point cloud scenes with per-point learnable descriptors.

A point's identity is its row index; positions and descriptor rows always
move together.  Every operation returns a new :class:`Scene`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

DEFAULT_DESC_DIM = 8
INIT_SCALE = 0.05


@dataclass(frozen=True)
class AABox:
    """Closed axis-aligned box ``[min, max]`` in world units."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        if np.any(lo > hi):
            raise ValidationError(f"box min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.all((points >= self.min) & (points <= self.max), axis=1)


@dataclass(frozen=True)
class RigidTransform:
    """``p -> rotation @ p + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        check_rotation(R, tol=1e-6)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return points @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform applying ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


def check_rotation(R: np.ndarray, tol: float = 1e-6, what: str = "rotation") -> None:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ValidationError(f"{what} must be a finite 3x3 matrix")
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol:
        raise ValidationError(f"{what} is not orthonormal within {tol}")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ValidationError(f"{what} has determinant {np.linalg.det(R):.6g}, expected +1")


def init_descriptors(n: int, d: int = DEFAULT_DESC_DIM, seed: int = 0) -> np.ndarray:
    """Seeded uniform ``[-0.05, 0.05]`` descriptor table of shape ``(n, d)``."""
    if n < 0 or d < 1:
        raise ValidationError(f"need n >= 0 and d >= 1, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=(n, d)).astype(np.float32)


class Scene:
    """Immutable pairing of point positions ``(N, 3)`` and descriptors ``(N, d)``."""

    def __init__(self, positions, descriptors, name: str = "scene", colors=None):
        positions = np.array(positions, dtype=np.float64).reshape(-1, 3)
        descriptors = np.array(descriptors, dtype=np.float32)
        if descriptors.ndim != 2:
            raise ValidationError("descriptor table must be 2-D (N, d)")
        if descriptors.shape[0] != positions.shape[0]:
            raise ValidationError(
                f"{positions.shape[0]} points but {descriptors.shape[0]} descriptor rows"
            )
        if descriptors.shape[1] < 1:
            raise ValidationError("descriptor dimension must be >= 1")
        if not np.all(np.isfinite(positions)):
            raise ValidationError("point positions must be finite")
        if not np.all(np.isfinite(descriptors)):
            raise ValidationError("descriptors must be finite")
        if colors is not None:
            colors = np.array(colors, dtype=np.uint8).reshape(-1, 3)
            if colors.shape[0] != positions.shape[0]:
                raise ValidationError("color count does not match point count")
            colors.setflags(write=False)
        positions.setflags(write=False)
        descriptors.setflags(write=False)
        self.positions = positions
        self.descriptors = descriptors
        self.colors = colors
        self.name = name

    @classmethod
    def from_points(cls, positions, d: int = DEFAULT_DESC_DIM, seed: int = 0, **kw):
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        return cls(positions, init_descriptors(len(positions), d, seed), **kw)

    @property
    def n_points(self) -> int:
        return self.positions.shape[0]

    @property
    def desc_dim(self) -> int:
        return self.descriptors.shape[1]

    def with_descriptors(self, descriptors) -> "Scene":
        return Scene(self.positions, descriptors, self.name, self.colors)

    def __len__(self):
        return self.n_points

    def __repr__(self):
        return f"Scene({self.name!r}, N={self.n_points}, d={self.desc_dim})"


def _check_indices(scene: Scene, indices) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    bad = idx[(idx < 0) | (idx >= scene.n_points)]
    if bad.size:
        raise ValidationError(
            f"point index {int(bad[0])} out of range for scene with {scene.n_points} points"
        )
    return np.unique(idx)


def select_points(scene: Scene, box: AABox) -> np.ndarray:
    """Ascending indices of points inside the closed box."""
    return np.flatnonzero(box.contains(scene.positions))


def transform_points(scene: Scene, indices, rt: RigidTransform) -> Scene:
    idx = _check_indices(scene, indices)
    pos = scene.positions.copy()
    if idx.size:
        pos[idx] = rt.apply(pos[idx])
    return Scene(pos, scene.descriptors, scene.name, scene.colors)


def remove_points(scene: Scene, indices) -> Scene:
    idx = _check_indices(scene, indices)
    keep = np.ones(scene.n_points, dtype=bool)
    keep[idx] = False
    colors = None if scene.colors is None else scene.colors[keep]
    return Scene(scene.positions[keep], scene.descriptors[keep], scene.name, colors)
