"""Pinhole cameras with a world-to-camera pose.

Convention: ``x_cam = R @ x_world + t``; camera looks down +z, image ``u``
grows right with camera +x, ``v`` grows down with camera +y, and
``u = fx * x / z + cx``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .scene import check_rotation

Z_NEAR = 1e-4


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    id: str = ""

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"camera {self.id!r}: focal lengths must be > 0")
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValidationError(f"camera {self.id!r}: width and height must be >= 1")
        for name in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        check_rotation(R, tol=1e-6, what=f"camera {self.id!r} rotation")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def scaled(self, level: int) -> "Camera":
        """Virtual camera of pyramid level ``level``: intrinsics / 2**level."""
        s = float(2**level)
        return replace(
            self,
            fx=self.fx / s,
            fy=self.fy / s,
            cx=self.cx / s,
            cy=self.cy / s,
            width=self.width // 2**level,
            height=self.height // 2**level,
        )

    def __eq__(self, other):
        if not isinstance(other, Camera):
            return NotImplemented
        return (
            (self.fx, self.fy, self.cx, self.cy, self.width, self.height, self.id)
            == (other.fx, other.fy, other.cx, other.cy, other.width, other.height, other.id)
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    __hash__ = None


class BehindCamera:
    """Marker returned by :func:`project_point` for points at or behind the near plane."""

    def __repr__(self):
        return "BehindCamera"


BEHIND = BehindCamera()


def to_camera(cam: Camera, points: np.ndarray) -> np.ndarray:
    """World points ``(N, 3)`` to camera coordinates, fixed summation order."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    R, t = cam.rotation, cam.translation
    x = R[0, 0] * p[:, 0] + R[0, 1] * p[:, 1] + R[0, 2] * p[:, 2] + t[0]
    y = R[1, 0] * p[:, 0] + R[1, 1] * p[:, 1] + R[1, 2] * p[:, 2] + t[1]
    z = R[2, 0] * p[:, 0] + R[2, 1] * p[:, 1] + R[2, 2] * p[:, 2] + t[2]
    return np.stack([x, y, z], axis=1)


def project_points(cam: Camera, points: np.ndarray, z_near: float = Z_NEAR):
    """Vectorized projection.

    Returns ``(u, v, z, valid)``; ``u, v`` are meaningless where ``valid`` is
    False (point at or behind the near plane).
    """
    xc = to_camera(cam, points)
    z = xc[:, 2]
    valid = z > z_near
    safe_z = np.where(valid, z, 1.0)
    u = cam.fx * xc[:, 0] / safe_z + cam.cx
    v = cam.fy * xc[:, 1] / safe_z + cam.cy
    return u, v, z, valid


def project_point(cam: Camera, p, z_near: float = Z_NEAR):
    """Project one world point; returns ``(u, v, z)`` or :data:`BEHIND`."""
    px, py, pz = (float(c) for c in p)
    R, t = cam.rotation, cam.translation
    x = float(R[0, 0]) * px + float(R[0, 1]) * py + float(R[0, 2]) * pz + float(t[0])
    y = float(R[1, 0]) * px + float(R[1, 1]) * py + float(R[1, 2]) * pz + float(t[1])
    z = float(R[2, 0]) * px + float(R[2, 1]) * py + float(R[2, 2]) * pz + float(t[2])
    if z <= z_near:
        return BEHIND
    return cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy, z


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """World-to-camera ``(R, t)`` for a camera at ``eye`` looking at ``target``.

    ``up`` is the world direction that should appear up in the image.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-12:
        raise ValidationError("look_at: up vector is parallel to the view direction")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    return R, -R @ eye


def yaw(cam: Camera, angle_deg: float) -> Camera:
    """Rotate the camera about its own vertical axis; positive turns right."""
    if angle_deg == 0:
        return cam
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    # maps new-camera axes into old-camera axes
    Ry = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    R = Ry.T @ cam.rotation
    return replace(cam, rotation=R, translation=-R @ cam.center)
