"""Bundled synthetic scene: a textured ground plane with a cube on it.

Ground-truth images are ray cast analytically (2x2 supersampled), so they
are independent of the point rasterizer.  World frame is z-up.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera, look_at
from .scene import Scene

PLANE_HALF = 2.0
CUBE_MIN = np.array([-0.4, -0.4, 0.0])
CUBE_MAX = np.array([0.4, 0.4, 0.8])
SKY = np.array([0.65, 0.78, 0.95])
FACE_COLORS = {
    "+x": (0.80, 0.25, 0.20),
    "-x": (0.20, 0.55, 0.80),
    "+y": (0.90, 0.75, 0.20),
    "-y": (0.35, 0.70, 0.30),
    "+z": (0.75, 0.40, 0.75),
}


def plane_color(p: np.ndarray) -> np.ndarray:
    x, y = p[..., 0], p[..., 1]
    r = 0.45 + 0.15 * np.sin(1.7 * x) * np.cos(1.3 * y)
    g = 0.50 + 0.12 * np.cos(1.1 * x + 0.5 * y)
    b = 0.35 + 0.10 * np.sin(0.9 * y - 0.4 * x)
    return np.stack([r, g, b], axis=-1)


def cube_color(p: np.ndarray, face: np.ndarray) -> np.ndarray:
    """``face`` holds indices into the order of :data:`FACE_COLORS`."""
    base = np.array(list(FACE_COLORS.values()))[face]
    shade = 0.85 + 0.15 * (p[..., 2] / CUBE_MAX[2])
    return np.clip(base * shade[..., None], 0.0, 1.0)


def sample_points(n: int = 5000, seed: int = 0):
    """Area-proportional surface samples and their colors (floats in [0, 1])."""
    rng = np.random.default_rng(seed)
    side = CUBE_MAX - CUBE_MIN
    areas = {
        "plane": (2 * PLANE_HALF) ** 2,
        "+x": side[1] * side[2], "-x": side[1] * side[2],
        "+y": side[0] * side[2], "-y": side[0] * side[2],
        "+z": side[0] * side[1],
    }
    names = list(areas)
    w = np.array([areas[k] for k in names])
    counts = np.floor(n * w / w.sum()).astype(int)
    counts[0] += n - counts.sum()
    pts, cols = [], []
    for name, c in zip(names, counts):
        a, b = rng.uniform(0, 1, c), rng.uniform(0, 1, c)
        if name == "plane":
            p = np.stack([(2 * a - 1) * PLANE_HALF, (2 * b - 1) * PLANE_HALF, np.zeros(c)], axis=1)
            col = plane_color(p)
        else:
            axis = "xyz".index(name[1])
            p = np.empty((c, 3))
            free = [i for i in range(3) if i != axis]
            p[:, free[0]] = CUBE_MIN[free[0]] + a * side[free[0]]
            p[:, free[1]] = CUBE_MIN[free[1]] + b * side[free[1]]
            p[:, axis] = CUBE_MAX[axis] if name[0] == "+" else CUBE_MIN[axis]
            col = cube_color(p, np.full(c, list(FACE_COLORS).index(name)))
        pts.append(p)
        cols.append(col)
    return np.concatenate(pts), np.concatenate(cols)


def _ray_cast(origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    n = dirs.shape[0]
    color = np.tile(SKY, (n, 1))
    best = np.full(n, np.inf)
    # ground plane z = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -origin[2] / dirs[:, 2]
    hit = origin[None] + t[:, None] * dirs
    ok = (t > 0) & (np.abs(hit[:, 0]) <= PLANE_HALF) & (np.abs(hit[:, 1]) <= PLANE_HALF)
    best[ok] = t[ok]
    color[ok] = plane_color(hit[ok])
    # cube faces (bottom face is on the plane and never visible from above)
    for k, name in enumerate(FACE_COLORS):
        axis = "xyz".index(name[1])
        val = CUBE_MAX[axis] if name[0] == "+" else CUBE_MIN[axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (val - origin[axis]) / dirs[:, axis]
        hit = origin[None] + t[:, None] * dirs
        inside = np.ones(n, dtype=bool)
        for i in range(3):
            if i != axis:
                inside &= (hit[:, i] >= CUBE_MIN[i]) & (hit[:, i] <= CUBE_MAX[i])
        ok = (t > 0) & inside & (t < best)
        best[ok] = t[ok]
        color[ok] = cube_color(hit[ok], np.full(ok.sum(), k))
    return color


def render_ground_truth(cam: Camera, supersample: int = 2) -> np.ndarray:
    """Analytic ``(3, H, W)`` image in ``[0, 1]``, quantized to 8 bits."""
    s = supersample
    offs = (np.arange(s) + 0.5) / s
    js = (np.arange(cam.width)[:, None] + offs[None]).reshape(-1)
    is_ = (np.arange(cam.height)[:, None] + offs[None]).reshape(-1)
    vv, uu = np.meshgrid(is_, js, indexing="ij")
    d_cam = np.stack([(uu - cam.cx) / cam.fx, (vv - cam.cy) / cam.fy, np.ones_like(uu)], axis=-1)
    dirs = d_cam.reshape(-1, 3) @ cam.rotation  # R^T applied to row vectors
    col = _ray_cast(cam.center, dirs).reshape(cam.height, s, cam.width, s, 3).mean(axis=(1, 3))
    return np.round(col.transpose(2, 0, 1) * 255) / 255


def orbit_cameras(n: int = 10, size: int = 64, radius: float = 3.5, height: float = 2.0,
                  hfov_deg: float = 60.0, target=(0.0, 0.0, 0.3), phase_deg: float = 15.0) -> list:
    f = (size / 2) / np.tan(np.deg2rad(hfov_deg) / 2)
    cams = []
    for i in range(n):
        a = np.deg2rad(phase_deg + 360.0 * i / n)
        eye = (radius * np.cos(a), radius * np.sin(a), height)
        R, t = look_at(eye, target)
        cams.append(Camera(f, f, size / 2, size / 2, size, size, R, t, id=f"{i:03d}"))
    return cams


@dataclass
class ToyDataset:
    scene: Scene
    train_cameras: list
    train_images: list
    test_cameras: list
    test_images: list


HELD_OUT = (3, 8)


def toy_dataset(n_points: int = 5000, size: int = 64, desc_dim: int = 8, seed: int = 0) -> ToyDataset:
    """5,000-point plane+cube scene, 8 training and 2 held-out orbit views."""
    pts, cols = sample_points(n_points, seed)
    scene = Scene.from_points(pts, d=desc_dim, seed=seed, name="toy",
                              colors=np.round(cols * 255).astype(np.uint8))
    cams = orbit_cameras(10, size)
    imgs = [render_ground_truth(c).astype(np.float32) for c in cams]
    train = [i for i in range(10) if i not in HELD_OUT]
    return ToyDataset(
        scene,
        [cams[i] for i in train], [imgs[i] for i in train],
        [cams[i] for i in HELD_OUT], [imgs[i] for i in HELD_OUT],
    )
