import math

import numpy as np
import pytest

from nprender.camera import BEHIND, Camera, look_at, project_point
from nprender.scene import Scene


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_scene(rng, n=None, d=8, dup_frac=0.1):
    """Points in a unit-ish cube; a few exact duplicates force depth ties."""
    n = int(rng.integers(0, 2001)) if n is None else n
    pts = rng.uniform(-1, 1, size=(n, 3))
    if n > 1:
        k = int(dup_frac * n)
        src = rng.integers(0, n, size=k)
        dst = rng.integers(0, n, size=k)
        pts[dst] = pts[src]
    desc = rng.normal(size=(n, d)).astype(np.float32)
    return Scene(pts, desc)


def random_camera(rng, size=(64, 64)):
    w, h = size
    eye = rng.normal(size=3)
    eye = eye / np.linalg.norm(eye) * rng.uniform(1.5, 4.0)
    R, t = look_at(eye, rng.uniform(-0.3, 0.3, size=3), up=rng.normal(size=3))
    f = rng.uniform(0.6, 1.5) * w
    return Camera(f, f * rng.uniform(0.9, 1.1), w / 2 + rng.uniform(-5, 5),
                  h / 2 + rng.uniform(-5, 5), w, h, R, t)


def brute_force_level(scene, cam, t):
    """Per-pixel scan of every point, independent of the vectorized z-buffer."""
    s = 2**t
    lcam = Camera(cam.fx / s, cam.fy / s, cam.cx / s, cam.cy / s,
                  cam.width // s, cam.height // s, cam.rotation, cam.translation)
    w, h = lcam.width, lcam.height
    proj = []
    for p in scene.positions:
        r = project_point(lcam, p)
        if r is BEHIND:
            proj.append((-1, -1, math.inf))
        else:
            proj.append((math.floor(r[0]), math.floor(r[1]), r[2]))
    px = np.array([q[0] for q in proj], dtype=np.int64)
    py = np.array([q[1] for q in proj], dtype=np.int64)
    pz = np.array([q[2] for q in proj])
    point_map = np.full((h, w), -1, dtype=np.int64)
    depth = np.full((h, w), np.inf)
    finite = np.isfinite(pz)
    for i in range(h):
        row = finite & (py == i)
        if not row.any():
            continue
        for j in range(w):
            cand = np.flatnonzero(row & (px == j))
            if cand.size:
                z, idx = min((pz[c], c) for c in cand)
                point_map[i, j] = idx
                depth[i, j] = z
    img = np.zeros((scene.desc_dim, h, w), dtype=np.float32)
    for i in range(h):
        for j in range(w):
            if point_map[i, j] >= 0:
                img[:, i, j] = scene.descriptors[point_map[i, j]]
    return point_map, depth, img


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
