"""Nearest-point Z-buffer rasterization of descriptors into a resolution pyramid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera, Z_NEAR, project_points
from .errors import ValidationError
from .scene import Scene

EMPTY = -1
DEFAULT_LEVELS = 4


@dataclass(frozen=True)
class RasterLevel:
    descriptor_image: np.ndarray  # (d, h, w), zeros where empty
    depth: np.ndarray  # (h, w), +inf where empty
    point_map: np.ndarray  # (h, w) int64, EMPTY where empty

    @property
    def coverage(self) -> np.ndarray:
        return self.point_map != EMPTY

    @property
    def shape(self):
        return self.point_map.shape


@dataclass(frozen=True)
class RasterPyramid:
    levels: tuple

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, t) -> RasterLevel:
        return self.levels[t]

    def __iter__(self):
        return iter(self.levels)

    @property
    def desc_dim(self) -> int:
        return self.levels[0].descriptor_image.shape[0]


def zbuffer(cam: Camera, positions: np.ndarray, z_near: float = Z_NEAR):
    """Winning point and depth per pixel.

    Each point falls in pixel ``(floor(u), floor(v))``; the winner minimizes
    ``(depth, index)`` lexicographically, so the result does not depend on
    point order or evaluation schedule.
    """
    h, w = cam.height, cam.width
    point_map = np.full(h * w, EMPTY, dtype=np.int64)
    depth = np.full(h * w, np.inf)
    if len(positions):
        u, v, z, valid = project_points(cam, positions, z_near)
        with np.errstate(invalid="ignore"):
            px = np.floor(u)
            py = np.floor(v)
        inside = valid & (px >= 0) & (px < w) & (py >= 0) & (py < h)
        idx = np.flatnonzero(inside)
        if idx.size:
            pix = py[idx].astype(np.int64) * w + px[idx].astype(np.int64)
            zi = z[idx]
            order = np.lexsort((idx, zi, pix))
            pix, zi, idx = pix[order], zi[order], idx[order]
            first = np.ones(pix.size, dtype=bool)
            first[1:] = pix[1:] != pix[:-1]
            point_map[pix[first]] = idx[first]
            depth[pix[first]] = zi[first]
    return point_map.reshape(h, w), depth.reshape(h, w)


def gather_descriptors(descriptors: np.ndarray, point_map: np.ndarray) -> np.ndarray:
    """``(d, h, w)`` image of descriptor rows, zero where ``point_map`` is empty."""
    d = descriptors.shape[1]
    flat = point_map.reshape(-1)
    out = np.zeros((flat.size, d), dtype=descriptors.dtype)
    hit = flat != EMPTY
    out[hit] = descriptors[flat[hit]]
    return np.ascontiguousarray(out.T.reshape(d, *point_map.shape))


def rasterize_level(scene: Scene, cam: Camera, t: int = 0, z_near: float = Z_NEAR) -> RasterLevel:
    """Rasterize ``scene`` at pyramid level ``t`` of ``cam`` (intrinsics / 2**t)."""
    if t < 0:
        raise ValidationError(f"pyramid level must be >= 0, got {t}")
    lcam = cam.scaled(t)
    if lcam.width < 1 or lcam.height < 1:
        raise ValidationError(f"level {t} of a {cam.width}x{cam.height} image is empty")
    point_map, depth = zbuffer(lcam, scene.positions, z_near)
    return RasterLevel(gather_descriptors(scene.descriptors, point_map), depth, point_map)


def build_pyramid(scene: Scene, cam: Camera, levels: int = DEFAULT_LEVELS) -> RasterPyramid:
    """Independent rasterizations at full, 1/2, 1/4, ... resolution."""
    need = 2 ** (levels - 1)
    if cam.width < need or cam.height < need:
        raise ValidationError(
            f"image {cam.width}x{cam.height} too small for {levels} pyramid levels "
            f"(need width and height >= {need})"
        )
    return RasterPyramid(tuple(rasterize_level(scene, cam, t) for t in range(levels)))


def visible_point_set(pyramid: RasterPyramid) -> np.ndarray:
    """Sorted indices of points winning at least one pixel on any level."""
    maps = [lvl.point_map.reshape(-1) for lvl in pyramid]
    if not maps:
        return np.zeros(0, dtype=np.int64)
    ids = np.concatenate(maps)
    return np.unique(ids[ids != EMPTY])


def scatter_descriptor_gradients(level_grads, pyramid: RasterPyramid, n_points: int | None = None):
    """Sum per-pixel descriptor gradients into their winning points.

    Returns ``(indices, rows)``: sorted point indices that received gradient
    and an ``(len(indices), d)`` array.  With ``n_points`` given, returns a
    dense ``(n_points, d)`` array instead.
    """
    if len(level_grads) != len(pyramid):
        raise ValidationError(f"{len(level_grads)} gradient levels for a {len(pyramid)}-level pyramid")
    d = pyramid.desc_dim
    all_ids, all_rows = [], []
    for t, (g, lvl) in enumerate(zip(level_grads, pyramid)):
        g = np.asarray(g)
        if g.shape != lvl.descriptor_image.shape:
            raise ValidationError(
                f"level {t}: gradient shape {g.shape} != raster shape {lvl.descriptor_image.shape}"
            )
        flat = lvl.point_map.reshape(-1)
        hit = flat != EMPTY
        all_ids.append(flat[hit])
        all_rows.append(g.reshape(d, -1)[:, hit].T)
    ids = np.concatenate(all_ids) if all_ids else np.zeros(0, dtype=np.int64)
    rows = np.concatenate(all_rows) if all_rows else np.zeros((0, d))
    uniq, inverse = np.unique(ids, return_inverse=True)
    acc = np.zeros((uniq.size, d), dtype=np.float64)
    np.add.at(acc, inverse, rows)
    if n_points is not None:
        dense = np.zeros((n_points, d), dtype=np.float64)
        dense[uniq] = acc
        return dense
    return uniq, acc
