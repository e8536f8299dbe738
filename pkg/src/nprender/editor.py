"""Descriptor-preserving scene edits, scene stitching and panoramas."""
from __future__ import annotations

import numpy as np

from .camera import Camera, yaw
from .errors import ValidationError
from .omeganet import OmegaNet
from .raster import build_pyramid
from .scene import AABox, RigidTransform, Scene, remove_points, select_points, transform_points


def edit_move(scene: Scene, box: AABox, rt: RigidTransform) -> Scene:
    return transform_points(scene, select_points(scene, box), rt)


def edit_remove(scene: Scene, box: AABox) -> Scene:
    return remove_points(scene, select_points(scene, box))


def apply_edits(scene: Scene, ops) -> Scene:
    """Apply ``(op, box, transform)`` tuples in order (see ``io.read_edit_script``)."""
    for op, box, rt in ops:
        if op == "move":
            scene = edit_move(scene, box, rt)
        elif op == "remove":
            scene = edit_remove(scene, box)
        else:
            raise ValidationError(f"unknown edit op {op!r}")
    return scene


def stitch(scene1: Scene, scene2: Scene, align: RigidTransform | None = None, name: str | None = None) -> Scene:
    """Map ``scene2`` into ``scene1``'s frame and concatenate (``scene1`` rows first)."""
    if scene1.desc_dim != scene2.desc_dim:
        raise ValidationError(
            f"cannot stitch descriptor dims {scene1.desc_dim} and {scene2.desc_dim}"
        )
    align = RigidTransform() if align is None else align
    name = name or scene1.name
    if scene2.n_points == 0:
        return Scene(scene1.positions, scene1.descriptors, name, scene1.colors)
    pos2 = align.apply(scene2.positions)
    colors = None
    if scene1.colors is not None and scene2.colors is not None:
        colors = np.concatenate([scene1.colors, scene2.colors])
    return Scene(
        np.concatenate([scene1.positions, pos2]),
        np.concatenate([scene1.descriptors, scene2.descriptors]),
        name,
        colors,
    )


def panorama_cameras(center: Camera, k: int, hfov: float) -> list:
    """``k`` views sharing ``center``'s position, yawed in ``hfov`` steps, left to right.

    Each view keeps ``center``'s image size; focal lengths are set so one
    view spans exactly ``hfov`` degrees horizontally.
    """
    if k < 1:
        raise ValidationError(f"panorama needs k >= 1 views, got {k}")
    if not 0 < hfov < 180 or k * hfov > 360:
        raise ValidationError(f"invalid panorama fov: k={k}, hfov={hfov} (need 0 < hfov < 180, k*hfov <= 360)")
    fx = (center.width / 2) / np.tan(np.deg2rad(hfov) / 2)
    fy = fx * center.fy / center.fx
    base = Camera(fx, fy, center.width / 2, center.height / 2, center.width, center.height,
                  center.rotation, center.translation, id=center.id)
    offsets = (np.arange(k) - (k - 1) / 2) * hfov
    return [yaw(base, float(a)) for a in offsets]


def panorama(scene: Scene, net: OmegaNet, center: Camera, k: int, hfov: float) -> np.ndarray:
    """Horizontal concatenation of ``k`` rendered views, ``(3, H, k * W)``."""
    views = [net.render(build_pyramid(scene, cam)) for cam in panorama_cameras(center, k, hfov)]
    return np.concatenate(views, axis=2)
