"""Training-set selection by worst quality score, and random patch cameras."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import map_coordinates

from .camera import Camera
from .errors import ValidationError

MAX_PATCH_FRACTION = 0.15
PATCHES_PER_ITER = 10


@dataclass(frozen=True)
class ImageScore:
    image_id: str
    q: float = 0.0
    stale: bool = True


@dataclass(frozen=True)
class PatchSpec:
    width: int
    height: int
    zoom: float
    shift: tuple  # (x_delta, y_delta) added to the principal point
    source_image_id: str

    @property
    def origin(self) -> tuple:
        """Top-left corner ``(x0, y0)`` of the patch in the source image."""
        return -self.shift[0], -self.shift[1]


def new_scores(image_ids) -> list:
    return [ImageScore(str(i)) for i in image_ids]


def _rank_key(s: ImageScore):
    # stale first, then worst (largest q) first, then id
    return (not s.stale, -s.q, s.image_id)


def select_training_set(scores, ratio: float) -> list:
    """Ids of the ``ceil(ratio * n)`` worst-scoring images, worst first."""
    scores = list(scores)
    if not scores:
        raise ValidationError("select_training_set: no image scores")
    if not 0 < ratio <= 1:
        raise ValidationError(f"sampling ratio must be in (0, 1], got {ratio}")
    n_keep = math.ceil(ratio * len(scores))
    return [s.image_id for s in sorted(scores, key=_rank_key)[:n_keep]]


def update_score(scores, image_id, q: float) -> list:
    q = float(q)
    if not (math.isfinite(q) and q >= 0):
        raise ValidationError(f"score for {image_id!r} must be finite and >= 0, got {q}")
    out, found = [], False
    for s in scores:
        if s.image_id == str(image_id):
            s = replace(s, q=q, stale=False)
            found = True
        out.append(s)
    if not found:
        raise ValidationError(f"unknown image id {image_id!r}")
    return out


def check_patch_size(cam: Camera, w: int, h: int, max_fraction: float | None = MAX_PATCH_FRACTION) -> float:
    """Validate a patch size against ``cam``; returns its pixel fraction."""
    if w < 1 or h < 1 or w > cam.width or h > cam.height:
        raise ValidationError(f"patch {w}x{h} does not fit a {cam.width}x{cam.height} image")
    frac = (w * h) / (cam.width * cam.height)
    if max_fraction is not None and frac > max_fraction:
        raise ValidationError(
            f"patch {w}x{h} covers {100 * frac:.2f}% of the {cam.width}x{cam.height} image; "
            f"the limit is {100 * max_fraction:.0f}%"
        )
    return frac


def patch_camera(cam: Camera, w: int, h: int, zoom: float, x0: int, y0: int) -> Camera:
    """Virtual camera: focal lengths times ``zoom``, principal point shifted by ``-(x0, y0)``."""
    return replace(
        cam,
        fx=zoom * cam.fx,
        fy=zoom * cam.fy,
        cx=cam.cx - x0,
        cy=cam.cy - y0,
        width=w,
        height=h,
    )


def sample_patch(cam: Camera, w: int, h: int, zoom_range=(1.0, 1.0), rng=None,
                 max_fraction: float | None = MAX_PATCH_FRACTION):
    """Draw a random patch; returns ``(PatchSpec, virtual Camera)``."""
    check_patch_size(cam, w, h, max_fraction)
    lo, hi = (float(z) for z in zoom_range)
    if not 0 < lo <= hi:
        raise ValidationError(f"zoom range must satisfy 0 < lo <= hi, got {zoom_range}")
    rng = np.random.default_rng() if rng is None else rng
    zoom = lo if lo == hi else float(rng.uniform(lo, hi))
    x0 = int(rng.integers(0, cam.width - w + 1))
    y0 = int(rng.integers(0, cam.height - h + 1))
    spec = PatchSpec(w, h, zoom, (-x0, -y0), cam.id)
    return spec, patch_camera(cam, w, h, zoom, x0, y0)


def patch_target(image: np.ndarray, cam: Camera, spec: PatchSpec) -> np.ndarray:
    """Ground-truth pixels seen by the patch camera, ``(3, h, w)``.

    With zoom 1 this is an exact crop; otherwise pixel centers are mapped
    back through the zoom about the principal point and sampled bilinearly.
    """
    x0, y0 = spec.origin
    if spec.zoom == 1.0:
        return image[:, y0:y0 + spec.height, x0:x0 + spec.width]
    js = np.arange(spec.width) + 0.5
    is_ = np.arange(spec.height) + 0.5
    u = (js + x0 - cam.cx) / spec.zoom + cam.cx - 0.5
    v = (is_ + y0 - cam.cy) / spec.zoom + cam.cy - 0.5
    vv, uu = np.meshgrid(v, u, indexing="ij")
    return np.stack([
        map_coordinates(ch, [vv, uu], order=1, mode="nearest") for ch in image
    ]).astype(image.dtype)
