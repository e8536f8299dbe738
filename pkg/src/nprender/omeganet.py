"""The multi-scale gated rendering network.

Per pyramid level ``t`` a gate block filters the rasterized descriptors.
Going coarse to fine, each level fuses two same-scale paths (a gated conv
path ``F_c`` and a pooled detail path ``F_d``, combined as
``F_c + F_d * F_c``) and then merges the bilinearly upsampled coarser
result through another gated conv.  A 1x1 head maps level 0 to RGB.

All wiring lives in :meth:`OmegaNet.forward`.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ValidationError
from .raster import RasterPyramid

DEFAULT_WIDTHS = (16, 32, 64, 128)
LEVELS = 4


def gate_block(p: dict, name: str, x: Tensor) -> Tensor:
    """``refine(concat(x, elu(feat(x)) * sigmoid(mask(x))))``."""
    feat = ad.elu(conv(p, f"{name}.feat", x))
    mask = ad.sigmoid(conv(p, f"{name}.mask", x))
    return conv(p, f"{name}.refine", ad.concat_channels([x, ad.mul(feat, mask)]))


def gated_conv(p: dict, name: str, x: Tensor) -> Tensor:
    """``elu(conv_a(x)) * sigmoid(conv_b(x))``."""
    return ad.mul(ad.elu(conv(p, f"{name}.a", x)), ad.sigmoid(conv(p, f"{name}.b", x)))


def fuse_same_scale(f_c: Tensor, f_d: Tensor) -> Tensor:
    """``F_c + F_d * F_c``."""
    if f_c.shape != f_d.shape:
        raise ValidationError(f"fuse_same_scale: shapes {f_c.shape} and {f_d.shape} differ")
    return ad.add(f_c, ad.mul(f_d, f_c))


def conv(p: dict, name: str, x: Tensor) -> Tensor:
    return ad.conv2d(x, p[f"{name}.w"], p[f"{name}.b"])


def layer_shapes(desc_dim: int, widths=DEFAULT_WIDTHS) -> dict:
    """Name -> ``(c_out, c_in, k)`` for every conv of the network."""
    c = tuple(int(w) for w in widths)
    if len(c) != LEVELS or min(c) < 1:
        raise ValidationError(f"need {LEVELS} positive widths, got {widths}")
    d = int(desc_dim)
    shapes = {}
    for t in range(LEVELS):
        shapes[f"gate{t}.feat"] = (c[t], d, 3)
        shapes[f"gate{t}.mask"] = (c[t], d, 3)
        shapes[f"gate{t}.refine"] = (c[t], d + c[t], 1)
    for t in range(LEVELS - 1):
        shapes[f"path_c{t}.a"] = (c[t], c[t], 3)
        shapes[f"path_c{t}.b"] = (c[t], c[t], 3)
        shapes[f"pool_proj{t}"] = (c[t], c[t], 1)
        shapes[f"detail{t}"] = (c[t], c[t] + c[t + 1], 1)
        shapes[f"up_proj{t}"] = (c[t], c[t + 1], 1)
        shapes[f"merge{t}.a"] = (c[t], 2 * c[t], 3)
        shapes[f"merge{t}.b"] = (c[t], 2 * c[t], 3)
    shapes["head"] = (3, c[0], 1)
    return shapes


def param_shapes(desc_dim: int, widths=DEFAULT_WIDTHS) -> dict:
    out = {}
    for name, (co, ci, k) in layer_shapes(desc_dim, widths).items():
        out[f"{name}.w"] = (co, ci, k, k)
        out[f"{name}.b"] = (co,)
    return out


def parameter_count(desc_dim: int = 8, widths=DEFAULT_WIDTHS) -> int:
    return int(sum(np.prod(s) for s in param_shapes(desc_dim, widths).values()))


class OmegaNet:
    """Parameters plus forward pass.  ``params`` maps names to leaf tensors."""

    def __init__(self, desc_dim: int = 8, widths=DEFAULT_WIDTHS, seed: int = 0,
                 dtype=np.float32, params: dict | None = None):
        self.desc_dim = int(desc_dim)
        self.widths = tuple(int(w) for w in widths)
        self.dtype = np.dtype(dtype)
        shapes = param_shapes(self.desc_dim, self.widths)
        if params is None:
            params = self._init(shapes, seed)
        else:
            self._check(shapes, params)
        self.params = {
            k: Tensor(np.array(params[k], dtype=self.dtype), requires_grad=True) for k in shapes
        }

    @staticmethod
    def _init(shapes: dict, seed: int) -> dict:
        rng = np.random.default_rng(seed)
        out = {}
        for name, shape in shapes.items():
            if name.endswith(".b"):
                out[name] = np.zeros(shape)
            else:
                fan_in = shape[1] * shape[2] * shape[3]
                out[name] = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=shape)
        return out

    @staticmethod
    def _check(shapes: dict, params: dict) -> None:
        missing = sorted(set(shapes) - set(params))
        extra = sorted(set(params) - set(shapes))
        if missing or extra:
            raise ValidationError(
                f"parameter set does not match architecture (missing {missing[:3]}, unexpected {extra[:3]})"
            )
        for name, shape in shapes.items():
            if tuple(np.shape(params[name])) != shape:
                raise ValidationError(f"parameter {name}: shape {np.shape(params[name])}, expected {shape}")

    @property
    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def pyramid_inputs(self, pyramid: RasterPyramid, requires_grad: bool = False) -> list:
        """Level descriptor images as tensors of the network dtype."""
        return [
            Tensor(np.asarray(lvl.descriptor_image, dtype=self.dtype), requires_grad=requires_grad)
            for lvl in pyramid
        ]

    def forward(self, inputs) -> Tensor:
        """RGB ``(3, H, W)`` from level inputs (a pyramid or a list of tensors)."""
        if isinstance(inputs, RasterPyramid):
            inputs = self.pyramid_inputs(inputs)
        if len(inputs) != LEVELS:
            raise ValidationError(f"expected {LEVELS} pyramid levels, got {len(inputs)}")
        for t, x in enumerate(inputs):
            if x.data.ndim != 3 or x.shape[0] != self.desc_dim:
                raise ValidationError(
                    f"level {t}: expected ({self.desc_dim}, h, w) descriptors, got {x.shape}"
                )
        for t in range(LEVELS - 1):
            h, w = inputs[t].shape[1:]
            if inputs[t + 1].shape[1:] != (h // 2, w // 2):
                raise ValidationError(
                    f"level {t + 1} is {inputs[t + 1].shape[1:]}, expected {(h // 2, w // 2)}"
                )
        p = self.params
        gates = [gate_block(p, f"gate{t}", x) for t, x in enumerate(inputs)]
        up = gates[-1]
        for t in range(LEVELS - 2, -1, -1):
            size = gates[t].shape[1:]
            f_c = gated_conv(p, f"path_c{t}", gates[t])
            f_b = conv(p, f"pool_proj{t}", ad.avg_pool2(gates[t]))
            f_d = ad.bilinear_up2(conv(p, f"detail{t}", ad.concat_channels([f_b, gates[t + 1]])), size)
            fused = fuse_same_scale(f_c, f_d)
            coarse = ad.bilinear_up2(conv(p, f"up_proj{t}", up), size)
            up = gated_conv(p, f"merge{t}", ad.concat_channels([fused, coarse]))
        return conv(p, "head", up)

    def render(self, pyramid: RasterPyramid) -> np.ndarray:
        """Forward pass clamped to ``[0, 1]``, as float32 ``(3, H, W)``."""
        return np.clip(self.forward(pyramid).data, 0.0, 1.0).astype(np.float32)


def _dilate(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    p = np.pad(mask, 1)
    h, w = mask.shape
    for dy in range(3):
        for dx in range(3):
            out |= p[dy:dy + h, dx:dx + w]
    return out


def _pool_mask(mask: np.ndarray) -> np.ndarray:
    h2, w2 = mask.shape[0] // 2, mask.shape[1] // 2
    return mask[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2).any(axis=(1, 3))


def _up_mask(mask: np.ndarray, size) -> np.ndarray:
    Ah = upsample_support(mask.shape[0], size[0])
    Aw = upsample_support(mask.shape[1], size[1])
    return (Ah.astype(int) @ mask.astype(int) @ Aw.T.astype(int)) > 0


def upsample_support(n: int, m: int) -> np.ndarray:
    return ad.upsample_matrix(n, m) != 0


def influence_mask(level_masks) -> np.ndarray:
    """Level-0 output pixels that can depend on the flagged input pixels.

    Propagates boolean dependency masks through the exact network wiring
    (3x3 convs dilate, pooling and upsampling follow their stencils), so a
    pixel outside the returned mask is provably unaffected by a change
    confined to the flagged inputs.
    """
    m = [np.asarray(x, dtype=bool) for x in level_masks]
    gates = [_dilate(x) for x in m]
    up = gates[-1]
    for t in range(LEVELS - 2, -1, -1):
        size = gates[t].shape
        f_c = _dilate(gates[t])
        f_d = _up_mask(_pool_mask(gates[t]) | gates[t + 1], size)
        coarse = _up_mask(up, size)
        up = _dilate(f_c | f_d | coarse)
    return up


def receptive_radius(size=(128, 128)) -> int:
    """Max Chebyshev distance (level-0 pixels) from a changed input to an affected output.

    Measured by propagating a single changed pixel on each level through
    :func:`influence_mask`, over every pooling phase of that level; a level-t
    pixel covers a ``2**t`` square of level-0 pixels.
    """
    H, W = size
    radius = 0
    for t in range(LEVELS):
        phases = 2 ** (LEVELS - 1 - t)
        base = ((H >> t) // 2, (W >> t) // 2)
        for oy in range(phases):
            for ox in range(phases):
                masks = [np.zeros((H >> s, W >> s), dtype=bool) for s in range(LEVELS)]
                cy, cx = base[0] + oy, base[1] + ox
                masks[t][cy, cx] = True
                ys, xs = np.nonzero(influence_mask(masks))
                s = 2**t
                dy = np.maximum(np.maximum(cy * s - ys, ys - (cy * s + s - 1)), 0)
                dx = np.maximum(np.maximum(cx * s - xs, xs - (cx * s + s - 1)), 0)
                radius = max(radius, int(np.max(np.maximum(dy, dx))))
    return radius
