"""Joint optimization of point descriptors and network weights."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .camera import Camera
from .errors import NumericalError, ValidationError
from .io import save_checkpoint
from .losses import l1_loss, perceptual_loss, psnr, psnr_loss, ssim
from .omeganet import DEFAULT_WIDTHS, OmegaNet
from .raster import build_pyramid, scatter_descriptor_gradients, visible_point_set
from .sampler import (
    MAX_PATCH_FRACTION,
    PATCHES_PER_ITER,
    new_scores,
    patch_target,
    sample_patch,
    select_training_set,
    update_score,
)
from .scene import Scene

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 1
    patches_per_iter: int = PATCHES_PER_ITER
    patch_width: int = 256
    patch_height: int = 256
    mc_ratio: float = 0.8
    w_vgg: float = 1.0
    w_l1: float = 0.0
    w_psnr: float = 0.0
    lr_theta: float = 1e-4
    lr_desc: float = 1e-1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    zoom_range: tuple = (1.0, 1.0)
    max_patch_fraction: float | None = MAX_PATCH_FRACTION
    max_steps: int | None = None
    widths: tuple = DEFAULT_WIDTHS
    desc_dim: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.mc_ratio <= 1:
            raise ValidationError(f"mc_ratio must be in (0, 1], got {self.mc_ratio}")
        if min(self.w_vgg, self.w_l1, self.w_psnr) < 0:
            raise ValidationError("loss weights must be non-negative")
        if self.patches_per_iter < 1:
            raise ValidationError("patches_per_iter must be >= 1")
        self.zoom_range = tuple(self.zoom_range)
        self.widths = tuple(self.widths)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimState:
    """Adam moments for network weights and for the descriptor table."""

    m: dict
    v: dict
    desc_m: np.ndarray
    desc_v: np.ndarray
    step: int = 0

    @classmethod
    def create(cls, net: OmegaNet, n_points: int, desc_dim: int) -> "OptimState":
        return cls(
            {k: np.zeros_like(p.data) for k, p in net.params.items()},
            {k: np.zeros_like(p.data) for k, p in net.params.items()},
            np.zeros((n_points, desc_dim), dtype=np.float32),
            np.zeros((n_points, desc_dim), dtype=np.float32),
        )


def adam_update(value, grad, m, v, lr, cfg: TrainConfig, step: int):
    """One bias-corrected Adam update; mutates ``m`` and ``v``, returns the new value."""
    dtype = value.dtype
    grad = grad.astype(dtype, copy=False)
    m *= dtype.type(cfg.beta1)
    m += dtype.type(1 - cfg.beta1) * grad
    v *= dtype.type(cfg.beta2)
    v += dtype.type(1 - cfg.beta2) * grad * grad
    mhat = m / dtype.type(1 - cfg.beta1**step)
    vhat = v / dtype.type(1 - cfg.beta2**step)
    return value - dtype.type(lr) * mhat / (np.sqrt(vhat) + dtype.type(cfg.eps))


@dataclass
class StepResult:
    scene: Scene
    loss: float
    perceptual: float
    psnr: float
    patches: list = field(default_factory=list)
    visible: np.ndarray | None = None


def patch_losses(out, target, cfg: TrainConfig):
    """Weighted total loss tensor and the perceptual term (always computed)."""
    perc = perceptual_loss(out, target)
    total = ad.scale(perc, cfg.w_vgg)
    if cfg.w_l1:
        total = ad.add(total, ad.scale(l1_loss(out, target), cfg.w_l1))
    if cfg.w_psnr:
        total = ad.add(total, ad.scale(psnr_loss(out, target), cfg.w_psnr))
    return total, perc


def train_step(scene: Scene, cam: Camera, image: np.ndarray, net: OmegaNet,
               optim: OptimState, cfg: TrainConfig, rng: np.random.Generator) -> StepResult:
    """One optimization step on ``cfg.patches_per_iter`` random patches of one image.

    Network weights and ``optim`` are updated in place; the returned scene
    carries the new descriptors.  Only descriptor rows that won a pixel in
    some sampled pyramid are touched.
    """
    image = np.asarray(image)
    if image.shape != (3, cam.height, cam.width):
        raise ValidationError(
            f"image for camera {cam.id!r} has shape {image.shape}, expected {(3, cam.height, cam.width)}"
        )
    n, d = scene.n_points, scene.desc_dim
    net.zero_grad()
    desc_grad = np.zeros((n, d), dtype=np.float64)
    visible = np.zeros(n, dtype=bool)
    totals, percs, psnrs, specs = [], [], [], []
    inv_p = 1.0 / cfg.patches_per_iter
    for _ in range(cfg.patches_per_iter):
        spec, pcam = sample_patch(cam, cfg.patch_width, cfg.patch_height, cfg.zoom_range, rng,
                                  cfg.max_patch_fraction)
        pyr = build_pyramid(scene, pcam)
        target = patch_target(image, cam, spec)
        inputs = net.pyramid_inputs(pyr, requires_grad=True)
        out = net.forward(inputs)
        total, perc = patch_losses(out, target, cfg)
        ad.backward(ad.scale(total, inv_p))
        grads = [x.grad if x.grad is not None else np.zeros_like(x.data) for x in inputs]
        desc_grad += scatter_descriptor_gradients(grads, pyr, n)
        visible[visible_point_set(pyr)] = True
        totals.append(total.item())
        percs.append(perc.item())
        psnrs.append(psnr(np.clip(out.data, 0, 1), target))
        specs.append(spec)
    loss = float(np.mean(totals))
    if not math.isfinite(loss):
        raise NumericalError(
            f"non-finite loss at step {optim.step + 1} on image {cam.id!r}, patches "
            f"{[s.origin for s in specs]}"
        )
    optim.step += 1
    for k, p in net.params.items():
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.data = adam_update(p.data, grad, optim.m[k], optim.v[k], cfg.lr_theta, cfg, optim.step)
    desc = scene.descriptors
    rows = np.flatnonzero(visible)
    if rows.size:
        desc = desc.copy()
        m, v = optim.desc_m[rows], optim.desc_v[rows]
        desc[rows] = adam_update(desc[rows], desc_grad[rows], m, v, cfg.lr_desc, cfg, optim.step)
        optim.desc_m[rows], optim.desc_v[rows] = m, v
    return StepResult(scene.with_descriptors(desc), loss, float(np.mean(percs)),
                      float(np.mean(psnrs)), specs, visible)


@dataclass
class FitResult:
    scene: Scene
    net: OmegaNet
    optim: OptimState
    scores: list
    selections: list
    log: list
    steps: int


def fit(scene: Scene, cameras, images, cfg: TrainConfig, net: OmegaNet | None = None,
        scores=None, update_scores: bool = True, out_dir=None, on_step=None) -> FitResult:
    """Monte Carlo training over epochs.

    Each epoch keeps the ``ceil(mc_ratio * n)`` worst-scoring images (never
    trained images first), visits them in seeded random order and refreshes
    their score with the step's perceptual loss.  With ``out_dir`` a
    checkpoint is written after every epoch.
    """
    cameras = list(cameras)
    images = list(images)
    if len(cameras) != len(images):
        raise ValidationError(f"{len(cameras)} cameras but {len(images)} images")
    if not cameras:
        raise ValidationError("no training images")
    ids = [c.id or str(i) for i, c in enumerate(cameras)]
    if len(set(ids)) != len(ids):
        raise ValidationError("camera ids must be unique")
    by_id = dict(zip(ids, zip(cameras, images)))
    if net is None:
        net = OmegaNet(scene.desc_dim, cfg.widths, seed=cfg.seed)
    if net.desc_dim != scene.desc_dim:
        raise ValidationError(f"network expects d={net.desc_dim}, scene has d={scene.desc_dim}")
    optim = OptimState.create(net, scene.n_points, scene.desc_dim)
    scores = new_scores(ids) if scores is None else list(scores)
    rng = np.random.default_rng(cfg.seed)
    selections, records, steps = [], [], 0
    for epoch in range(cfg.epochs):
        selected = select_training_set(scores, cfg.mc_ratio)
        selections.append(selected)
        for i in rng.permutation(len(selected)):
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                break
            image_id = selected[i]
            cam, img = by_id[image_id]
            res = train_step(scene, cam, img, net, optim, cfg, rng)
            scene = res.scene
            steps += 1
            if update_scores:
                scores = update_score(scores, image_id, res.perceptual)
            rec = {"epoch": epoch, "step": steps, "image": image_id,
                   "loss": res.loss, "psnr": res.psnr}
            records.append(rec)
            if on_step is not None:
                on_step(rec)
        log.info("epoch %d: %d steps, last loss %.5f", epoch, steps, records[-1]["loss"] if records else float("nan"))
        if out_dir is not None:
            save_checkpoint(out_dir, scene, net, cfg, log_records=records)
        if cfg.max_steps is not None and steps >= cfg.max_steps:
            break
    return FitResult(scene, net, optim, scores, selections, records, steps)


def render_view(scene: Scene, net: OmegaNet, cam: Camera) -> np.ndarray:
    """Clamped RGB ``(3, H, W)`` float32 image of ``scene`` from ``cam``."""
    return net.render(build_pyramid(scene, cam))


def evaluate(scene: Scene, net: OmegaNet, cameras, images) -> list:
    """Per-frame PSNR, SSIM and feature loss records."""
    out = []
    for cam, img in zip(cameras, images):
        pred = render_view(scene, net, cam)
        target = np.asarray(img, dtype=np.float32)
        feat = perceptual_loss(ad.Tensor(pred), target).item()
        out.append({"id": cam.id, "psnr": psnr(pred, target), "ssim": ssim(pred, target),
                    "feature_loss": float(feat)})
    return out
