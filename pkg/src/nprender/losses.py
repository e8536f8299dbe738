"""Image losses (differentiable) and quality metrics (plain numpy)."""
from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ValidationError

FEATURE_CHANNELS = (8, 16, 32, 64)
FEATURE_SEED = 0
PSNR_EPS = 1e-10
PSNR_CAP = 99.0


def _check_pair(a, b, what: str) -> None:
    sa = a.shape
    sb = b.shape
    if sa != sb:
        raise ValidationError(f"{what}: image shapes {sa} and {sb} differ")


class FixedFeatureNet:
    """Untrained, seeded conv feature pyramid used in place of a pretrained VGG.

    Four stages of ``conv3x3 -> elu -> avg_pool2``; each stage output is one
    feature layer.  Weights come from ``numpy.random.default_rng(0)`` (PCG64)
    and are never updated.
    """

    def __init__(self, channels=FEATURE_CHANNELS, seed: int = FEATURE_SEED, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)
        self.weights = []
        c_in = 3
        for c in channels:
            w = rng.normal(0.0, np.sqrt(2.0 / (9 * c_in)), size=(c, c_in, 3, 3))
            self.weights.append((Tensor(w.astype(self.dtype)), Tensor(np.zeros(c, dtype=self.dtype))))
            c_in = c
        self.min_size = 2 ** len(channels)

    def features(self, image) -> list:
        x = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=self.dtype))
        if x.shape[1] < self.min_size or x.shape[2] < self.min_size:
            raise ValidationError(
                f"feature net needs images of at least {self.min_size}x{self.min_size}, got {x.shape[1:]}"
            )
        feats = []
        for w, b in self.weights:
            x = ad.avg_pool2(ad.elu(ad.conv2d(x, w, b)))
            feats.append(x)
        return feats


_feature_nets = {}


def feature_net(dtype=np.float32) -> FixedFeatureNet:
    key = np.dtype(dtype).str
    if key not in _feature_nets:
        _feature_nets[key] = FixedFeatureNet(dtype=dtype)
    return _feature_nets[key]


def perceptual_loss(image: Tensor, target, net: FixedFeatureNet | None = None) -> Tensor:
    """Sum over feature layers of the mean absolute feature difference."""
    target = np.asarray(target.data if isinstance(target, Tensor) else target)
    _check_pair(image, target, "perceptual_loss")
    net = net or feature_net(image.data.dtype)
    fa = net.features(image)
    fb = net.features(target.astype(image.data.dtype))
    loss = None
    for a, b in zip(fa, fb):
        term = ad.mean(ad.absolute(ad.sub(a, Tensor(b.data))))
        loss = term if loss is None else ad.add(loss, term)
    return loss


def l1_loss(image: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=image.data.dtype)
    _check_pair(image, target, "l1_loss")
    return ad.mean(ad.absolute(ad.sub(image, Tensor(target))))


def psnr_loss(image: Tensor, target) -> Tensor:
    """``10 log10(mse + 1e-10)``, i.e. negative PSNR for unit dynamic range."""
    target = np.asarray(target, dtype=image.data.dtype)
    _check_pair(image, target, "psnr_loss")
    mse = ad.mean(ad.square(ad.sub(image, Tensor(target))))
    return ad.scale(ad.log10(ad.add_scalar(mse, PSNR_EPS)), 10.0)


def psnr(image, target) -> float:
    image = np.asarray(image, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_pair(image, target, "psnr")
    mse = float(np.mean((image - target) ** 2))
    if mse < PSNR_EPS:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(image, target, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean SSIM over valid window positions, per channel, then channel mean.

    Images are ``(c, h, w)`` or ``(h, w)``; both sides must be at least
    ``window`` pixels.
    """
    a = np.asarray(image, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    _check_pair(a, b, "ssim")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[1:]) < window:
        raise ValidationError(f"ssim needs images of at least {window}x{window}, got {a.shape[1:]}")
    kern = gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    r = window // 2
    vals = []
    for x, y in zip(a, b):
        def filt(img):
            return correlate(img, kern, mode="constant")[r:img.shape[0] - r, r:img.shape[1] - r]

        mx, my = filt(x), filt(y)
        sxx = filt(x * x) - mx * mx
        syy = filt(y * y) - my * my
        sxy = filt(x * y) - mx * my
        smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
        vals.append(smap.mean())
    return float(np.mean(vals))
