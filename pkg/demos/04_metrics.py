"""
Image metrics and training losses
=================================

PSNR and SSIM are reported during evaluation. Training uses a feature-space
loss computed with a fixed random convolutional network, optionally with L1
and a PSNR term.
"""
import numpy as np

from nprender import psnr, ssim
from nprender.autodiff import Tensor
from nprender.losses import l1_loss, perceptual_loss, psnr_loss
from nprender.synthetic import orbit_cameras, render_ground_truth

gt = render_ground_truth(orbit_cameras(10, 64)[0])
rng = np.random.default_rng(0)

print(f"PSNR of black vs mid-gray: {psnr(np.zeros((3, 8, 8)), np.full((3, 8, 8), 0.5)):.4f} dB")
print(f"identical images: PSNR {psnr(gt, gt)} (capped), SSIM {ssim(gt, gt)}")

print("noise   PSNR     SSIM    feature   L1      PSNR-loss")
for sigma in (0.01, 0.03, 0.1, 0.3):
    noisy = np.clip(gt + rng.normal(0, sigma, gt.shape), 0, 1)
    t = Tensor(noisy)
    print(f"{sigma:5.2f}  {psnr(noisy, gt):6.2f}  {ssim(noisy, gt):6.3f}  "
          f"{perceptual_loss(t, gt).item():7.4f}  {l1_loss(t, gt).item():.4f}  {psnr_loss(t, gt).item():8.2f}")
