"""
Training on the synthetic plane-and-cube scene
==============================================

Descriptors and network weights are fitted jointly to eight posed views.
Two more views are held out to see how well the model generalizes.

The full acceptance run uses 2000 steps; a few hundred already show the
picture filling in.
"""
import sys
import time

import numpy as np

from nprender import TrainConfig, fit, psnr, render_view, ssim, toy_dataset
from nprender.io import write_image

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300

ds = toy_dataset()
# 64x64 frames are smaller than the default 256 patch, so train on whole frames
cfg = TrainConfig(epochs=10**6, max_steps=steps, patches_per_iter=1,
                  patch_width=64, patch_height=64, max_patch_fraction=None,
                  lr_theta=1e-3, w_l1=1.0)


def progress(rec):
    if rec["step"] % 50 == 0:
        print(f"step {rec['step']:5d}  image {rec['image']}  loss {rec['loss']:.4f}  psnr {rec['psnr']:.2f}")


t0 = time.perf_counter()
res = fit(ds.scene, ds.train_cameras, ds.train_images, cfg, on_step=progress)
print(f"{res.steps} steps in {time.perf_counter() - t0:.0f} s")

for name, cams, imgs in (("train", ds.train_cameras, ds.train_images),
                         ("held-out", ds.test_cameras, ds.test_images)):
    scores = [(psnr(render_view(res.scene, res.net, c), i), ssim(render_view(res.scene, res.net, c), i))
              for c, i in zip(cams, imgs)]
    p, s = np.mean(scores, axis=0)
    print(f"{name:9s} PSNR {p:.2f} dB  SSIM {s:.3f}")

cam = ds.test_cameras[0]
write_image("heldout_render.png", render_view(res.scene, res.net, cam))
write_image("heldout_truth.png", ds.test_images[0])
print("wrote heldout_render.png and heldout_truth.png")
