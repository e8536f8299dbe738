"""
Rasterizing a point cloud into a descriptor pyramid
===================================================

Every point carries a small learned vector. A pinhole camera projects the
points, and a z-buffer keeps the nearest one per pixel, independently at
four halved resolutions.
"""
import numpy as np

from nprender import build_pyramid, toy_dataset
from nprender.io import write_image
from nprender.raster import visible_point_set

ds = toy_dataset(n_points=5000, size=64)
cam = ds.train_cameras[0]
print(f"scene: {ds.scene.n_points} points, d={ds.scene.desc_dim}")
print(f"camera {cam.id}: {cam.width}x{cam.height}, fx={cam.fx:.2f}")

# build the pyramid; each level is rasterized from scratch
pyramid = build_pyramid(ds.scene, cam)
for t, level in enumerate(pyramid):
    h, w = level.shape
    print(f"level {t}: {w}x{h}, {level.coverage.mean():.0%} of pixels covered")

# only points that win some pixel receive gradient during training
visible = visible_point_set(pyramid)
print(f"{visible.size} of {ds.scene.n_points} points win at least one pixel")

# the point colors stand in for descriptors to show what the z-buffer picked
lvl = pyramid[0]
rgb = np.zeros((3,) + lvl.shape, dtype=np.float32)
rgb[:, lvl.coverage] = ds.scene.colors[lvl.point_map[lvl.coverage]].T / 255
write_image("raster_level0.png", rgb)
write_image("ground_truth.png", ds.train_images[0])
print("wrote raster_level0.png and ground_truth.png")
