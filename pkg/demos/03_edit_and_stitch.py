"""
Editing, stitching and panoramas
================================

Edits move or delete points but never touch their descriptors, so the same
network renders the result. Stitching concatenates two clouds and their
descriptor tables.
"""
import numpy as np

from nprender import AABox, OmegaNet, RigidTransform, render_view, toy_dataset
from nprender.editor import edit_move, edit_remove, panorama, stitch
from nprender.io import write_image
from nprender.omeganet import receptive_radius

ds = toy_dataset()
scene, cam = ds.scene, ds.train_cameras[0]
# an untrained network is enough to see geometry changes
net = OmegaNet(scene.desc_dim, seed=0)

cube = AABox([-0.45, -0.45, -0.01], [0.45, 0.45, 0.85])
print(f"cube box holds {cube.contains(scene.positions).sum()} points")

moved = edit_move(scene, cube, RigidTransform(translation=[0.8, 0.0, 0.0]))
removed = edit_remove(scene, cube)
print(f"after removal: {removed.n_points} points")
assert np.array_equal(moved.descriptors, scene.descriptors)

before = render_view(scene, net, cam)
after = render_view(moved, net, cam)
changed = np.any(before != after, axis=0)
print(f"moving the cube changed {changed.mean():.0%} of pixels; "
      f"output can only change within {receptive_radius()} px of the edited points")

# a second copy of the scene, shifted five units along x
merged = stitch(scene, scene, RigidTransform(translation=[5.0, 0.0, 0.0]))
print(f"stitched scene: {merged.n_points} points, descriptor rows {merged.descriptors.shape[0]}")

pano = panorama(scene, net, cam, k=3, hfov=50.0)
print(f"panorama shape {pano.shape}")
write_image("edit_before.png", before)
write_image("edit_after.png", after)
write_image("panorama.png", pano)
