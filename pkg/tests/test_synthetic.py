import numpy as np

from nprender.camera import Camera, look_at
from nprender.synthetic import (
    CUBE_MAX,
    CUBE_MIN,
    HELD_OUT,
    PLANE_HALF,
    SKY,
    orbit_cameras,
    plane_color,
    render_ground_truth,
    sample_points,
    toy_dataset,
)


def on_surface(p):
    on_plane = (np.abs(p[:, 2]) < 1e-12) & (np.abs(p[:, :2]) <= PLANE_HALF).all(axis=1)
    inside = ((p >= CUBE_MIN - 1e-12) & (p <= CUBE_MAX + 1e-12)).all(axis=1)
    on_face = np.zeros(len(p), dtype=bool)
    for a in range(3):
        on_face |= np.isclose(p[:, a], CUBE_MIN[a]) | np.isclose(p[:, a], CUBE_MAX[a])
    return on_plane | (inside & on_face)


def test_points_on_surfaces():
    pts, cols = sample_points(5000, 0)
    assert pts.shape == (5000, 3) and cols.shape == (5000, 3)
    assert on_surface(pts).all()
    assert cols.min() >= 0 and cols.max() <= 1


def test_sampling_deterministic():
    a, _ = sample_points(300, 4)
    b, _ = sample_points(300, 4)
    assert a.tobytes() == b.tobytes()


def test_ground_truth_quantized_and_sky():
    cam = orbit_cameras(10, 32)[0]
    img = render_ground_truth(cam)
    np.testing.assert_array_equal(np.round(img * 255), img * 255)
    # top row looks over the plane edge into the sky
    np.testing.assert_allclose(img[:, 0, 0], np.round(SKY * 255) / 255)


def test_straight_down_view_sees_plane():
    R, t = look_at([1.5, 1.5, 3.0], [1.5, 1.5, 0.0], up=[0, 1, 0])
    cam = Camera(8, 8, 4, 4, 8, 8, R, t)
    img = render_ground_truth(cam, supersample=1)
    # centre pixel ray hits (1.5, 1.5, 0) up to half a pixel of offset
    expected = plane_color(np.array([1.5, 1.5, 0.0]))
    np.testing.assert_allclose(img[:, 4, 4], expected, atol=0.03)


def test_toy_split():
    ds = toy_dataset(500, 16)
    assert len(ds.train_cameras) == 8 and len(ds.test_cameras) == 2
    assert [c.id for c in ds.test_cameras] == [f"{i:03d}" for i in HELD_OUT]
    assert ds.scene.n_points == 500
    assert all(img.shape == (3, 16, 16) for img in ds.train_images)
