import numpy as np
import pytest

from nprender import autodiff as ad
from nprender.autodiff import Tensor
from nprender.camera import Camera
from nprender.errors import NumericalError, ValidationError
from nprender.omeganet import OmegaNet
from nprender.raster import build_pyramid, scatter_descriptor_gradients
from nprender.sampler import ImageScore, select_training_set
from nprender.scene import Scene, init_descriptors
from nprender.trainer import OptimState, TrainConfig, fit, patch_losses, train_step

from conftest import random_scene

TINY = (4, 4, 4, 4)


def small_cfg(**kw):
    base = dict(patch_width=16, patch_height=16, patches_per_iter=1, max_patch_fraction=None,
                widths=TINY, lr_theta=1e-3)
    base.update(kw)
    return TrainConfig(**base)


def front_camera(size=16, cid="c0"):
    return Camera(size, size, size / 2, size / 2, size, size, translation=[0, 0, 3.0], id=cid)


def setup(n=600, seed=0, size=16):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, (n, 3))
    scene = Scene(pts, init_descriptors(n, 8, seed))
    cam = front_camera(size)
    img = rng.uniform(0, 1, (3, size, size)).astype(np.float32)
    return scene, cam, img


def snapshot(net):
    return {k: p.data.tobytes() for k, p in net.params.items()}


class TestTrainStep:
    def test_zero_learning_rates(self):
        scene, cam, img = setup()
        cfg = small_cfg(lr_theta=0.0, lr_desc=0.0)
        net = OmegaNet(8, TINY)
        before = snapshot(net)
        optim = OptimState.create(net, scene.n_points, 8)
        res = train_step(scene, cam, img, net, optim, cfg, np.random.default_rng(0))
        assert snapshot(net) == before
        assert res.scene.descriptors.tobytes() == scene.descriptors.tobytes()
        assert np.isfinite(res.loss) and res.loss > 0

    def test_only_visible_rows_change(self):
        scene, cam, img = setup()
        net = OmegaNet(8, TINY)
        optim = OptimState.create(net, scene.n_points, 8)
        res = train_step(scene, cam, img, net, optim, small_cfg(), np.random.default_rng(0))
        changed = np.any(res.scene.descriptors != scene.descriptors, axis=1)
        assert changed.any()
        assert not np.any(changed & ~res.visible)

    def test_never_visible_point_after_100_steps(self):
        scene, cam, img = setup(n=300)
        # one point behind the camera, one hidden behind a nearer point on the optical axis
        pts = np.vstack([scene.positions, [[0, 0, 5.0]], [[0, 0, -2.5]], [[0, 0, -2.0]]])
        n = len(pts)
        scene = Scene(pts, init_descriptors(n, 8, 1))
        hidden = [n - 3, n - 1]
        net = OmegaNet(8, TINY)
        optim = OptimState.create(net, n, 8)
        rng = np.random.default_rng(0)
        s = scene
        for _ in range(100):
            res = train_step(s, cam, img, net, optim, small_cfg(), rng)
            assert not res.visible[hidden].any()
            s = res.scene
        assert s.descriptors[hidden].tobytes() == scene.descriptors[hidden].tobytes()
        assert np.any(s.descriptors[n - 2] != scene.descriptors[n - 2])

    def test_single_pixel_scene_converges(self):
        cam = front_camera()
        scene = Scene([[0.0, 0.0, 0.0]], init_descriptors(1, 8, 0))
        img = np.full((3, 16, 16), 0.3, dtype=np.float32)
        img[:, 8, 8] = (0.9, 0.1, 0.5)
        net = OmegaNet(8, TINY, seed=0)
        optim = OptimState.create(net, 1, 8)
        rng = np.random.default_rng(0)
        cfg = small_cfg(w_l1=1.0)
        losses = []
        for _ in range(200):
            res = train_step(scene, cam, img, net, optim, cfg, rng)
            scene = res.scene
            losses.append(res.loss)
        smooth = np.convolve(losses, np.ones(10) / 10, mode="valid")
        assert np.all(np.diff(smooth) <= 1e-6)
        assert smooth[-1] < 0.5 * smooth[0]

    def test_image_shape_checked(self):
        scene, cam, _ = setup()
        net = OmegaNet(8, TINY)
        with pytest.raises(ValidationError, match="expected"):
            train_step(scene, cam, np.zeros((3, 8, 8)), net, OptimState.create(net, scene.n_points, 8),
                       small_cfg(), np.random.default_rng(0))

    def test_nan_loss_aborts_without_update(self):
        scene, cam, img = setup()
        img = img.copy()
        img[0, 3, 3] = np.nan
        net = OmegaNet(8, TINY)
        before = snapshot(net)
        optim = OptimState.create(net, scene.n_points, 8)
        with np.errstate(invalid="ignore"):
            with pytest.raises(NumericalError, match=r"step 1 on image 'c0'.*\(0, 0\)"):
                train_step(scene, cam, img, net, optim, small_cfg(), np.random.default_rng(0))
        assert snapshot(net) == before and optim.step == 0


def test_end_to_end_gradient_matches_fd():
    """Total loss (perceptual + l1 + psnr) against descriptors and weights, float64."""
    rng = np.random.default_rng(3)
    scene = random_scene(rng, n=500)
    cam = Camera(16, 16, 8, 8, 16, 16, translation=[0, 0, 2.5])
    target = rng.uniform(0, 1, (3, 16, 16))
    cfg = small_cfg(w_l1=0.5, w_psnr=0.1)
    net = OmegaNet(8, TINY, seed=2, dtype=np.float64)
    pyr = build_pyramid(scene, cam)
    base = [lvl.descriptor_image.astype(np.float64) for lvl in pyr]

    def loss(levels):
        return patch_losses(net.forward([Tensor(a) for a in levels]), target, cfg)[0].item()

    inputs = [Tensor(a.copy(), requires_grad=True) for a in base]
    ad.backward(patch_losses(net.forward(inputs), target, cfg)[0])
    dgrad = scatter_descriptor_gradients([x.grad for x in inputs], pyr, scene.n_points)

    # a descriptor entry appears at every pixel its point wins, on every level
    winners = np.unique(np.concatenate([l.point_map[l.coverage] for l in pyr]))
    eps = 1e-6
    for k in rng.choice(winners, 6, replace=False):
        for c in (0, 5):
            plus = [a.copy() for a in base]
            minus = [a.copy() for a in base]
            for a, b, lvl in zip(plus, minus, pyr):
                a[c][lvl.point_map == k] += eps
                b[c][lvl.point_map == k] -= eps
            num = (loss(plus) - loss(minus)) / (2 * eps)
            assert abs(dgrad[k, c] - num) <= 1e-3 * max(abs(num), 1e-6)

    saved = {k: p.grad.copy() for k, p in net.params.items()}
    for name in ("gate0.feat.w", "detail1.w", "merge0.b.b", "head.w"):
        flat = net.params[name].data.reshape(-1)
        for i in rng.choice(flat.size, 3, replace=False):
            o = flat[i]
            flat[i] = o + eps
            fp = loss(base)
            flat[i] = o - eps
            fm = loss(base)
            flat[i] = o
            num = (fp - fm) / (2 * eps)
            ana = saved[name].reshape(-1)[i]
            assert abs(ana - num) <= 1e-3 * max(abs(num), 1e-6)

    # points that never won a pixel get exactly zero
    losers = np.setdiff1d(np.arange(scene.n_points), winners)
    assert losers.size and not dgrad[losers].any()


def dataset(n_images=3, seed=0):
    rng = np.random.default_rng(seed)
    scene = Scene(rng.uniform(-1, 1, (400, 3)), init_descriptors(400, 8, seed))
    cams, imgs = [], []
    for i in range(n_images):
        cams.append(Camera(16, 16, 8, 8, 16, 16, translation=[0.1 * i, 0, 3.0], id=f"v{i}"))
        imgs.append(rng.uniform(0, 1, (3, 16, 16)).astype(np.float32))
    return scene, cams, imgs


class TestFit:
    def test_single_image_every_epoch(self):
        scene, cams, imgs = dataset(1)
        res = fit(scene, cams, imgs, small_cfg(epochs=3, mc_ratio=0.3))
        assert res.selections == [["v0"]] * 3
        assert [r["image"] for r in res.log] == ["v0"] * 3

    def test_frozen_scores_follow_sort_oracle(self):
        scene, cams, imgs = dataset(10)
        rng = np.random.default_rng(7)
        scores = [ImageScore(c.id, float(q), False) for c, q in zip(cams, rng.uniform(0, 2, 10))]
        oracle = [s.image_id for s in sorted(scores, key=lambda s: -s.q)][:8]
        res = fit(scene, cams, imgs, small_cfg(epochs=2, mc_ratio=0.8), scores=scores,
                  update_scores=False)
        assert res.selections == [oracle, oracle]
        assert sorted(r["image"] for r in res.log[:8]) == sorted(oracle)

    def test_stale_images_trained_first(self):
        scene, cams, imgs = dataset(4)
        one = fit(scene, cams, imgs, small_cfg(epochs=1, mc_ratio=0.5))
        two = fit(scene, cams, imgs, small_cfg(epochs=2, mc_ratio=0.5))
        # all four are stale: the first epoch takes the two smallest ids
        assert one.selections[0] == ["v0", "v1"]
        # then the two never-trained images come before any scored one
        assert sorted(two.selections[1]) == ["v2", "v3"]
        assert two.selections[1] == select_training_set(one.scores, 0.5)

    def test_deterministic(self):
        scene, cams, imgs = dataset(3)
        a = fit(scene, cams, imgs, small_cfg(epochs=2))
        b = fit(scene, cams, imgs, small_cfg(epochs=2))
        assert a.scene.descriptors.tobytes() == b.scene.descriptors.tobytes()
        assert snapshot(a.net) == snapshot(b.net)
        assert a.log == b.log

    def test_count_mismatch(self):
        scene, cams, imgs = dataset(3)
        with pytest.raises(ValidationError, match="3 cameras but 2 images"):
            fit(scene, cams, imgs[:2], small_cfg())

    def test_max_steps_and_checkpoint(self, tmp_path):
        scene, cams, imgs = dataset(3)
        res = fit(scene, cams, imgs, small_cfg(epochs=5, max_steps=4), out_dir=tmp_path)
        assert res.steps == 4
        assert (tmp_path / "weights.rckp").exists()
        lines = (tmp_path / "train_log.jsonl").read_text().splitlines()
        assert len(lines) == 4

    def test_bad_config(self):
        with pytest.raises(ValidationError):
            TrainConfig(mc_ratio=0)
        with pytest.raises(ValidationError):
            TrainConfig(w_l1=-1)
