import json
import struct

import numpy as np
import pytest
from PIL import Image

from nprender.camera import Camera
from nprender.errors import ValidationError
from nprender.io import (
    camera_from_record,
    camera_to_record,
    decimate,
    load_checkpoint,
    read_cameras,
    read_descriptors,
    read_edit_script,
    read_image,
    read_images,
    read_ply,
    read_weights,
    save_checkpoint,
    write_cameras,
    write_descriptors,
    write_image,
    write_ply,
    write_weights,
)
from nprender.omeganet import OmegaNet
from nprender.scene import Scene, init_descriptors

from conftest import random_rotation

TINY = (4, 4, 4, 4)


def identity_record(**kw):
    rec = {"id": "cam0", "fx": 100.0, "fy": 100.0, "cx": 32.0, "cy": 24.0, "width": 64, "height": 48,
           "R": [1, 0, 0, 0, 1, 0, 0, 0, 1], "t": [0, 0, 0]}
    rec.update(kw)
    return rec


class TestPly:
    def test_empty(self, tmp_path):
        p = tmp_path / "e.ply"
        p.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\n"
                      b"property float y\nproperty float z\nend_header\n")
        pos, colors = read_ply(p)
        assert pos.shape == (0, 3) and colors is None

    def test_ascii_binary_equivalent(self, tmp_path):
        pts = np.array([[0.5, -1.25, 3.0], [1e-3, 2.0, -7.5], [0.0, 0.0, 1.0]])
        cols = np.array([[255, 0, 10], [1, 2, 3], [128, 128, 128]], dtype=np.uint8)
        write_ply(tmp_path / "a.ply", pts, cols, binary=False)
        write_ply(tmp_path / "b.ply", pts, cols, binary=True)
        pa, ca = read_ply(tmp_path / "a.ply")
        pb, cb = read_ply(tmp_path / "b.ply")
        assert pa.tobytes() == pb.tobytes() and ca.tobytes() == cb.tobytes()
        np.testing.assert_array_equal(pa, pts)
        np.testing.assert_array_equal(ca, cols)

    def test_binary_roundtrip_10k(self, tmp_path, rng):
        pts = rng.normal(size=(10000, 3)).astype(np.float32).astype(np.float64)
        write_ply(tmp_path / "a.ply", pts)
        pos, _ = read_ply(tmp_path / "a.ply")
        write_ply(tmp_path / "b.ply", pos)
        assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()
        assert pos.tobytes() == pts.tobytes()

    def test_float64_positions_kept_exact(self, tmp_path, rng):
        pts = rng.normal(size=(50, 3))
        write_ply(tmp_path / "d.ply", pts)
        assert read_ply(tmp_path / "d.ply")[0].tobytes() == pts.tobytes()

    def test_truncated(self, tmp_path, rng):
        write_ply(tmp_path / "a.ply", rng.normal(size=(10, 3)).astype(np.float32))
        raw = (tmp_path / "a.ply").read_bytes()
        (tmp_path / "t.ply").write_bytes(raw[:-5])
        with pytest.raises(ValidationError, match="byte offset"):
            read_ply(tmp_path / "t.ply")

    def test_list_property_rejected(self, tmp_path):
        p = tmp_path / "f.ply"
        p.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\n"
                      b"property float z\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n")
        with pytest.raises(ValidationError, match="vertex_indices"):
            read_ply(p)

    def test_big_endian_rejected(self, tmp_path):
        p = tmp_path / "be.ply"
        p.write_bytes(b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n")
        with pytest.raises(ValidationError, match="binary_big_endian"):
            read_ply(p)

    def test_decimate(self, rng):
        pts = rng.normal(size=(10, 3))
        out, _ = decimate(pts, None, 4)
        np.testing.assert_array_equal(out, pts[[0, 4, 8]])
        with pytest.raises(ValidationError):
            decimate(pts, None, 0)


class TestCameras:
    def test_identity(self):
        cam = camera_from_record(identity_record())
        np.testing.assert_array_equal(cam.rotation, np.eye(3))
        np.testing.assert_array_equal(cam.translation, 0)
        assert cam.id == "cam0"

    @pytest.mark.parametrize("fx", [0.0, -5.0])
    def test_bad_focal(self, fx):
        with pytest.raises(ValidationError, match="cam0"):
            camera_from_record(identity_record(fx=fx))

    def test_missing_field(self):
        rec = identity_record()
        del rec["cy"]
        with pytest.raises(ValidationError, match="'cam0' lacks field 'cy'"):
            camera_from_record(rec)

    def test_non_orthonormal(self):
        with pytest.raises(ValidationError, match="orthonormal"):
            camera_from_record(identity_record(R=[1, 0, 0, 0, 1.01, 0, 0, 0, 1]))

    def test_small_error_projected(self):
        cam = camera_from_record(identity_record(R=[1, 0, 0, 0, 1 + 2e-5, 0, 0, 0, 1]))
        np.testing.assert_allclose(cam.rotation.T @ cam.rotation, np.eye(3), atol=1e-12)

    def test_kitti_roundtrip(self, tmp_path, rng):
        R = random_rotation(rng)
        cam = Camera(721.5377, 721.5377, 609.5593, 172.854, 1242, 375, R, rng.normal(size=3), id="000123")
        write_cameras(tmp_path / "c.json", [cam])
        back = read_cameras(tmp_path / "c.json")
        assert camera_to_record(back[0]) == camera_to_record(cam)

    def test_duplicate_ids(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps([identity_record(), identity_record()]))
        with pytest.raises(ValidationError, match="duplicate"):
            read_cameras(tmp_path / "c.json")


class TestImages:
    def test_value_mapping(self, tmp_path):
        Image.fromarray(np.full((1, 1, 3), 128, dtype=np.uint8)).save(tmp_path / "p.png")
        img = read_image(tmp_path / "p.png")
        assert img.shape == (3, 1, 1)
        assert img[0, 0, 0] == pytest.approx(0.50196, abs=1e-5)

    def test_random_roundtrip_byte_exact(self, tmp_path, rng):
        arr = rng.integers(0, 256, (17, 23, 3), dtype=np.uint8)
        Image.fromarray(arr).save(tmp_path / "a.png")
        write_image(tmp_path / "b.png", read_image(tmp_path / "a.png"))
        assert np.array_equal(np.asarray(Image.open(tmp_path / "b.png")), arr)
        assert read_image(tmp_path / "a.png").tobytes() == read_image(tmp_path / "b.png").tobytes()

    def test_solid_colour(self, tmp_path):
        img = np.zeros((3, 4, 5), dtype=np.float32)
        img[1] = 1.0
        write_image(tmp_path / "s.png", img)
        np.testing.assert_array_equal(read_image(tmp_path / "s.png"), img)

    def test_wrong_mode(self, tmp_path):
        Image.fromarray(np.zeros((4, 4), dtype=np.uint8)).save(tmp_path / "g.png")
        with pytest.raises(ValidationError, match="RGB"):
            read_image(tmp_path / "g.png")
        with pytest.raises(ValidationError):
            write_image(tmp_path / "x.png", np.zeros((4, 4, 4)))

    def test_size_mismatch(self, tmp_path):
        write_image(tmp_path / "cam0.png", np.zeros((3, 10, 10)))
        with pytest.raises(ValidationError, match="cam0"):
            read_images(tmp_path, [camera_from_record(identity_record())])


class TestBinaryFormats:
    def test_descriptor_roundtrip(self, tmp_path, rng):
        table = rng.normal(size=(37, 8)).astype(np.float32)
        write_descriptors(tmp_path / "d.rdsc", table)
        raw = (tmp_path / "d.rdsc").read_bytes()
        assert len(raw) == 4 + 4 + 8 + 4 + 4 * 37 * 8
        assert raw[:4] == b"RDSC" and struct.unpack_from("<IQI", raw, 4) == (1, 37, 8)
        assert read_descriptors(tmp_path / "d.rdsc").tobytes() == table.tobytes()

    def test_descriptor_bad_length(self, tmp_path, rng):
        write_descriptors(tmp_path / "d.rdsc", rng.normal(size=(3, 2)))
        (tmp_path / "t.rdsc").write_bytes((tmp_path / "d.rdsc").read_bytes()[:-1])
        with pytest.raises(ValidationError, match="expected 24"):
            read_descriptors(tmp_path / "t.rdsc")

    def test_weights_roundtrip(self, tmp_path):
        net = OmegaNet(8, TINY, seed=3)
        write_weights(tmp_path / "w.rckp", net.state_dict())
        back = read_weights(tmp_path / "w.rckp")
        assert sorted(back) == sorted(net.params)
        for k, v in back.items():
            assert v.tobytes() == net.params[k].data.tobytes()

    def test_weights_truncated(self, tmp_path):
        write_weights(tmp_path / "w.rckp", {"a": np.ones((2, 3))})
        (tmp_path / "t.rckp").write_bytes((tmp_path / "w.rckp").read_bytes()[:-4])
        with pytest.raises(ValidationError, match="truncated"):
            read_weights(tmp_path / "t.rckp")


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, rng):
        scene = Scene(rng.normal(size=(40, 3)), init_descriptors(40, 8, 2), name="toy")
        net = OmegaNet(8, TINY, seed=1)
        save_checkpoint(tmp_path / "ck", scene, net, log_records=[{"step": 1, "loss": 0.5}])
        s2, n2, meta = load_checkpoint(tmp_path / "ck")
        assert s2.positions.tobytes() == scene.positions.tobytes()
        assert s2.descriptors.tobytes() == scene.descriptors.tobytes()
        assert n2.state_dict().keys() == net.state_dict().keys()
        assert meta["n_parameters"] == net.n_parameters and s2.name == "toy"

    def test_wrong_architecture(self, tmp_path, rng):
        scene = Scene(rng.normal(size=(5, 3)), init_descriptors(5, 8, 0))
        save_checkpoint(tmp_path / "ck", scene, OmegaNet(8, TINY))
        write_weights(tmp_path / "ck" / "weights.rckp", OmegaNet(8, (4, 4, 4, 8)).state_dict())
        with pytest.raises(ValidationError, match="parameters, architecture needs"):
            load_checkpoint(tmp_path / "ck")

    def test_missing(self, tmp_path):
        with pytest.raises(ValidationError, match="not found"):
            load_checkpoint(tmp_path / "nope")


class TestEditScript:
    def test_parse(self, tmp_path):
        ops = [{"op": "move", "box": {"min": [0, 0, 0], "max": [1, 1, 1]}, "transform": {"t": [1, 2, 3]}},
               {"op": "remove", "box": {"min": [-1, -1, -1], "max": [0, 0, 0]}}]
        (tmp_path / "e.json").write_text(json.dumps(ops))
        out = read_edit_script(tmp_path / "e.json")
        assert [o[0] for o in out] == ["move", "remove"]
        np.testing.assert_array_equal(out[0][2].translation, [1, 2, 3])
        assert out[1][2] is None

    def test_bad_op(self, tmp_path):
        (tmp_path / "e.json").write_text(json.dumps([{"op": "scale", "box": {"min": [0] * 3, "max": [1] * 3}}]))
        with pytest.raises(ValidationError, match="edit 0"):
            read_edit_script(tmp_path / "e.json")
