"""Command line entry point: ``nprender {train,render,edit,stitch,eval,make-toy}``.

Exit codes: 0 success, 1 usage error, 2 invalid input data, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .editor import apply_edits, stitch
from .errors import NumericalError, ValidationError
from .scene import Scene
from .synthetic import HELD_OUT, toy_dataset
from .trainer import TrainConfig, evaluate, fit, render_view

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
PROTOCOLS = ("all", "every10", "every100discard5")

log = logging.getLogger("nprender")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def split_frames(n: int, protocol: str):
    """``(train, test)`` frame indices for an evaluation protocol.

    ``every10`` tests frames 0, 10, 20, ...; ``every100discard5`` tests
    frames 0, 100, ... and drops the 5 frames on either side of each from
    training.  ``all`` uses every frame for both.
    """
    idx = list(range(n))
    if protocol == "all":
        return idx, idx
    if protocol == "every10":
        test = [i for i in idx if i % 10 == 0]
        return [i for i in idx if i % 10], test
    if protocol == "every100discard5":
        test = [i for i in idx if i % 100 == 0]
        near = {j for t in test for j in range(t - 5, t + 6)}
        return [i for i in idx if i not in near], test
    raise UsageError(f"unknown protocol {protocol!r}")


def _pair(text: str):
    parts = text.lower().split("x")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or WxH, got {text!r}") from None
    if len(vals) == 1:
        return vals[0], vals[0]
    if len(vals) == 2:
        return vals[0], vals[1]
    raise argparse.ArgumentTypeError(f"expected N or WxH, got {text!r}")


def _widths(text: str):
    try:
        w = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad widths {text!r}") from None
    if len(w) != 4:
        raise argparse.ArgumentTypeError("expected four comma-separated widths")
    return w


def _fraction(text: str):
    if text.lower() == "none":
        return None
    return float(text)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nprender", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="fit descriptors and network to posed images")
    t.add_argument("--scene", required=True, help="point cloud (.ply)")
    t.add_argument("--cams", required=True, help="camera list (.json)")
    t.add_argument("--images", required=True, help="directory of <camera id>.png")
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--patch", type=_pair, default=(256, 256), help="patch size N or WxH")
    t.add_argument("--patches-per-iter", type=int, default=10)
    t.add_argument("--mc-ratio", type=float, default=0.8)
    t.add_argument("--epochs", type=int, default=1)
    t.add_argument("--max-steps", type=int, default=None)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--widths", type=_widths, default=(16, 32, 64, 128))
    t.add_argument("--desc-dim", type=int, default=8)
    t.add_argument("--decimate", type=int, default=1, help="keep every Q-th point")
    t.add_argument("--lr-theta", type=float, default=1e-4)
    t.add_argument("--lr-desc", type=float, default=1e-1)
    t.add_argument("--w-vgg", type=float, default=1.0)
    t.add_argument("--w-l1", type=float, default=0.0)
    t.add_argument("--w-psnr", type=float, default=0.0)
    t.add_argument("--max-patch-fraction", type=_fraction, default=0.15,
                   help="patch area limit as a fraction of the frame, or 'none'")
    t.add_argument("--protocol", choices=PROTOCOLS, default="all",
                   help="exclude the protocol's test frames from training")

    r = sub.add_parser("render", help="render one camera from a checkpoint")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--cam", required=True, help="cams.json:ID")
    r.add_argument("--out", required=True)

    e = sub.add_parser("edit", help="apply an edit script to a checkpoint's scene")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--script", required=True)
    e.add_argument("--out", required=True)

    s = sub.add_parser("stitch", help="merge two scenes under scene A's network")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--align", required=True, help="JSON {R: [9], t: [3]} mapping B into A")
    s.add_argument("--out", required=True)

    v = sub.add_parser("eval", help="PSNR/SSIM/feature loss against ground truth")
    v.add_argument("--ckpt", required=True)
    v.add_argument("--cams", required=True)
    v.add_argument("--images", required=True)
    v.add_argument("--report", required=True)
    v.add_argument("--protocol", choices=PROTOCOLS, default="all")

    m = sub.add_parser("make-toy", help="write the bundled synthetic scene")
    m.add_argument("--out", required=True)
    m.add_argument("--points", type=int, default=5000)
    m.add_argument("--size", type=int, default=64)
    m.add_argument("--seed", type=int, default=0)
    return p


def cmd_train(a) -> None:
    pos, colors = io.read_ply(a.scene)
    pos, colors = io.decimate(pos, colors, a.decimate)
    cams = io.read_cameras(a.cams)
    train_idx, _ = split_frames(len(cams), a.protocol)
    cams = [cams[i] for i in train_idx]
    images = io.read_images(a.images, cams)
    cfg = TrainConfig(
        epochs=a.epochs, patches_per_iter=a.patches_per_iter, patch_width=a.patch[0],
        patch_height=a.patch[1], mc_ratio=a.mc_ratio, w_vgg=a.w_vgg, w_l1=a.w_l1,
        w_psnr=a.w_psnr, lr_theta=a.lr_theta, lr_desc=a.lr_desc,
        max_patch_fraction=a.max_patch_fraction, max_steps=a.max_steps,
        widths=a.widths, desc_dim=a.desc_dim, seed=a.seed,
    )
    scene = Scene.from_points(pos, d=a.desc_dim, seed=a.seed, name=Path(a.scene).stem, colors=colors)
    res = fit(scene, cams, images, cfg, out_dir=a.out)
    log.info("trained %d steps; checkpoint in %s", res.steps, a.out)


def _camera_ref(ref: str):
    path, sep, cam_id = ref.rpartition(":")
    if not sep or not path:
        raise UsageError(f"--cam expects PATH:ID, got {ref!r}")
    for cam in io.read_cameras(path):
        if cam.id == cam_id:
            return cam
    raise ValidationError(f"{path}: no camera with id {cam_id!r}")


def cmd_render(a) -> None:
    scene, net, _ = io.load_checkpoint(a.ckpt)
    cam = _camera_ref(a.cam)
    io.write_image(a.out, _finite(render_view(scene, net, cam), a.cam))


def _finite(img, what):
    if not np.all(np.isfinite(img)):
        raise NumericalError(f"non-finite pixels rendering {what}")
    return img


def cmd_edit(a) -> None:
    scene, net, meta = io.load_checkpoint(a.ckpt)
    edited = apply_edits(scene, io.read_edit_script(a.script))
    io.save_checkpoint(a.out, edited, net)


def cmd_stitch(a) -> None:
    sa, net, _ = io.load_checkpoint(a.a)
    sb, _, _ = io.load_checkpoint(a.b)
    merged = stitch(sa, sb, io.read_transform(a.align))
    io.save_checkpoint(a.out, merged, net)


def cmd_eval(a) -> None:
    scene, net, _ = io.load_checkpoint(a.ckpt)
    cams = io.read_cameras(a.cams)
    _, test_idx = split_frames(len(cams), a.protocol)
    cams = [cams[i] for i in test_idx]
    images = io.read_images(a.images, cams)
    frames = evaluate(scene, net, cams, images)
    for i, rec in zip(test_idx, frames):
        rec["frame"] = i
        for k in ("psnr", "ssim", "feature_loss"):
            _finite(np.array(rec[k]), f"frame {i} ({k})")
    keys = ("psnr", "ssim", "feature_loss")
    mean = {k: float(np.mean([f[k] for f in frames])) for k in keys} if frames else {}
    report = {"protocol": a.protocol, "frames": frames, "mean": mean}
    Path(a.report).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")


def cmd_make_toy(a) -> None:
    ds = toy_dataset(a.points, a.size, seed=a.seed)
    out = Path(a.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    io.write_ply(out / "scene.ply", ds.scene.positions, ds.scene.colors)
    io.write_cameras(out / "cams.json", ds.train_cameras)
    io.write_cameras(out / "cams_heldout.json", ds.test_cameras)
    for cam, img in zip(ds.train_cameras + ds.test_cameras, ds.train_images + ds.test_images):
        io.write_image(io.image_path(out / "images", cam.id), img)
    log.info("wrote toy scene (held-out views %s) to %s", HELD_OUT, out)


COMMANDS = {
    "train": cmd_train, "render": cmd_render, "edit": cmd_edit,
    "stitch": cmd_stitch, "eval": cmd_eval, "make-toy": cmd_make_toy,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
