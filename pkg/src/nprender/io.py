"""Readers and writers: PLY point clouds, camera lists, PNG images, binary
descriptor/weight files and checkpoint directories.

Binary layouts (all little-endian)::

    descriptors  "RDSC" u32 version=1, u64 N, u32 d, N*d float32 row-major
    weights      "RCKP" u32 version=1, u32 count, then per tensor:
                 u16 name length, UTF-8 name, u8 rank, rank * u32 dims,
                 float32 payload
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import Camera
from .errors import ValidationError
from .omeganet import OmegaNet, param_shapes
from .scene import AABox, RigidTransform, Scene

DESC_MAGIC = b"RDSC"
CKPT_MAGIC = b"RCKP"
FORMAT_VERSION = 1

POINTS_FILE = "points.ply"
DESC_FILE = "descriptors.rdsc"
WEIGHTS_FILE = "weights.rckp"
CONFIG_FILE = "config.json"
LOG_FILE = "train_log.jsonl"

PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


# -- PLY ---------------------------------------------------------------------

def _parse_ply_header(raw: bytes, path):
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise ValidationError(f"{path}: not a PLY file")
    nl = raw.find(b"\n", end)
    body_start = len(raw) if nl < 0 else nl + 1
    fmt, elements = None, []
    for line in raw[:end].decode("ascii", errors="replace").splitlines()[1:]:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
            if fmt not in ("ascii", "binary_little_endian"):
                raise ValidationError(f"{path}: unsupported PLY format {fmt!r}")
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise ValidationError(f"{path}: property before any element")
            if tok[1] == "list":
                raise ValidationError(
                    f"{path}: list property {tok[-1]!r} of element {elements[-1][0]!r} is not supported"
                )
            if tok[1] not in PLY_TYPES:
                raise ValidationError(f"{path}: property {tok[2]!r} has unsupported type {tok[1]!r}")
            elements[-1][2].append((tok[2], PLY_TYPES[tok[1]]))
    if fmt is None:
        raise ValidationError(f"{path}: PLY header has no format line")
    return fmt, elements, body_start


def read_ply(path):
    """Vertex positions ``(N, 3)`` float64 and colors ``(N, 3)`` uint8 or None."""
    path = Path(path)
    raw = path.read_bytes()
    fmt, elements, start = _parse_ply_header(raw, path)
    vertex = None
    for name, count, props in elements:
        if name == "vertex":
            vertex = (count, props)
            break
        if count:
            raise ValidationError(f"{path}: element {name!r} before 'vertex' is not supported")
    if vertex is None:
        raise ValidationError(f"{path}: no vertex element")
    count, props = vertex
    names = [p[0] for p in props]
    for axis in "xyz":
        if axis not in names:
            raise ValidationError(f"{path}: vertex element lacks property {axis!r}")
    dtype = np.dtype([(n, "<" + t) for n, t in props])
    if fmt == "binary_little_endian":
        need = dtype.itemsize * count
        if len(raw) - start < need:
            raise ValidationError(
                f"{path}: truncated vertex data at byte offset {len(raw)} "
                f"(expected {start + need} bytes)"
            )
        data = np.frombuffer(raw, dtype=dtype, count=count, offset=start)
    else:
        lines = raw[start:].decode("ascii").splitlines()
        rows = [ln.split() for ln in lines if ln.strip()][:count]
        if len(rows) < count:
            raise ValidationError(f"{path}: expected {count} vertex lines, found {len(rows)}")
        data = np.zeros(count, dtype=dtype)
        for j, (n, t) in enumerate(props):
            try:
                data[n] = [r[j] for r in rows]
            except (IndexError, ValueError) as exc:
                raise ValidationError(f"{path}: bad value for vertex property {n!r}: {exc}") from None
    pos = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack([data["red"], data["green"], data["blue"]], axis=1).astype(np.uint8)
    return pos, colors


def write_ply(path, positions, colors=None, binary: bool = True) -> None:
    """Float32 coordinates when exactly representable, otherwise float64."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    ptype = "float" if np.array_equal(pos.astype(np.float32).astype(np.float64), pos) else "double"
    fields = [("x", ptype), ("y", ptype), ("z", ptype)]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
        fields += [("red", "uchar"), ("green", "uchar"), ("blue", "uchar")]
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {len(pos)}"]
    header += [f"property {t} {n}" for n, t in fields]
    header.append("end_header")
    dtype = np.dtype([(n, "<" + PLY_TYPES[t]) for n, t in fields])
    rec = np.zeros(len(pos), dtype=dtype)
    for i, a in enumerate("xyz"):
        rec[a] = pos[:, i]
    if colors is not None:
        for i, c in enumerate(("red", "green", "blue")):
            rec[c] = colors[:, i]
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            f.write(rec.tobytes())
        else:
            for r in rec:
                f.write((" ".join(repr(v.item()) for v in r) + "\n").encode("ascii"))


def decimate(positions, colors=None, stride: int = 1):
    """Keep every ``stride``-th point, starting with the first."""
    if stride < 1:
        raise ValidationError(f"decimation stride must be >= 1, got {stride}")
    positions = positions[::stride]
    return positions, None if colors is None else colors[::stride]


# -- cameras -----------------------------------------------------------------

CAMERA_FIELDS = ("id", "fx", "fy", "cx", "cy", "width", "height", "R", "t")


def _nearest_rotation(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    return U @ Vt


def camera_from_record(rec: dict, source="cameras") -> Camera:
    rid = rec.get("id", "?")
    for k in CAMERA_FIELDS:
        if k not in rec:
            raise ValidationError(f"{source}: camera record {rid!r} lacks field {k!r}")
    R = np.asarray(rec["R"], dtype=np.float64)
    t = np.asarray(rec["t"], dtype=np.float64)
    if R.size != 9 or t.size != 3:
        raise ValidationError(f"{source}: camera {rid!r} needs 9 rotation and 3 translation values")
    R = R.reshape(3, 3)
    err = np.max(np.abs(R.T @ R - np.eye(3)))
    if err > 1e-4 or np.linalg.det(R) < 0:
        raise ValidationError(f"{source}: camera {rid!r} rotation is not orthonormal (error {err:.3g})")
    if err > 1e-6:
        R = _nearest_rotation(R)
    if not (rec["fx"] > 0 and rec["fy"] > 0):
        raise ValidationError(f"{source}: camera {rid!r} needs fx > 0 and fy > 0")
    try:
        return Camera(rec["fx"], rec["fy"], rec["cx"], rec["cy"], rec["width"], rec["height"],
                      R, t, id=str(rid))
    except ValidationError as exc:
        raise ValidationError(f"{source}: camera {rid!r}: {exc}") from None


def camera_to_record(cam: Camera) -> dict:
    return {
        "id": cam.id, "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
        "R": [float(v) for v in cam.rotation.reshape(-1)],
        "t": [float(v) for v in cam.translation],
    }


def read_cameras(path) -> list:
    path = Path(path)
    try:
        recs = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(recs, list):
        raise ValidationError(f"{path}: expected a JSON array of camera records")
    cams = [camera_from_record(r, path) for r in recs]
    ids = [c.id for c in cams]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicate camera ids")
    return cams


def write_cameras(path, cameras) -> None:
    Path(path).write_text(json.dumps([camera_to_record(c) for c in cameras], indent=1))


# -- images ------------------------------------------------------------------

def read_image(path) -> np.ndarray:
    """8-bit RGB file to float32 ``(3, H, W)`` with values ``v / 255``."""
    with Image.open(path) as im:
        if im.mode != "RGB":
            raise ValidationError(f"{path}: expected an RGB image, got mode {im.mode!r}")
        arr = np.asarray(im, dtype=np.uint8)
    return (arr.transpose(2, 0, 1).astype(np.float32) / np.float32(255))


def to_uint8(image) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValidationError(f"expected a (3, H, W) image, got shape {image.shape}")
    return np.round(np.clip(image.astype(np.float64), 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)


def write_image(path, image) -> None:
    Image.fromarray(to_uint8(image)).save(path)


def image_path(directory, cam_id: str) -> Path:
    return Path(directory) / f"{cam_id}.png"


def read_images(directory, cameras) -> list:
    out = []
    for cam in cameras:
        p = image_path(directory, cam.id)
        if not p.exists():
            raise ValidationError(f"{p}: missing image for camera {cam.id!r}")
        img = read_image(p)
        if img.shape[1:] != (cam.height, cam.width):
            raise ValidationError(
                f"{p}: image is {img.shape[2]}x{img.shape[1]}, camera {cam.id!r} is {cam.width}x{cam.height}"
            )
        out.append(img)
    return out


# -- descriptor and weight files ---------------------------------------------

def write_descriptors(path, table) -> None:
    table = np.ascontiguousarray(table, dtype="<f4")
    n, d = table.shape
    with open(path, "wb") as f:
        f.write(DESC_MAGIC + struct.pack("<IQI", FORMAT_VERSION, n, d))
        f.write(table.tobytes())


def read_descriptors(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:4] != DESC_MAGIC:
        raise ValidationError(f"{path}: not a descriptor file")
    version, n, d = struct.unpack_from("<IQI", raw, 4)
    if version != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported descriptor file version {version}")
    if len(raw) != 20 + 4 * n * d:
        raise ValidationError(f"{path}: payload is {len(raw) - 20} bytes, expected {4 * n * d}")
    return np.frombuffer(raw, dtype="<f4", offset=20).reshape(n, d).astype(np.float32)


def write_weights(path, tensors: dict) -> None:
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC + struct.pack("<II", FORMAT_VERSION, len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def read_weights(path) -> dict:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != CKPT_MAGIC:
        raise ValidationError(f"{path}: not a weight checkpoint")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    off, out = 12, {}
    try:
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", raw, off)
            name = raw[off + 2:off + 2 + ln].decode("utf-8")
            off += 2 + ln
            (rank,) = struct.unpack_from("<B", raw, off)
            dims = struct.unpack_from(f"<{rank}I", raw, off + 1)
            off += 1 + 4 * rank
            size = int(np.prod(dims)) if rank else 1
            if off + 4 * size > len(raw):
                raise ValidationError(f"{path}: tensor {name!r} truncated at byte offset {off}")
            out[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(dims).astype(np.float32)
            off += 4 * size
    except struct.error:
        raise ValidationError(f"{path}: truncated at byte offset {off}") from None
    if off != len(raw):
        raise ValidationError(f"{path}: {len(raw) - off} trailing bytes")
    return out


# -- checkpoint directories --------------------------------------------------

def save_checkpoint(directory, scene: Scene, net: OmegaNet, cfg=None, log_records=None) -> Path:
    """Write a self-contained scene + network directory."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_ply(d / POINTS_FILE, scene.positions, scene.colors)
    write_descriptors(d / DESC_FILE, scene.descriptors)
    write_weights(d / WEIGHTS_FILE, net.state_dict())
    meta = {"name": scene.name, "desc_dim": net.desc_dim, "widths": list(net.widths),
            "n_parameters": net.n_parameters}
    if cfg is not None:
        meta["train_config"] = cfg.to_dict()
    (d / CONFIG_FILE).write_text(json.dumps(meta, indent=1, sort_keys=True))
    if log_records is not None:
        with open(d / LOG_FILE, "w") as f:
            for rec in log_records:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
    return d


def load_checkpoint(directory):
    """``(scene, net, meta)`` from a checkpoint directory."""
    d = Path(directory)
    if not d.is_dir():
        raise ValidationError(f"{d}: checkpoint directory not found")
    for name in (POINTS_FILE, DESC_FILE, WEIGHTS_FILE, CONFIG_FILE):
        if not (d / name).exists():
            raise ValidationError(f"{d / name}: missing checkpoint file")
    meta = json.loads((d / CONFIG_FILE).read_text())
    pos, colors = read_ply(d / POINTS_FILE)
    desc = read_descriptors(d / DESC_FILE)
    if desc.shape != (len(pos), meta["desc_dim"]):
        raise ValidationError(
            f"{d / DESC_FILE}: table is {desc.shape}, expected {(len(pos), meta['desc_dim'])}"
        )
    weights = read_weights(d / WEIGHTS_FILE)
    expected = param_shapes(meta["desc_dim"], meta["widths"])
    got = sum(int(np.prod(w.shape)) for w in weights.values())
    want = sum(int(np.prod(s)) for s in expected.values())
    if got != want:
        raise ValidationError(f"{d / WEIGHTS_FILE}: {got} parameters, architecture needs {want}")
    try:
        net = OmegaNet(meta["desc_dim"], meta["widths"], params=weights)
    except ValidationError as exc:
        raise ValidationError(f"{d / WEIGHTS_FILE}: {exc}") from None
    scene = Scene(pos, desc, meta.get("name", d.name), colors)
    return scene, net, meta


# -- edit scripts ------------------------------------------------------------

def transform_from_record(rec, source="transform") -> RigidTransform:
    if rec is None:
        return RigidTransform()
    try:
        return RigidTransform(np.asarray(rec.get("R", np.eye(3).reshape(-1)), dtype=np.float64).reshape(3, 3),
                              np.asarray(rec.get("t", [0, 0, 0]), dtype=np.float64))
    except (ValueError, ValidationError) as exc:
        raise ValidationError(f"{source}: {exc}") from None


def read_transform(path) -> RigidTransform:
    return transform_from_record(json.loads(Path(path).read_text()), path)


def read_edit_script(path) -> list:
    """List of ``(op, AABox, RigidTransform | None)`` in file order."""
    path = Path(path)
    recs = json.loads(path.read_text())
    if not isinstance(recs, list):
        raise ValidationError(f"{path}: expected a JSON array of edit operations")
    ops = []
    for i, rec in enumerate(recs):
        op = rec.get("op")
        if op not in ("move", "remove"):
            raise ValidationError(f"{path}: edit {i} has unknown op {op!r}")
        box = rec.get("box")
        if not box or "min" not in box or "max" not in box:
            raise ValidationError(f"{path}: edit {i} lacks box.min/box.max")
        try:
            aabb = AABox(box["min"], box["max"])
        except (ValueError, ValidationError) as exc:
            raise ValidationError(f"{path}: edit {i}: {exc}") from None
        rt = transform_from_record(rec.get("transform"), f"{path}: edit {i}") if op == "move" else None
        ops.append((op, aabb, rt))
    return ops
