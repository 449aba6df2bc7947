"""COLMAP sparse-model parsing, scene bundles and Gaussian PLY checkpoints."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .camera import MODEL_ARITY, MODEL_IDS, MODEL_NAMES, CameraIntrinsics, CameraPose
from .gaussians import N_SH, SplatScene

log = logging.getLogger(__name__)

# Distortion-carrying COLMAP models; recognized only to give a precise error.
DISTORTED_MODELS = {
    2: "SIMPLE_RADIAL",
    3: "RADIAL",
    4: "OPENCV",
    5: "OPENCV_FISHEYE",
    6: "FULL_OPENCV",
    7: "FOV",
    8: "SIMPLE_RADIAL_FISHEYE",
    9: "RADIAL_FISHEYE",
    10: "THIN_PRISM_FISHEYE",
}
EVAL_EVERY = 8


class ColmapError(ValueError):
    """Base class for sparse-model parse errors; carries file and offset."""

    def __init__(self, path, offset, message: str, unit: str = "byte"):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{self.path} ({unit} {offset}): {message}")


class MalformedHeaderError(ColmapError):
    pass


class UnknownCameraModelError(ColmapError):
    pass


class UnsupportedCameraModelError(ColmapError):
    pass


class DanglingReferenceError(ColmapError):
    pass


class BundleError(ValueError):
    pass


class PlyError(ValueError):
    pass


@dataclass(frozen=True)
class SparsePoint:
    point_id: int
    position: np.ndarray = field(repr=False)
    color: tuple[int, int, int] = (0, 0, 0)
    track: tuple[int, ...] = ()
    error: float = 0.0

    def __eq__(self, other):
        if not isinstance(other, SparsePoint):
            return NotImplemented
        return (
            self.point_id == other.point_id
            and np.array_equal(self.position, other.position)
            and tuple(self.color) == tuple(other.color)
            and self.track == other.track
            and self.error == other.error
        )

    __hash__ = None


@dataclass
class ColmapModel:
    cameras: dict[int, CameraIntrinsics]
    images: list[CameraPose]
    points: list[SparsePoint]
    # per image: (N, 2) pixel coords and (N,) point3D ids; optional on write
    observations: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def counts(self) -> tuple[int, int, int]:
        return len(self.cameras), len(self.images), len(self.points)

    def pose_by_id(self) -> dict[int, CameraPose]:
        return {p.image_id: p for p in self.images}


def _dedup(ids) -> tuple[int, ...]:
    # keep first-seen order
    return tuple(dict.fromkeys(int(i) for i in ids))


# ---------------------------------------------------------------- binary


class _Reader:
    def __init__(self, path: Path):
        self.path = path
        self.buf = path.read_bytes()
        self.pos = 0

    def read(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise MalformedHeaderError(
                self.path, self.pos, f"truncated while reading {what} (need {size} bytes, have {len(self.buf) - self.pos})"
            )
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out

    def read_cstr(self) -> str:
        end = self.buf.find(b"\x00", self.pos)
        if end < 0:
            raise MalformedHeaderError(self.path, self.pos, "unterminated image name")
        s = self.buf[self.pos : end].decode("utf-8")
        self.pos = end + 1
        return s

    def done(self):
        if self.pos != len(self.buf):
            raise MalformedHeaderError(self.path, self.pos, f"{len(self.buf) - self.pos} trailing bytes")


def _check_model(path, offset, model_id, unit="byte"):
    if model_id in MODEL_ARITY:
        return
    if model_id in DISTORTED_MODELS:
        raise UnsupportedCameraModelError(
            path, offset, f"camera model {DISTORTED_MODELS[model_id]} carries distortion; undistort images first", unit
        )
    raise UnknownCameraModelError(path, offset, f"unknown camera model id {model_id}", unit)


def read_cameras_binary(path) -> dict[int, CameraIntrinsics]:
    r = _Reader(Path(path))
    (n,) = r.read("<Q", "camera count")
    cams = {}
    for _ in range(n):
        at = r.pos
        cid, model, w, h = r.read("<iiQQ", "camera record")
        _check_model(r.path, at, model)
        params = r.read("<" + "d" * MODEL_ARITY[model], "camera params")
        try:
            cams[cid] = CameraIntrinsics.from_params(cid, model, w, h, params)
        except ValueError as e:
            raise MalformedHeaderError(r.path, at, str(e)) from None
    r.done()
    return cams


def read_images_binary(path) -> tuple[list[CameraPose], dict[int, tuple[np.ndarray, np.ndarray]]]:
    r = _Reader(Path(path))
    (n,) = r.read("<Q", "image count")
    poses, obs = [], {}
    for _ in range(n):
        at = r.pos
        rec = r.read("<i7di", "image record")
        name = r.read_cstr()
        (npts,) = r.read("<Q", "points2D count")
        size = 24 * npts
        if r.pos + size > len(r.buf):
            raise MalformedHeaderError(r.path, r.pos, f"truncated points2D block for image {rec[0]}")
        arr = np.frombuffer(r.buf, dtype=np.dtype([("x", "<f8"), ("y", "<f8"), ("id", "<i8")]), count=npts, offset=r.pos)
        r.pos += size
        q = np.array(rec[1:5])
        if not np.all(np.isfinite(q)) or np.linalg.norm(q) == 0:
            raise MalformedHeaderError(r.path, at, f"invalid quaternion for image {rec[0]}")
        poses.append(CameraPose(rec[0], q, np.array(rec[5:8]), rec[8], name))
        obs[rec[0]] = (np.stack([arr["x"], arr["y"]], axis=-1), arr["id"].astype(np.int64))
    r.done()
    return poses, obs


def read_points3d_binary(path) -> list[SparsePoint]:
    r = _Reader(Path(path))
    (n,) = r.read("<Q", "point count")
    pts = []
    for _ in range(n):
        pid, x, y, z, cr, cg, cb, err, tlen = r.read("<q3d3BdQ", "point record")
        size = 8 * tlen
        if r.pos + size > len(r.buf):
            raise MalformedHeaderError(r.path, r.pos, f"truncated track for point {pid}")
        tr = np.frombuffer(r.buf, dtype="<i4", count=2 * tlen, offset=r.pos).reshape(-1, 2)
        r.pos += size
        pts.append(SparsePoint(pid, np.array([x, y, z]), (cr, cg, cb), _dedup(tr[:, 0]), err))
    r.done()
    return pts


def write_model_binary(model: ColmapModel, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "cameras.bin", "wb") as f:
        f.write(struct.pack("<Q", len(model.cameras)))
        for cid in sorted(model.cameras):
            c = model.cameras[cid]
            f.write(struct.pack("<iiQQ", c.camera_id, c.model, c.width, c.height))
            f.write(struct.pack("<" + "d" * len(c.params), *c.params))
    tracks = _tracks_with_idx(model)
    with open(out / "images.bin", "wb") as f:
        f.write(struct.pack("<Q", len(model.images)))
        for p in model.images:
            f.write(struct.pack("<i7di", p.image_id, *p.qvec, *p.tvec, p.camera_id))
            f.write(p.name.encode("utf-8") + b"\x00")
            xy, ids = model.observations.get(p.image_id, (np.zeros((0, 2)), np.zeros(0, np.int64)))
            f.write(struct.pack("<Q", len(ids)))
            arr = np.empty(len(ids), dtype=np.dtype([("x", "<f8"), ("y", "<f8"), ("id", "<i8")]))
            arr["x"], arr["y"], arr["id"] = xy[:, 0], xy[:, 1], ids
            f.write(arr.tobytes())
    with open(out / "points3D.bin", "wb") as f:
        f.write(struct.pack("<Q", len(model.points)))
        for pt in model.points:
            f.write(struct.pack("<q3d3Bd", pt.point_id, *pt.position, *pt.color, pt.error))
            tr = tracks[pt.point_id]
            f.write(struct.pack("<Q", len(tr)))
            f.write(np.asarray(tr, dtype="<i4").reshape(-1).tobytes())


def _tracks_with_idx(model: ColmapModel) -> dict[int, list[tuple[int, int]]]:
    """(image_id, point2D_idx) pairs per point, indexing the stored observations."""
    lookup: dict[tuple[int, int], int] = {}
    for iid, (_, ids) in model.observations.items():
        for k, pid in enumerate(ids):
            lookup.setdefault((iid, int(pid)), k)
    return {pt.point_id: [(i, lookup.get((i, pt.point_id), 0)) for i in pt.track] for pt in model.points}


# ---------------------------------------------------------------- text


def _text_lines(path: Path):
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if line and not line.startswith("#"):
            yield lineno, line


def read_cameras_text(path) -> dict[int, CameraIntrinsics]:
    path = Path(path)
    cams = {}
    for lineno, line in _text_lines(path):
        tok = line.split()
        if len(tok) < 4:
            raise MalformedHeaderError(path, lineno, "camera line needs id, model, width, height", "line")
        model_name = tok[1]
        if model_name.isdigit():
            model = int(model_name)
        elif model_name in MODEL_IDS:
            model = MODEL_IDS[model_name]
        else:
            rev = {v: k for k, v in DISTORTED_MODELS.items()}
            model = rev.get(model_name, -1)
            if model < 0:
                raise UnknownCameraModelError(path, lineno, f"unknown camera model {model_name}", "line")
        _check_model(path, lineno, model, "line")
        try:
            cid, w, h = int(tok[0]), int(tok[2]), int(tok[3])
            params = [float(x) for x in tok[4:]]
        except ValueError as e:
            raise MalformedHeaderError(path, lineno, str(e), "line") from None
        if len(params) != MODEL_ARITY[model]:
            raise MalformedHeaderError(path, lineno, f"{MODEL_NAMES[model]} expects {MODEL_ARITY[model]} params", "line")
        try:
            cams[cid] = CameraIntrinsics.from_params(cid, model, w, h, params)
        except ValueError as e:
            raise MalformedHeaderError(path, lineno, str(e), "line") from None
    return cams


def read_images_text(path):
    path = Path(path)
    # the points2D line may be empty, so blank lines are significant here
    raw = path.read_text(encoding="utf-8").splitlines()
    poses, obs = [], {}
    i = 0
    data = [(n, l) for n, l in enumerate(raw, start=1) if not l.strip().startswith("#")]
    while i < len(data):
        lineno, line = data[i]
        if not line.strip():
            i += 1
            continue
        tok = line.split()
        if len(tok) < 10:
            raise MalformedHeaderError(path, lineno, "image line needs 10 fields", "line")
        try:
            iid = int(tok[0])
            q = np.array([float(x) for x in tok[1:5]])
            t = np.array([float(x) for x in tok[5:8]])
            cid = int(tok[8])
        except ValueError as e:
            raise MalformedHeaderError(path, lineno, str(e), "line") from None
        name = " ".join(tok[9:])
        pts_line = data[i + 1][1] if i + 1 < len(data) else ""
        vals = pts_line.split()
        if len(vals) % 3:
            raise MalformedHeaderError(path, lineno + 1, "points2D line is not (x, y, id) triples", "line")
        arr = np.array([float(v) for v in vals]).reshape(-1, 3)
        if np.linalg.norm(q) == 0:
            raise MalformedHeaderError(path, lineno, "zero quaternion", "line")
        poses.append(CameraPose(iid, q, t, cid, name))
        obs[iid] = (arr[:, :2].copy(), arr[:, 2].astype(np.int64))
        i += 2
    return poses, obs


def read_points3d_text(path) -> list[SparsePoint]:
    path = Path(path)
    pts = []
    for lineno, line in _text_lines(path):
        tok = line.split()
        if len(tok) < 8 or (len(tok) - 8) % 2:
            raise MalformedHeaderError(path, lineno, "point line needs 8 fields plus (image_id, idx) pairs", "line")
        try:
            pid = int(tok[0])
            xyz = np.array([float(x) for x in tok[1:4]])
            rgb = tuple(int(x) for x in tok[4:7])
            err = float(tok[7])
            track = [int(x) for x in tok[8::2]]
        except ValueError as e:
            raise MalformedHeaderError(path, lineno, str(e), "line") from None
        pts.append(SparsePoint(pid, xyz, rgb, _dedup(track), err))
    return pts


def write_model_text(model: ColmapModel, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["# Camera list with one line of data per camera:", "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]"]
    for cid in sorted(model.cameras):
        c = model.cameras[cid]
        lines.append(" ".join([str(c.camera_id), MODEL_NAMES[c.model], str(c.width), str(c.height)] + [repr(float(p)) for p in c.params]))
    (out / "cameras.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = [
        "# Image list with two lines of data per image:",
        "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME",
        "#   POINTS2D[] as (X, Y, POINT3D_ID)",
    ]
    for p in model.images:
        lines.append(" ".join([str(p.image_id)] + [repr(float(v)) for v in (*p.qvec, *p.tvec)] + [str(p.camera_id), p.name]))
        xy, ids = model.observations.get(p.image_id, (np.zeros((0, 2)), np.zeros(0, np.int64)))
        lines.append(" ".join(f"{float(x)!r} {float(y)!r} {int(k)}" for (x, y), k in zip(xy, ids)))
    (out / "images.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    tracks = _tracks_with_idx(model)
    lines = ["# 3D point list with one line of data per point:", "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)"]
    for pt in model.points:
        head = [str(pt.point_id)] + [repr(float(v)) for v in pt.position] + [str(int(c)) for c in pt.color] + [repr(float(pt.error))]
        lines.append(" ".join(head + [f"{i} {k}" for i, k in tracks[pt.point_id]]))
    (out / "points3D.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- model


def _detect_format(d: Path) -> str:
    if all((d / f"{n}.bin").exists() for n in ("cameras", "images", "points3D")):
        return "binary"
    if all((d / f"{n}.txt").exists() for n in ("cameras", "images", "points3D")):
        return "text"
    raise FileNotFoundError(f"{d}: no complete cameras/images/points3D set (.bin or .txt)")


def read_colmap_model(dir_path, format: str = "auto") -> ColmapModel:
    """Parse a sparse model directory and validate cross references."""
    d = Path(dir_path)
    fmt = _detect_format(d) if format == "auto" else format
    if fmt == "binary":
        cams = read_cameras_binary(d / "cameras.bin")
        poses, obs = read_images_binary(d / "images.bin")
        pts = read_points3d_binary(d / "points3D.bin")
        unit, img_file, pts_file = "byte", d / "images.bin", d / "points3D.bin"
    elif fmt == "text":
        cams = read_cameras_text(d / "cameras.txt")
        poses, obs = read_images_text(d / "images.txt")
        pts = read_points3d_text(d / "points3D.txt")
        unit, img_file, pts_file = "line", d / "images.txt", d / "points3D.txt"
    else:
        raise ValueError(f"unknown format {format!r}")
    for k, p in enumerate(poses):
        if p.camera_id not in cams:
            raise DanglingReferenceError(img_file, k, f"image {p.image_id} references missing camera {p.camera_id}", "record")
    known = {p.image_id for p in poses}
    for k, pt in enumerate(pts):
        if not pt.track:
            raise MalformedHeaderError(pts_file, k, f"point {pt.point_id} has an empty track", "record")
        bad = [i for i in pt.track if i not in known]
        if bad:
            raise DanglingReferenceError(pts_file, k, f"point {pt.point_id} track references missing image {bad[0]}", "record")
    return ColmapModel(cams, poses, pts, obs)


# ---------------------------------------------------------------- bundle


@dataclass
class SceneBundle:
    intrinsics: dict[int, CameraIntrinsics]
    poses: list[CameraPose]
    points: list[SparsePoint]
    images: dict[int, np.ndarray]
    masks: dict[int, np.ndarray]
    is_eval: dict[int, bool]
    root: Optional[Path] = None

    def intr(self, pose: CameraPose) -> CameraIntrinsics:
        return self.intrinsics[pose.camera_id]

    @property
    def train_poses(self) -> list[CameraPose]:
        return [p for p in self.poses if not self.is_eval[p.image_id]]

    @property
    def eval_poses(self) -> list[CameraPose]:
        return [p for p in self.poses if self.is_eval[p.image_id]]

    def scene_extent(self) -> float:
        """Radius of the camera-centre bounding sphere (1.1x margin)."""
        centers = np.array([p.center for p in self.poses])
        mid = centers.mean(axis=0)
        return float(np.linalg.norm(centers - mid, axis=1).max() * 1.1)


def split_flags(names: list[str]) -> dict[str, bool]:
    order = sorted(names)
    return {n: (k % EVAL_EVERY == 0) for k, n in enumerate(order)}


def load_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 3:
        arr = arr[..., 0] if arr.shape[2] in (1, 2) else arr[..., :3].max(axis=2)
    return (arr > 0).astype(np.uint8)


def _find(d: Path, name: str) -> Optional[Path]:
    for cand in (d / name, d / (Path(name).stem + ".png")):
        if cand.exists():
            return cand
    return None


def assemble_bundle(model: ColmapModel, images_dir, masks_dir) -> SceneBundle:
    images_dir, masks_dir = Path(images_dir), Path(masks_dir)
    poses = sorted(model.images, key=lambda p: p.name)
    flags = split_flags([p.name for p in poses])
    imgs, masks = {}, {}
    for p in poses:
        intr = model.cameras[p.camera_id]
        f = _find(images_dir, p.name)
        if f is None:
            raise BundleError(f"missing image file for {p.name} in {images_dir}")
        img = load_rgb(f)
        if img.shape[:2] != (intr.height, intr.width):
            raise BundleError(f"{f}: image is {img.shape[1]}x{img.shape[0]}, camera {intr.camera_id} expects {intr.width}x{intr.height}")
        mf = _find(masks_dir, p.name)
        if mf is None:
            log.warning("no mask for %s; using an all-zero mask", p.name)
            m = np.zeros(img.shape[:2], np.uint8)
        else:
            m = load_mask(mf)
            if m.shape != img.shape[:2]:
                raise BundleError(f"{mf}: mask is {m.shape[1]}x{m.shape[0]} but image is {img.shape[1]}x{img.shape[0]}")
        imgs[p.image_id], masks[p.image_id] = img, m
    return SceneBundle(
        dict(model.cameras), poses, list(model.points), imgs, masks, {p.image_id: flags[p.name] for p in poses}
    )


def load_bundle(root) -> SceneBundle:
    """Load a bundle directory laid out as sparse/0, images/, masks/."""
    root = Path(root)
    sparse = root / "sparse" / "0"
    if not sparse.exists():
        sparse = root / "sparse"
    b = assemble_bundle(read_colmap_model(sparse), root / "images", root / "masks")
    b.root = root
    return b


# ---------------------------------------------------------------- PLY

_SH_REST = [f"f_rest_{i}" for i in range((N_SH - 1) * 3)]
GAUSSIAN_PROPS = (
    ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"]
    + _SH_REST
    + ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
)


def _ply_dtype(props_f4: list[str], extra: list[tuple[str, str]]):
    return np.dtype([(p, "<f8") for p in props_f4] + extra)


def write_ply_gaussians(scene: SplatScene, path) -> None:
    """Binary little-endian PLY checkpoint; doubles keep the round trip exact."""
    if len(scene) == 0:
        raise ValueError("refusing to write an empty scene")
    dt = _ply_dtype(GAUSSIAN_PROPS, [("region", "u1"), ("gid", "<i8")])
    arr = np.empty(len(scene), dtype=dt)
    arr["x"], arr["y"], arr["z"] = scene.means.T
    for c in range(3):
        arr[f"f_dc_{c}"] = scene.sh[:, 0, c]
    # channel-major layout for the rest coefficients, as in 3DGS checkpoints
    rest = scene.sh[:, 1:, :].transpose(0, 2, 1).reshape(len(scene), -1)
    for i, name in enumerate(_SH_REST):
        arr[name] = rest[:, i]
    arr["opacity"] = scene.opacity_logits
    for c in range(3):
        arr[f"scale_{c}"] = scene.log_scales[:, c]
    for c in range(4):
        arr[f"rot_{c}"] = scene.quats[:, c]
    arr["region"] = scene.region
    arr["gid"] = scene.ids
    header = ["ply", "format binary_little_endian 1.0", f"comment scene_extent {scene.scene_extent!r}", f"element vertex {len(scene)}"]
    header += [f"property double {p}" for p in GAUSSIAN_PROPS]
    header += ["property uchar region", "property int64 gid", "end_header"]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(arr.tobytes())


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "int64": "<i8", "uint64": "<u8",
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
}


def read_ply_header(data: bytes, path) -> tuple[int, list[tuple[str, str]], int, dict[str, str]]:
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise PlyError(f"{path}: malformed PLY header")
    count, props, comments = None, [], {}
    for line in data[:end].decode("ascii").splitlines()[1:]:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "binary_little_endian":
            raise PlyError(f"{path}: only binary_little_endian PLY is supported")
        elif tok[0] == "comment" and len(tok) >= 3:
            comments[tok[1]] = tok[2]
        elif tok[0] == "element":
            if tok[1] != "vertex" and count is None:
                raise PlyError(f"{path}: first element must be vertex")
            if tok[1] == "vertex":
                count = int(tok[2])
        elif tok[0] == "property":
            if tok[1] == "list" or tok[1] not in _PLY_TYPES:
                raise PlyError(f"{path}: unsupported property declaration '{line}'")
            props.append((tok[2], _PLY_TYPES[tok[1]]))
    if count is None:
        raise PlyError(f"{path}: no vertex element")
    return count, props, end + len(b"end_header\n"), comments


def read_ply_gaussians(path) -> SplatScene:
    path = Path(path)
    data = path.read_bytes()
    count, props, start, comments = read_ply_header(data, path)
    dt = np.dtype(props)
    need = count * dt.itemsize
    have = len(data) - start
    if have < need:
        raise PlyError(f"{path}: truncated payload, expected {need} bytes but found {have}")
    names = set(dt.names)
    missing = [p for p in GAUSSIAN_PROPS[:6] + ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"] if p not in names]
    if missing:
        raise PlyError(f"{path}: missing required properties {missing}")
    arr = np.frombuffer(data, dtype=dt, count=count, offset=start)
    f8 = lambda k: arr[k].astype(np.float64)  # noqa: E731
    sh = np.zeros((count, N_SH, 3))
    for c in range(3):
        sh[:, 0, c] = f8(f"f_dc_{c}")
    rest_names = [n for n in _SH_REST if n in names]
    if rest_names:
        k = len(rest_names) // 3
        rest = np.stack([f8(n) for n in rest_names[: 3 * k]], axis=1).reshape(count, 3, k).transpose(0, 2, 1)
        sh[:, 1 : 1 + k, :] = rest
    if "region" in names:
        region = arr["region"].astype(np.uint8)
    else:
        log.warning("%s: no region property; tagging all Gaussians non-text", path)
        region = np.zeros(count, np.uint8)
    ids = arr["gid"].astype(np.int64) if "gid" in names else np.arange(count, dtype=np.int64)
    return SplatScene(
        np.stack([f8("x"), f8("y"), f8("z")], axis=1),
        np.stack([f8(f"scale_{c}") for c in range(3)], axis=1),
        np.stack([f8(f"rot_{c}") for c in range(4)], axis=1),
        f8("opacity"),
        sh,
        region,
        ids,
        float(comments.get("scene_extent", 1.0)),
    )


def write_ply_points(path, xyz, rgb=None) -> None:
    """Plain coloured point cloud (inspection output)."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    rgb = np.zeros((len(xyz), 3), np.uint8) if rgb is None else np.asarray(rgb, dtype=np.uint8).reshape(-1, 3)
    dt = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    arr = np.empty(len(xyz), dtype=dt)
    arr["x"], arr["y"], arr["z"] = xyz.T
    arr["red"], arr["green"], arr["blue"] = rgb.T
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(xyz)}"]
    header += ["property double x", "property double y", "property double z"]
    header += ["property uchar red", "property uchar green", "property uchar blue", "end_header"]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(arr.tobytes())


def read_ply_points(path) -> tuple[np.ndarray, np.ndarray]:
    data = Path(path).read_bytes()
    count, props, start, _ = read_ply_header(data, path)
    arr = np.frombuffer(data, dtype=np.dtype(props), count=count, offset=start)
    xyz = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
    rgb = np.stack([arr["red"], arr["green"], arr["blue"]], axis=1) if "red" in arr.dtype.names else np.zeros((count, 3), np.uint8)
    return xyz, rgb
