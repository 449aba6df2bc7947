"""Self-contained synthetic text scenes with ray-traced reference views.

A textured surface (flat board or a 120 degree cylinder section) carries
light dot-matrix text on a dark, busy background. Cameras alternate between
overview shots and close-ups on an arc in front of it. Reference images are ray traced analytically, so the splat
renderer is never graded against itself.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .camera import PINHOLE, CameraIntrinsics, CameraPose, look_at_pose, project_points
from .colmap_io import ColmapModel, SparsePoint, write_model_binary
from .font import ALPHABET, UnsupportedCharacterError, rasterize_lines

log = logging.getLogger(__name__)

TEXT_COLOR = np.array([0.98, 0.92, 0.75])
BASE_COLOR = np.array([0.12, 0.16, 0.28])
MAX_GRAZING_DEG = 75.0
DEPTH_TOL = 1e-6


@dataclass(frozen=True)
class SynthSpec:
    words: tuple = ("SPLAT", "TEXT", "2026")
    layout: str = "flat"  # flat | cylinder
    n_cameras: int = 24
    image_size: int = 128
    glyph_px: int = 56  # glyph height in texture pixels
    texel_size: float = 0.005  # world units per texture pixel
    n_points: int = 3000
    feature_frac: float = 0.6  # share of points drawn near texture edges, as SfM features are
    noise: float = 0.002
    seed: int = 0
    focal: float = 140.0
    distance: tuple = (2.2, 2.9)
    closeup_distance: tuple = (1.1, 1.5)
    azimuth_deg: float = 30.0
    elevation_deg: float = 12.0
    target_jitter: float = 0.25
    board_size: tuple = (4.0, 3.0)
    supersample: int = 3

    def __post_init__(self):
        if self.layout not in ("flat", "cylinder"):
            raise ValueError("layout must be 'flat' or 'cylinder'")
        if min(self.n_cameras, self.image_size, self.glyph_px, self.n_points) <= 0:
            raise ValueError("counts must be positive")
        if not 0 <= self.feature_frac <= 1:
            raise ValueError("feature_frac must lie in [0, 1]")
        for w in self.words:
            bad = set(w.upper()) - set(ALPHABET)
            if bad:
                raise UnsupportedCharacterError(f"word {w!r} uses characters outside A-Z0-9: {sorted(bad)}")

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        d = json.loads(text)
        for k, v in d.items():
            if isinstance(v, list):
                d[k] = tuple(v)
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


# ---------------------------------------------------------------- surface


@dataclass
class Surface:
    """Analytic textured surface with ray intersection and texture lookup."""

    spec: SynthSpec
    texture: np.ndarray  # H x W x 3
    ink: np.ndarray  # H x W bool
    word_boxes: list  # per word (x0, y0, x1, y1) in texels
    radius: float = 0.0

    @property
    def size(self) -> tuple[float, float]:
        h, w = self.ink.shape
        return w * self.spec.texel_size, h * self.spec.texel_size

    def texcoords(self, pts: np.ndarray) -> np.ndarray:
        """(row, col) texel coordinates of surface points."""
        bw, bh = self.size
        ts = self.spec.texel_size
        if self.spec.layout == "flat":
            col = (pts[:, 0] + bw / 2) / ts
        else:
            phi = np.arctan2(pts[:, 0], self.radius - pts[:, 2])
            col = (phi * self.radius + bw / 2) / ts
        row = (pts[:, 1] + bh / 2) / ts
        return np.stack([row, col], axis=1)

    def from_texcoords(self, rc: np.ndarray) -> np.ndarray:
        bw, bh = self.size
        ts = self.spec.texel_size
        y = rc[:, 0] * ts - bh / 2
        s = rc[:, 1] * ts - bw / 2
        if self.spec.layout == "flat":
            return np.stack([s, y, np.zeros_like(s)], axis=1)
        phi = s / self.radius
        return np.stack([self.radius * np.sin(phi), y, self.radius - self.radius * np.cos(phi)], axis=1)

    def normals(self, pts: np.ndarray) -> np.ndarray:
        if self.spec.layout == "flat":
            return np.tile([0.0, 0.0, -1.0], (len(pts), 1))
        n = np.stack([pts[:, 0], np.zeros(len(pts)), pts[:, 2] - self.radius], axis=1)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def intersect(self, origin: np.ndarray, dirs: np.ndarray):
        """First hit distance along each ray (inf on miss) and the hit points."""
        bw, bh = self.size
        n = len(dirs)
        t = np.full(n, np.inf)
        if self.spec.layout == "flat":
            with np.errstate(divide="ignore", invalid="ignore"):
                tt = -origin[2] / dirs[:, 2]
            cand = [tt]
        else:
            # cylinder x^2 + (z - r)^2 = r^2 about the y axis
            r = self.radius
            ox, oz = origin[0], origin[2] - r
            a = dirs[:, 0] ** 2 + dirs[:, 2] ** 2
            b = 2 * (ox * dirs[:, 0] + oz * dirs[:, 2])
            c = ox * ox + oz * oz - r * r
            disc = b * b - 4 * a * c
            sq = np.sqrt(np.maximum(disc, 0))
            with np.errstate(divide="ignore", invalid="ignore"):
                t0 = np.where(disc >= 0, (-b - sq) / (2 * a), np.nan)
                t1 = np.where(disc >= 0, (-b + sq) / (2 * a), np.nan)
            cand = [t0, t1]
        for tt in cand:
            ok = np.isfinite(tt) & (tt > 1e-9) & (tt < t)
            p = origin + dirs * np.where(ok, tt, 0)[:, None]
            rc = self.texcoords(p)
            h, w = self.ink.shape
            inside = (rc[:, 0] >= 0) & (rc[:, 0] < h) & (rc[:, 1] >= 0) & (rc[:, 1] < w)
            if self.spec.layout == "cylinder":
                inside &= p[:, 2] < self.radius  # front half only
            ok &= inside
            t = np.where(ok, tt, t)
        hit = origin + dirs * np.where(np.isfinite(t), t, 0)[:, None]
        return t, hit

    def shade(self, pts: np.ndarray):
        """Colour and ink flag at surface points."""
        rc = np.floor(self.texcoords(pts)).astype(np.int64)
        h, w = self.ink.shape
        r = np.clip(rc[:, 0], 0, h - 1)
        c = np.clip(rc[:, 1], 0, w - 1)
        return self.texture[r, c], self.ink[r, c]


def _background(H: int, W: int, ts: float, rng: np.random.Generator) -> np.ndarray:
    """Dark board: smooth colour waves plus scattered muted panels (luma stays well under the ink threshold)."""
    yy, xx = np.mgrid[:H, :W] * ts
    tex = np.broadcast_to(BASE_COLOR, (H, W, 3)).copy()
    for _ in range(4):
        f = rng.uniform(0.6, 3.0)
        th = rng.uniform(0, np.pi)
        ph = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * f * (xx * np.cos(th) + yy * np.sin(th)) + ph)
        tex += 0.035 * wave[..., None] * rng.uniform(0.2, 1.0, 3)
    for _ in range(40):
        w, h = rng.uniform(0.05, 0.4, 2) / ts
        x0, y0 = rng.uniform(0, W - w), rng.uniform(0, H - h)
        col = rng.uniform(0.05, 0.3, 3)
        tex[int(y0) : int(y0 + h), int(x0) : int(x0 + w)] = col
    return np.clip(tex, 0.0, 0.32)


def _edge_weights(tex: np.ndarray) -> np.ndarray:
    luma = tex @ np.array([0.299, 0.587, 0.114])
    gy, gx = np.gradient(luma)
    return np.hypot(gx, gy)


def build_surface(spec: SynthSpec) -> Surface:
    ts = spec.texel_size
    bw, bh = spec.board_size
    W, H = int(round(bw / ts)), int(round(bh / ts))
    text, cells, boxes = rasterize_lines([w.upper() for w in spec.words], spec.glyph_px)
    if text.shape[0] > H or text.shape[1] > W:
        raise ValueError("text block does not fit on the board")
    oy, ox = (H - text.shape[0]) // 2, (W - text.shape[1]) // 2
    ink = np.zeros((H, W), bool)
    ink[oy : oy + text.shape[0], ox : ox + text.shape[1]] = text
    tex = _background(H, W, ts, np.random.default_rng([spec.seed, 3]))
    tex[ink] = TEXT_COLOR
    word_boxes = [(x0 + ox, y0 + oy, x1 + ox, y1 + oy) for (x0, y0, x1, y1) in boxes]
    radius = bw / (2 * np.pi / 3) if spec.layout == "cylinder" else 0.0
    return Surface(spec, np.clip(tex, 0, 1), ink, word_boxes, radius)


# ---------------------------------------------------------------- cameras


def _text_half_extent(spec: SynthSpec) -> tuple[float, float]:
    text, _, _ = rasterize_lines([w.upper() for w in spec.words], spec.glyph_px)
    return text.shape[1] * spec.texel_size / 2, text.shape[0] * spec.texel_size / 2


def orbit_cameras(spec: SynthSpec) -> tuple[CameraIntrinsics, list[CameraPose]]:
    rng = np.random.default_rng([spec.seed, 7])
    s = spec.image_size
    intr = CameraIntrinsics(1, PINHOLE, s, s, spec.focal, spec.focal, s / 2, s / 2)
    poses = []
    n = spec.n_cameras
    block = _text_half_extent(spec)
    for k in range(n):
        az = np.deg2rad(-spec.azimuth_deg + 2 * spec.azimuth_deg * (k + 0.5) / n)
        el = np.deg2rad(rng.uniform(-spec.elevation_deg, spec.elevation_deg))
        if k % 2 == 0:
            # overview shot of the whole text block; every eval view is one of these
            d = rng.uniform(*spec.distance)
            target = np.array([rng.uniform(-1, 1) * spec.target_jitter, rng.uniform(-1, 1) * spec.target_jitter * 0.6, 0.0])
        else:
            # close-up on part of the text, so coverage of text points varies
            d = rng.uniform(*spec.closeup_distance)
            target = np.array([rng.uniform(-1, 1) * block[0], rng.uniform(-1, 1) * block[1], 0.0])
        eye = target + np.array([d * np.sin(az) * np.cos(el), d * np.sin(el), -d * np.cos(az) * np.cos(el)])
        poses.append(look_at_pose(k + 1, eye, target, name=f"view_{k:03d}.png"))
    return intr, poses


def pixel_rays(intr: CameraIntrinsics, pose: CameraPose, sub: int = 1):
    """World-space unit rays through sub-pixel sample centres (row-major, sub x sub per pixel)."""
    offs = (np.arange(sub) + 0.5) / sub
    u = (np.arange(intr.width)[:, None] + offs[None, :]).reshape(-1)
    v = (np.arange(intr.height)[:, None] + offs[None, :]).reshape(-1)
    uu, vv = np.meshgrid(u, v)
    d_cam = np.stack([(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu)], axis=-1).reshape(-1, 3)
    d = d_cam @ pose.rotation
    return d / np.linalg.norm(d, axis=1, keepdims=True), d_cam


def trace_view(surface: Surface, intr: CameraIntrinsics, pose: CameraPose):
    """Reference image, exact text mask and pixel-centre z-depth map."""
    k = surface.spec.supersample
    H, W = intr.height, intr.width
    dirs, _ = pixel_rays(intr, pose, k)
    t, hit = surface.intersect(pose.center, dirs)
    col = np.zeros((len(dirs), 3))
    ink = np.zeros(len(dirs), bool)
    m = np.isfinite(t)
    col[m], ink[m] = surface.shade(hit[m])
    img = col.reshape(H, k, W, k, 3).mean(axis=(1, 3))
    mask = ink.reshape(H, k, W, k).any(axis=(1, 3))
    dirs1, dcam1 = pixel_rays(intr, pose, 1)
    t1, _ = surface.intersect(pose.center, dirs1)
    # ray parameter -> camera z (unit ray has z-component 1/|d_cam|)
    depth = (t1 / np.linalg.norm(dcam1, axis=1)).reshape(H, W)
    return img, mask.astype(np.uint8), depth


def observable(surface: Surface, intr: CameraIntrinsics, pose: CameraPose, pts: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """True line-of-sight visibility of surface samples from one camera."""
    uv, z, valid = project_points(intr, pose, pts)
    to_cam = pose.center - pts
    dist = np.linalg.norm(to_cam, axis=1)
    cosang = np.einsum("ij,ij->i", to_cam / dist[:, None], normals)
    valid &= cosang > np.cos(np.deg2rad(MAX_GRAZING_DEG))
    idx = np.flatnonzero(valid)
    if len(idx):
        dirs = -to_cam[idx] / dist[idx, None]
        t, _ = surface.intersect(pose.center, dirs)
        valid[idx] = t >= dist[idx] * (1 - DEPTH_TOL) - 1e-9
    return valid


@dataclass
class GeneratedScene:
    surface: Surface
    intrinsics: CameraIntrinsics
    poses: list
    model: ColmapModel
    on_ink: np.ndarray  # per point: sampled inside glyph ink
    images: dict = field(default_factory=dict)
    masks: dict = field(default_factory=dict)
    depths: dict = field(default_factory=dict)
    gt_words: dict = field(default_factory=dict)


def visible_words(surface: Surface, intr: CameraIntrinsics, pose: CameraPose) -> list[str]:
    words = []
    for w, (x0, y0, x1, y1) in zip(surface.spec.words, surface.word_boxes):
        rc = np.array([[y0, x0], [y0, x1], [y1, x0], [y1, x1], [(y0 + y1) / 2, (x0 + x1) / 2]], float)
        pts = surface.from_texcoords(rc)
        _, _, valid = project_points(intr, pose, pts)
        vis = observable(surface, intr, pose, pts[-1:], surface.normals(pts[-1:]))
        if valid.all() and vis.all():
            words.append(w.upper())
    return words


def generate(spec: SynthSpec) -> GeneratedScene:
    surface = build_surface(spec)
    intr, poses = orbit_cameras(spec)
    rng = np.random.default_rng([spec.seed, 11])
    h, w = surface.ink.shape
    n_feat = int(round(spec.n_points * spec.feature_frac))
    wts = _edge_weights(surface.texture).ravel()
    rc_uniform = rng.uniform([0, 0], [h, w], size=(spec.n_points - n_feat, 2))
    if n_feat and wts.sum() > 0:
        cells = rng.choice(wts.size, size=n_feat, p=wts / wts.sum())
        rc_feat = np.stack([cells // w, cells % w], axis=1) + rng.uniform(0, 1, (n_feat, 2))
    else:
        rc_feat = np.zeros((0, 2))
    rc = np.concatenate([rc_feat, rc_uniform])
    on_surface = surface.from_texcoords(rc)
    normals = surface.normals(on_surface)
    colors, on_ink = surface.shade(on_surface)
    pts = on_surface + rng.normal(0, spec.noise, on_surface.shape) if spec.noise > 0 else on_surface

    vis = np.stack([observable(surface, intr, p, pts, normals) for p in poses], axis=1)
    keep = vis.sum(axis=1) >= 2
    points, obs_xy, obs_id = [], {p.image_id: [] for p in poses}, {p.image_id: [] for p in poses}
    uvs = [project_points(intr, p, pts)[0] for p in poses]
    for i in np.flatnonzero(keep):
        pid = len(points) + 1
        track = tuple(poses[j].image_id for j in np.flatnonzero(vis[i]))
        rgb = tuple(int(round(c * 255)) for c in colors[i])
        points.append(SparsePoint(pid, pts[i].copy(), rgb, track, 0.0))
        for j in np.flatnonzero(vis[i]):
            obs_xy[poses[j].image_id].append(uvs[j][i])
            obs_id[poses[j].image_id].append(pid)
    obs = {
        iid: (np.array(obs_xy[iid], dtype=np.float64).reshape(-1, 2), np.array(obs_id[iid], dtype=np.int64)) for iid in obs_xy
    }
    model = ColmapModel({intr.camera_id: intr}, poses, points, obs)
    scene = GeneratedScene(surface, intr, poses, model, on_ink[keep])
    order = sorted(poses, key=lambda p: p.name)
    for k, p in enumerate(order):
        img, mask, depth = trace_view(surface, intr, p)
        scene.images[p.image_id], scene.masks[p.image_id], scene.depths[p.image_id] = img, mask, depth
        if k % 8 == 0:
            scene.gt_words[p.image_id] = visible_words(surface, intr, p)
    return scene


def generate_scene(spec: SynthSpec, out_dir) -> GeneratedScene:
    """Write a bundle directory: sparse/0/*.bin, images/, masks/, gt_text/."""
    out = Path(out_dir)
    scene = generate(spec)
    write_model_binary(scene.model, out / "sparse" / "0")
    for sub in ("images", "masks", "gt_text"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for p in scene.poses:
        img = np.clip(np.round(scene.images[p.image_id] * 255), 0, 255).astype(np.uint8)
        Image.fromarray(img).save(out / "images" / p.name)
        Image.fromarray(scene.masks[p.image_id] * 255).save(out / "masks" / p.name)
        if p.image_id in scene.gt_words:
            words = scene.gt_words[p.image_id]
            (out / "gt_text" / (Path(p.name).stem + ".txt")).write_text(
                "# words visible in this view\n" + "\n".join(words) + "\n", encoding="utf-8"
            )
    (out / "synth_spec.json").write_text(spec.to_json(), encoding="utf-8")
    return scene
