import dataclasses
import filecmp

import numpy as np
import pytest
from scipy import ndimage

from stringsgs.camera import project_points
from stringsgs.colmap_io import load_bundle, read_colmap_model, write_model_binary, write_model_text
from stringsgs.font import UnsupportedCharacterError
from stringsgs.ocr import read_gt_sidecar
from stringsgs.seg3d import classify_points
from stringsgs.synth import MAX_GRAZING_DEG, SynthSpec, build_surface, generate, trace_view

SMALL = SynthSpec(words=("AB",), n_cameras=6, image_size=48, focal=52.0, n_points=400, seed=1, supersample=2)


@pytest.fixture(scope="module")
def fine_scene():
    """Zero jitter, narrow field of view: pixels are small against the glyph strokes."""
    spec = SynthSpec(
        words=("AB",), n_cameras=8, image_size=96, focal=220.0, glyph_px=112, n_points=3000, feature_frac=0.0, noise=0.0, seed=4,
        distance=(2.2, 2.6), closeup_distance=(1.6, 1.9), target_jitter=0.05, supersample=2,
    )
    return generate(spec)


def test_sixteen_camera_model_parses(tmp_path):
    from stringsgs.synth import generate_scene

    spec = dataclasses.replace(SMALL, n_cameras=16)
    scene = generate_scene(spec, tmp_path)
    model = read_colmap_model(tmp_path / "sparse" / "0")
    assert model.counts()[1] == 16 and model.counts()[0] == 1
    assert len(model.points) == len(scene.model.points) > 0
    b = load_bundle(tmp_path)
    assert [p.image_id for p in b.eval_poses] == [p.image_id for p in sorted(b.poses, key=lambda p: p.name)][::8]
    for p in b.eval_poses:
        words = [t.string for t in read_gt_sidecar(tmp_path / "gt_text" / (p.name[:-4] + ".txt"))]
        assert words == scene.gt_words[p.image_id]


def test_bundle_round_trips_bit_exactly(tiny_dataset, tmp_path):
    root, _, _ = tiny_dataset
    model = read_colmap_model(root / "sparse" / "0")
    write_model_text(model, tmp_path / "txt")
    write_model_binary(read_colmap_model(tmp_path / "txt"), tmp_path / "bin")
    for f in ("cameras.bin", "images.bin", "points3D.bin"):
        assert filecmp.cmp(root / "sparse" / "0" / f, tmp_path / "bin" / f, shallow=False)


def test_visibility_matches_depth_map_oracle(tiny_dataset):
    _, spec, scene = tiny_dataset
    intr = scene.intrinsics
    xyz = np.array([p.position for p in scene.model.points])
    cos_max = np.cos(np.deg2rad(MAX_GRAZING_DEG))
    normals = scene.surface.normals(xyz)
    checked = 0
    for pose in scene.poses:
        uv, z, valid = project_points(intr, pose, xyz)
        depth = scene.depths[pose.image_id]
        to_cam = pose.center - xyz
        facing = np.einsum("ij,ij->i", to_cam / np.linalg.norm(to_cam, axis=1, keepdims=True), normals) > cos_max
        expect = np.zeros(len(xyz), bool)
        r = np.floor(uv[valid, 1]).astype(int)
        c = np.floor(uv[valid, 0]).astype(int)
        # the depth map is sampled at pixel centres; allow the in-pixel variation of a tilted plane
        expect[valid] = np.abs(depth[r, c] - z[valid]) <= 0.02 * z[valid]
        expect &= facing
        got = np.array([pose.image_id in p.track for p in scene.model.points])
        assert np.array_equal(got, expect)
        checked += got.sum()
    assert checked > 0


def test_cylinder_visibility_matches_depth_map_oracle():
    spec = dataclasses.replace(SMALL, layout="cylinder", azimuth_deg=55.0, noise=0.0)
    scene = generate(spec)
    xyz = np.array([p.position for p in scene.model.points])
    normals = scene.surface.normals(xyz)
    cos_max = np.cos(np.deg2rad(MAX_GRAZING_DEG))
    for pose in scene.poses:
        uv, z, valid = project_points(scene.intrinsics, pose, xyz)
        to_cam = pose.center - xyz
        facing = np.einsum("ij,ij->i", to_cam / np.linalg.norm(to_cam, axis=1, keepdims=True), normals) > cos_max
        depth = scene.depths[pose.image_id]
        r = np.floor(uv[valid, 1]).astype(int)
        c = np.floor(uv[valid, 0]).astype(int)
        expect = np.zeros(len(xyz), bool)
        expect[valid] = np.abs(depth[r, c] - z[valid]) <= 0.03 * z[valid]
        expect &= facing
        got = np.array([pose.image_id in p.track for p in scene.model.points])
        assert np.array_equal(got, expect)


def test_mask_is_exact_text_footprint():
    spec = SMALL
    scene = generate(spec)
    surf = build_surface(spec)
    # same surface with the ink painted a different colour: images differ exactly on the mask
    plain = dataclasses.replace(surf, texture=surf.texture.copy())
    plain.texture[plain.ink] = 0.0
    for pose in scene.poses[:3]:
        img, mask, _ = trace_view(surf, scene.intrinsics, pose)
        img2, _, _ = trace_view(plain, scene.intrinsics, pose)
        assert np.array_equal(mask, scene.masks[pose.image_id])
        differs = np.abs(img - img2).max(axis=2) > 0
        assert mask.any()
        assert np.array_equal(differs, mask.astype(bool))


def test_zero_jitter_recovery(fine_scene):
    """tau=1 on exact masks recovers ink points, except those within a pixel footprint of a glyph edge."""
    scene = fine_scene
    surf = scene.surface
    pts = scene.model.points
    xyz = np.array([p.position for p in pts])
    poses = {p.image_id: p for p in scene.poses}
    part = classify_points(pts, {1: scene.intrinsics}, scene.poses, scene.masks, tau=1)
    got = np.array([part.is_text(p.point_id) for p in pts])
    assert np.array_equal(scene.on_ink, surf.shade(xyz)[1])

    # distance in texels to the nearest texel of the other class
    d_in = ndimage.distance_transform_edt(surf.ink)
    d_out = ndimage.distance_transform_edt(~surf.ink)
    rc = np.floor(surf.texcoords(xyz)).astype(int)
    clearance = np.where(scene.on_ink, d_in[rc[:, 0], rc[:, 1]], d_out[rc[:, 0], rc[:, 1]])
    # widest pixel footprint over each point's observing views, in texels
    foot = np.zeros(len(pts))
    for k, p in enumerate(pts):
        for iid in p.track:
            pose = poses[iid]
            to_cam = pose.center - xyz[k]
            dist = np.linalg.norm(to_cam)
            cos = abs(to_cam[2]) / dist
            foot[k] = max(foot[k], dist / scene.intrinsics.fx / cos / surf.spec.texel_size)
    clear = clearance > np.sqrt(2) * foot + 2
    assert clear[scene.on_ink].sum() >= 20 and clear[~scene.on_ink].sum() >= 200
    assert np.array_equal(got[clear], scene.on_ink[clear])
    # no text point without ink anywhere near it
    assert not got[~scene.on_ink & (clearance > 3 * foot + 4)].any()


def test_generation_is_deterministic():
    a, b = generate(SMALL), generate(SMALL)
    assert all(np.array_equal(a.images[k], b.images[k]) for k in a.images)
    assert [p.track for p in a.model.points] == [p.track for p in b.model.points]
    assert np.array_equal(np.array([p.position for p in a.model.points]), np.array([p.position for p in b.model.points]))


def test_points_have_two_views_and_colour():
    scene = generate(SMALL)
    assert all(len(p.track) >= 2 for p in scene.model.points)
    ink = scene.on_ink
    rgb = np.array([p.color for p in scene.model.points], float) / 255
    luma = rgb @ [0.299, 0.587, 0.114]
    assert luma[ink].min() > 0.5 > luma[~ink].max()


def test_spec_validation():
    with pytest.raises(UnsupportedCharacterError):
        SynthSpec(words=("HI!",))
    with pytest.raises(ValueError):
        SynthSpec(n_cameras=0)
    with pytest.raises(ValueError):
        SynthSpec(layout="sphere")
    s = SynthSpec(words=("A1",), seed=9)
    assert SynthSpec.from_json(s.to_json()) == s
