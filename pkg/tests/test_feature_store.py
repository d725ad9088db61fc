"""Binary feature container, sidecars, synthetic features, manifests."""

import json
import struct

import numpy as np
import pytest

from d3ff import (
    CameraPose,
    FeatureManifest,
    FeatureMap,
    ManifestView,
    load_manifest,
    read_feature_header,
    read_feature_map,
    render_mesh,
    synthetic_features,
    validate_manifest,
    write_feature_map,
    write_manifest,
)
from d3ff.errors import (
    BadMagic,
    InvalidFeatureMap,
    IoError,
    ManifestError,
    TruncatedPayload,
    VersionUnsupported,
)
from d3ff.feature_store import read_array, sidecar_path, write_array

from shapes import uv_sphere

RES = (64, 64)


def _camera():
    return CameraPose(theta_deg=10.0, phi_deg=20.0, distance=2.5, resolution=RES)


def _view():
    return render_mesh(uv_sphere(9, 8), _camera())


def _map(data, kind="fused", timestep=None):
    return FeatureMap(view_id=3, kind=kind, data=data, timestep=timestep)


# ---------------------------------------------------------------------------
# binary layout


def test_container_byte_layout(tmp_path):
    data = np.arange(12, dtype=np.float32).reshape(2, 2, 3)
    path = tmp_path / "m.d3ff"
    write_feature_map(_map(data), path)
    blob = path.read_bytes()
    assert len(blob) == 24 + 48
    assert blob[0:4] == b"D3FF"
    assert struct.unpack("<I", blob[4:8])[0] == 1       # format version
    assert struct.unpack("<3I", blob[8:20]) == (2, 2, 3)  # H, W, C
    assert struct.unpack("<I", blob[20:24])[0] == 0     # float32 little-endian
    payload = np.frombuffer(blob[24:], dtype="<f4")
    np.testing.assert_array_equal(payload, np.arange(12, dtype=np.float32))
    # row-major, channel-last: element (h, w, c) sits at ((h*W + w)*C + c)
    assert payload[(1 * 2 + 0) * 3 + 2] == data[1, 0, 2]


def test_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(100):
        h, w, c = rng.integers(1, 9, size=3)
        data = rng.normal(size=(h, w, c)).astype(np.float32)
        fmap = FeatureMap(
            view_id=i,
            kind="diffusion",
            data=data,
            timestep=int(rng.integers(0, 30)),
        )
        path = tmp_path / f"m{i}.d3ff"
        write_feature_map(fmap, path)
        back = read_feature_map(path)
        np.testing.assert_array_equal(back.data, data)
        assert back.view_id == fmap.view_id
        assert back.kind == "diffusion"
        assert back.timestep == fmap.timestep


def test_sidecar_contents(tmp_path):
    cam = {"theta_deg": 1.0, "phi_deg": 2.0, "distance": 2.5, "fov_y_deg": 50.0}
    fmap = FeatureMap(
        view_id=7, kind="dino", data=np.ones((2, 3, 4), dtype=np.float32), camera=cam
    )
    path = tmp_path / "d.d3ff"
    write_feature_map(fmap, path)
    side = sidecar_path(path)
    assert side.name == "d.json"
    meta = json.loads(side.read_text())
    assert meta == {
        "view_id": 7, "kind": "dino", "timestep": None,
        "H": 2, "W": 3, "C": 4, "camera": cam,
    }
    assert read_feature_map(path).camera == cam


def test_nonfinite_data_rejected():
    bad = np.ones((2, 2, 2), dtype=np.float32)
    bad[0, 0, 0] = np.nan
    with pytest.raises(InvalidFeatureMap):
        _map(bad)


def test_unknown_kind_rejected():
    with pytest.raises(InvalidFeatureMap):
        _map(np.ones((2, 2, 2), dtype=np.float32), kind="clip")


def test_timestep_only_on_diffusion():
    data = np.ones((2, 2, 2), dtype=np.float32)
    with pytest.raises(InvalidFeatureMap):
        _map(data, kind="dino", timestep=5)
    assert _map(data, kind="diffusion", timestep=5).timestep == 5


def test_bad_magic(tmp_path):
    path = tmp_path / "x.d3ff"
    path.write_bytes(b"NOPE" + b"\0" * 44)
    with pytest.raises(BadMagic):
        read_feature_header(path)


def test_unsupported_version_and_dtype(tmp_path):
    good = struct.pack("<4s5I", b"D3FF", 1, 1, 1, 1, 0) + b"\0\0\0\0"
    v2 = tmp_path / "v2.d3ff"
    v2.write_bytes(struct.pack("<4s5I", b"D3FF", 2, 1, 1, 1, 0) + b"\0\0\0\0")
    with pytest.raises(VersionUnsupported):
        read_feature_header(v2)
    dt = tmp_path / "dt.d3ff"
    dt.write_bytes(struct.pack("<4s5I", b"D3FF", 1, 1, 1, 1, 9) + b"\0\0\0\0")
    with pytest.raises(VersionUnsupported):
        read_feature_header(dt)
    ok = tmp_path / "ok.d3ff"
    ok.write_bytes(good)
    assert read_feature_header(ok) == (1, 1, 1)


def test_truncated_payload(tmp_path):
    # header claims 4x4x8 = 128 floats but only 100 are present
    path = tmp_path / "t.d3ff"
    path.write_bytes(
        struct.pack("<4s5I", b"D3FF", 1, 4, 4, 8, 0)
        + np.zeros(100, dtype="<f4").tobytes()
    )
    with pytest.raises(TruncatedPayload):
        read_feature_header(path)
    short = tmp_path / "s.d3ff"
    short.write_bytes(b"D3FF\x01")
    with pytest.raises(TruncatedPayload):
        read_feature_header(short)


def test_oversized_payload_rejected(tmp_path):
    path = tmp_path / "o.d3ff"
    path.write_bytes(
        struct.pack("<4s5I", b"D3FF", 1, 1, 1, 1, 0)
        + np.zeros(9, dtype="<f4").tobytes()
    )
    with pytest.raises(TruncatedPayload):
        read_feature_header(path)


def test_missing_sidecar(tmp_path):
    path = tmp_path / "m.d3ff"
    write_feature_map(_map(np.ones((2, 2, 2), dtype=np.float32)), path)
    sidecar_path(path).unlink()
    with pytest.raises(IoError):
        read_feature_map(path)


def test_bare_array_roundtrip(tmp_path):
    arr = np.random.default_rng(1).normal(size=(5, 1, 7)).astype(np.float32)
    path = tmp_path / "a.d3ff"
    write_array(arr, path)
    assert not sidecar_path(path).exists()
    np.testing.assert_array_equal(read_array(path), arr)


def test_bare_array_validation(tmp_path):
    with pytest.raises(InvalidFeatureMap):
        write_array(np.ones((2, 2)), tmp_path / "b.d3ff")


# ---------------------------------------------------------------------------
# synthetic features


def _bundle_with_positions(pixels, points, camera):
    from d3ff import ViewBundle

    h, w = camera.resolution
    mask = np.zeros((h, w), dtype=bool)
    position = np.zeros((h, w, 3))
    depth = np.full((h, w), np.inf)
    for (r, c), p in zip(pixels, points):
        mask[r, c] = True
        position[r, c] = p
        depth[r, c] = 2.0
    return ViewBundle(
        view_id=0, camera=camera, depth=depth, mask=mask,
        position=position, edge=np.zeros((h, w), dtype=bool),
    )


def test_synthetic_same_world_point_same_feature():
    # the encoding is a pure function of world position: the same point seen
    # at different pixels of different views gets a bit-identical feature
    pts = np.random.default_rng(2).uniform(-0.5, 0.5, size=(5, 3))
    # pixel lists are row-major sorted so masked extraction keeps point order
    va = _bundle_with_positions([(2, 3), (5, 40), (10, 7), (20, 20), (63, 0)], pts, _camera())
    vb = _bundle_with_positions([(0, 0), (9, 9), (12, 60), (30, 1), (50, 50)], pts,
                                CameraPose(theta_deg=-40.0, phi_deg=200.0,
                                           distance=2.5, resolution=RES))
    fa = synthetic_features(va, dim=24, seed=7).data[va.mask]
    fb = synthetic_features(vb, dim=24, seed=7).data[vb.mask]
    np.testing.assert_array_equal(fa, fb)


def test_synthetic_unit_norm_and_zero_background():
    view = _view()
    fmap = synthetic_features(view, dim=48, seed=0)
    norms = np.linalg.norm(fmap.data[view.mask], axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-6)
    assert (fmap.data[~view.mask] == 0.0).all()
    assert fmap.kind == "synthetic"
    assert fmap.camera == view.camera.to_dict()


def test_synthetic_deterministic():
    view = _view()
    a = synthetic_features(view, dim=24, seed=5)
    b = synthetic_features(view, dim=24, seed=5)
    np.testing.assert_array_equal(a.data, b.data)
    c = synthetic_features(view, dim=24, seed=6)
    assert not np.array_equal(a.data, c.data)


def test_synthetic_distinguishes_positions():
    view = _view()
    fmap = synthetic_features(view, dim=24, seed=0)
    pos = view.position[view.mask]
    feat = fmap.data[view.mask].astype(np.float64)
    # two well-separated surface points must not share a descriptor direction
    far_pair = np.unravel_index(
        np.argmax(np.linalg.norm(pos[:200, None] - pos[None, :200], axis=2)),
        (200, 200),
    )
    cos = float(feat[far_pair[0]] @ feat[far_pair[1]])
    assert cos < 0.99


def test_synthetic_dim_validation():
    view = _view()
    with pytest.raises(ValueError):
        synthetic_features(view, dim=7, seed=0)
    with pytest.raises(ValueError):
        synthetic_features(view, dim=4, seed=0)


def test_synthetic_zero_padding():
    view = _view()
    fmap = synthetic_features(view, dim=32, seed=0)  # 5 octaves -> 30 channels
    assert (fmap.data[..., 30:] == 0.0).all()
    assert np.abs(fmap.data[view.mask][:, :30]).max() > 0


def test_synthetic_frame_compensates_rotation():
    rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    sphere = uv_sphere(9, 8)
    turned = type(sphere)(vertices=sphere.vertices @ rot.T, faces=sphere.faces)
    cam_a = CameraPose(theta_deg=0.0, phi_deg=0.0, distance=2.5, resolution=RES)
    cam_b = CameraPose(theta_deg=0.0, phi_deg=90.0, distance=2.5, resolution=RES)
    va = render_mesh(sphere, cam_a)
    vb = render_mesh(turned, cam_b)
    np.testing.assert_array_equal(va.mask, vb.mask)
    fa = synthetic_features(va, dim=24, seed=3)
    fb = synthetic_features(vb, dim=24, seed=3, frame=rot.T)
    np.testing.assert_allclose(fb.data, fa.data, atol=1e-6)


# ---------------------------------------------------------------------------
# manifests


def _small_manifest(tmp_path, *, drop_file=False, dup_ids=False, mixed_res=False,
                    corrupt=False):
    views = []
    for vid in range(2):
        d = tmp_path / f"view_{vid:03d}"
        d.mkdir(exist_ok=True)
        diffusion = {}
        for t in (2, 1, 0):
            rel = f"view_{vid:03d}/diff_t{t:02d}.d3ff"
            h = 4 if not (mixed_res and vid == 1) else 6
            write_feature_map(
                FeatureMap(view_id=vid, kind="diffusion",
                           data=np.full((h, 4, 5), 0.5, dtype=np.float32), timestep=t),
                tmp_path / rel,
            )
            diffusion[t] = rel
        dino_rel = f"view_{vid:03d}/dino.d3ff"
        write_feature_map(
            FeatureMap(view_id=vid, kind="dino",
                       data=np.full((4, 4, 3), 0.25, dtype=np.float32)),
            tmp_path / dino_rel,
        )
        views.append(ManifestView(
            view_id=vid if not dup_ids else 0,
            camera={"theta_deg": 0.0, "phi_deg": 90.0 * vid,
                    "distance": 2.5, "fov_y_deg": 50.0},
            diffusion=diffusion,
            dino=dino_rel,
            view_dir=f"view_{vid:03d}",
        ))
    if drop_file:
        (tmp_path / views[1].diffusion[1]).unlink()
    if corrupt:
        (tmp_path / views[0].dino).write_bytes(b"garbage!")
    return FeatureManifest(shape_id="s", extractor="test", T=8, views=tuple(views))


def test_manifest_roundtrip(tmp_path):
    manifest = _small_manifest(tmp_path)
    path = tmp_path / "manifest.json"
    write_manifest(manifest, path)
    back = load_manifest(path)
    assert back.shape_id == "s"
    assert back.T == 8
    assert len(back.views) == 2
    assert back.view_by_id(1).diffusion == manifest.views[1].diffusion
    assert back.view_by_id(0).camera["phi_deg"] == 0.0
    validate_manifest(back, tmp_path)


def test_manifest_unknown_view():
    manifest = FeatureManifest(shape_id="s", extractor="e", T=4, views=())
    with pytest.raises(ManifestError):
        manifest.view_by_id(3)


def test_manifest_missing_file(tmp_path):
    manifest = _small_manifest(tmp_path, drop_file=True)
    with pytest.raises(ManifestError):
        validate_manifest(manifest, tmp_path)


def test_manifest_duplicate_ids(tmp_path):
    manifest = _small_manifest(tmp_path, dup_ids=True)
    with pytest.raises(ManifestError):
        validate_manifest(manifest, tmp_path)


def test_manifest_mixed_resolution(tmp_path):
    manifest = _small_manifest(tmp_path, mixed_res=True)
    with pytest.raises(ManifestError):
        validate_manifest(manifest, tmp_path)


def test_manifest_corrupt_file(tmp_path):
    manifest = _small_manifest(tmp_path, corrupt=True)
    with pytest.raises(ManifestError):
        validate_manifest(manifest, tmp_path)


def test_manifest_parse_error(tmp_path):
    bad = tmp_path / "m.json"
    bad.write_text("{not json")
    with pytest.raises(ManifestError):
        load_manifest(bad)
