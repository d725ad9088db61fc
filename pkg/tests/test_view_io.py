"""View bundle export/import, cached batch rendering, run configuration."""

import numpy as np
import pytest

from d3ff import (
    CameraPose,
    RunConfig,
    cached_render,
    export_view_bundle,
    load_view_bundle,
    normalize,
    render_mesh,
    render_pointcloud,
    render_views,
)
from d3ff.errors import UnreadableFile
from d3ff.view_io import render_cache_key

from shapes import surface_sample, uv_sphere

CFG = RunConfig(n_views=2, resolution=64, sample_count=8)


def _mesh_view():
    cam = CameraPose(theta_deg=15.0, phi_deg=30.0, distance=2.5, resolution=(64, 64))
    return render_mesh(uv_sphere(9, 8), cam, view_id=4)


def _cloud_view():
    cloud = surface_sample(normalize(uv_sphere(9, 8)), 500, seed=0)
    cam = CameraPose(theta_deg=15.0, phi_deg=30.0, distance=2.5, resolution=(64, 64))
    return render_pointcloud(cloud, cam, view_id=4)


def test_export_load_mesh_view(tmp_path):
    view = _mesh_view()
    export_view_bundle(view, tmp_path / "v")
    names = {p.name for p in (tmp_path / "v").iterdir()}
    assert names == {
        "depth.png", "mask.png", "edge.png", "normal.png",
        "position.d3ff", "position.json", "view.json",
    }
    back = load_view_bundle(tmp_path / "v")
    assert back.view_id == 4
    assert back.camera == view.camera
    np.testing.assert_array_equal(back.mask, view.mask)
    np.testing.assert_array_equal(back.edge, view.edge)
    # depth survives 16-bit quantization of its range
    fg = view.mask
    rng_ = view.depth[fg].max() - view.depth[fg].min()
    np.testing.assert_allclose(back.depth[fg], view.depth[fg], atol=rng_ / 65535.0 + 1e-9)
    assert np.isposinf(back.depth[~fg]).all()
    np.testing.assert_allclose(back.normal[fg], view.normal[fg], atol=1e-4)
    # positions are the authoritative geometry: exact at float32
    np.testing.assert_array_equal(
        back.position[fg], view.position[fg].astype(np.float32).astype(np.float64)
    )
    assert (back.position[~fg] == 0.0).all()


def test_export_load_cloud_view(tmp_path):
    view = _cloud_view()
    export_view_bundle(view, tmp_path / "v")
    assert not (tmp_path / "v" / "normal.png").exists()
    back = load_view_bundle(tmp_path / "v")
    assert back.normal is None
    np.testing.assert_array_equal(back.mask, view.mask)


def test_load_missing_dir(tmp_path):
    with pytest.raises(UnreadableFile):
        load_view_bundle(tmp_path / "absent")


def test_render_views_dispatch():
    mesh = normalize(uv_sphere(9, 8))
    views = render_views(mesh, CFG)
    assert len(views) == 2
    assert all(v.normal is not None for v in views)
    assert [v.view_id for v in views] == [0, 1]

    cloud = surface_sample(mesh, 300, seed=1)
    views = render_views(cloud, CFG)
    assert all(v.normal is None for v in views)
    assert all(v.edge.dtype == bool for v in views)


def test_cache_key_sensitivity():
    mesh = normalize(uv_sphere(9, 8))
    other = normalize(uv_sphere(9, 10))
    key = render_cache_key(mesh, CFG)
    assert key == render_cache_key(mesh, CFG)
    assert key != render_cache_key(other, CFG)
    assert key != render_cache_key(mesh, RunConfig(n_views=2, resolution=128))
    # knobs that do not affect rendering do not invalidate the cache
    assert key == render_cache_key(mesh, RunConfig(n_views=2, resolution=64, seed=9))


def test_cached_render_roundtrip(tmp_path):
    mesh = normalize(uv_sphere(9, 8))
    fresh = cached_render(mesh, CFG, None)
    first = cached_render(mesh, CFG, tmp_path)
    entries = list(tmp_path.glob("views-*.npz"))
    assert len(entries) == 1
    second = cached_render(mesh, CFG, tmp_path)
    for a, b, c in zip(fresh, first, second):
        np.testing.assert_array_equal(b.depth, a.depth)
        np.testing.assert_array_equal(c.depth, a.depth)
        np.testing.assert_array_equal(c.position, a.position)
        np.testing.assert_array_equal(c.mask, a.mask)
        assert c.camera == a.camera


def test_cached_render_recovers_from_corruption(tmp_path):
    mesh = normalize(uv_sphere(9, 8))
    good = cached_render(mesh, CFG, tmp_path)
    entry = next(tmp_path.glob("views-*.npz"))
    entry.write_bytes(b"not an archive")
    again = cached_render(mesh, CFG, tmp_path)
    np.testing.assert_array_equal(again[0].depth, good[0].depth)
    # the corrupt entry was replaced with a valid one
    third = cached_render(mesh, CFG, tmp_path)
    np.testing.assert_array_equal(third[0].depth, good[0].depth)


# ---------------------------------------------------------------------------
# run configuration


def test_config_roundtrip(tmp_path):
    cfg = RunConfig(n_views=4, resolution=64, tolerances=(0.1, 0.2), jobs=2)
    p = tmp_path / "cfg.json"
    cfg.save(p)
    assert RunConfig.load(p) == cfg


def test_config_rejects_unknown_fields():
    with pytest.raises(ValueError):
        RunConfig.from_dict({"n_views": 4, "view_count": 9})


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig(n_views=0)
    with pytest.raises(ValueError):
        RunConfig(resolution=32)
    with pytest.raises(ValueError):
        RunConfig(alpha=1.5)
    with pytest.raises(ValueError):
        RunConfig(provider="clip")
    with pytest.raises(ValueError):
        RunConfig(pool="median")
    with pytest.raises(ValueError):
        RunConfig(r_fraction=0.0)


def test_config_r_fraction_zero_allowed_with_override():
    cfg = RunConfig(r_fraction=-1.0, ball_radius=0.05)
    assert cfg.ball_radius == 0.05


def test_config_missing_file():
    with pytest.raises(UnreadableFile):
        RunConfig.load("/nonexistent/cfg.json")
