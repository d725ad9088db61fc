"""View bundle artifacts on disk, and cached batch rendering.

Each view exports to its own directory:

    depth.png     16-bit, round(65535 * relative depth), near=1.0, far=0.0
                  over foreground, background 0; view.json stores depth_near
                  and depth_far so metric depth can be recovered
    normal.png    16-bit RGB, channel = round(65535 * (n + 1) / 2); meshes only
    edge.png      16-bit, 0 or 65535
    mask.png      8-bit, 0 or 255
    position.d3ff world-space positions as a 3-channel feature map + sidecar
    view.json     camera pose and depth range

The 16-bit images are for conditioning and inspection; the position map is
the authoritative geometry (float32, exact to its precision).
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import cv2
import numpy as np

from .config import RunConfig
from .errors import IoError, UnreadableFile
from .feature_store import FeatureMap, read_feature_map, write_feature_map
from .renderer import (
    CameraPose,
    ViewBundle,
    normalize_depth,
    render_mesh,
    render_pointcloud,
    sample_cameras,
)
from .shape_io import Shape


def export_view_bundle(view: ViewBundle, out_dir: str | Path) -> None:
    """Write one view's maps and sidecar into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    depth_rel = normalize_depth(view.depth)
    fg = view.mask
    near = float(view.depth[fg].min()) if fg.any() else 0.0
    far = float(view.depth[fg].max()) if fg.any() else 0.0

    _write_png(out / "depth.png", np.round(depth_rel * 65535.0).astype(np.uint16))
    _write_png(out / "mask.png", (view.mask * 255).astype(np.uint8))
    _write_png(out / "edge.png", (view.edge.astype(np.uint16)) * 65535)
    if view.normal is not None:
        n16 = np.round((view.normal + 1.0) / 2.0 * 65535.0).astype(np.uint16)
        _write_png(out / "normal.png", n16[..., ::-1])  # library writes BGR order

    pos_map = FeatureMap(
        view_id=view.view_id,
        kind="position",
        data=view.position.astype(np.float32),
        camera=view.camera.to_dict(),
    )
    write_feature_map(pos_map, out / "position.d3ff")

    h, w = view.resolution
    meta = {
        "view_id": view.view_id,
        "theta_deg": view.camera.theta_deg,
        "phi_deg": view.camera.phi_deg,
        "distance": view.camera.distance,
        "fov_y_deg": view.camera.fov_y_deg,
        "H": h,
        "W": w,
        "depth_near": near,
        "depth_far": far,
        "has_normal": view.normal is not None,
    }
    with open(out / "view.json", "w", encoding="ascii") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_view_bundle(view_dir: str | Path) -> ViewBundle:
    """Reconstruct a ViewBundle from an exported directory.

    Depth comes back through the 16-bit quantization; positions, which the
    distiller actually consumes, come back at full float32 precision.
    """
    d = Path(view_dir)
    meta_path = d / "view.json"
    if not meta_path.is_file():
        raise UnreadableFile(f"missing {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="ascii"))
    h, w = int(meta["H"]), int(meta["W"])
    camera = CameraPose(
        theta_deg=float(meta["theta_deg"]),
        phi_deg=float(meta["phi_deg"]),
        distance=float(meta["distance"]),
        fov_y_deg=float(meta["fov_y_deg"]),
        resolution=(h, w),
    )
    mask = _read_png(d / "mask.png") > 127
    depth_rel = _read_png(d / "depth.png").astype(np.float64) / 65535.0
    near, far = float(meta["depth_near"]), float(meta["depth_far"])
    depth = np.full((h, w), np.inf)
    depth[mask] = far - depth_rel[mask] * (far - near)
    edge = _read_png(d / "edge.png") > 0
    normal = None
    if meta.get("has_normal"):
        n16 = _read_png(d / "normal.png")[..., ::-1].astype(np.float64)
        normal = np.zeros((h, w, 3))
        normal[mask] = n16[mask] / 65535.0 * 2.0 - 1.0
    position_map = read_feature_map(d / "position.d3ff")
    position = position_map.data.astype(np.float64)
    position[~mask] = 0.0
    return ViewBundle(
        view_id=int(meta["view_id"]),
        camera=camera,
        depth=depth,
        mask=mask,
        position=position,
        edge=edge,
        normal=normal,
    )


def _write_png(path: Path, arr: np.ndarray) -> None:
    if not cv2.imwrite(str(path), arr):
        raise IoError(f"cannot write {path}")


def _read_png(path: Path) -> np.ndarray:
    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise UnreadableFile(f"cannot read {path}")
    return arr


# ---------------------------------------------------------------------------
# batch rendering with an optional cache


def render_views(shape: Shape, cfg: RunConfig) -> list[ViewBundle]:
    """Render all configured views of a (normalized) shape."""
    cameras = sample_cameras(
        cfg.n_views,
        distance=cfg.distance,
        resolution=(cfg.resolution, cfg.resolution),
        fov_y_deg=cfg.fov_y_deg,
    )
    thresholds = (cfg.canny_low, cfg.canny_high)
    views = []
    for i, cam in enumerate(cameras):
        if shape.is_mesh():
            views.append(render_mesh(shape, cam, view_id=i, edge_thresholds=thresholds))
        else:
            views.append(
                render_pointcloud(
                    shape, cam, splat_px=cfg.splat_px, view_id=i, edge_thresholds=thresholds
                )
            )
    return views


def render_cache_key(shape: Shape, cfg: RunConfig) -> str:
    """Hash of everything the rendered views depend on."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(shape.vertices).tobytes())
    if shape.faces is not None:
        h.update(np.ascontiguousarray(shape.faces).tobytes())
    h.update(b"mesh" if shape.is_mesh() else b"cloud")
    knob = (
        cfg.n_views, cfg.resolution, cfg.distance, cfg.fov_y_deg,
        cfg.splat_px, cfg.canny_low, cfg.canny_high,
    )
    h.update(repr(knob).encode("ascii"))
    return h.hexdigest()[:24]


def cached_render(shape: Shape, cfg: RunConfig, cache_dir: str | Path | None) -> list[ViewBundle]:
    """render_views with a transparent npz cache keyed on shape and config."""
    if cache_dir is None:
        return render_views(shape, cfg)
    cache = Path(cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    path = cache / f"views-{render_cache_key(shape, cfg)}.npz"
    if path.is_file():
        try:
            return _load_views_npz(path)
        except (OSError, ValueError, KeyError):
            path.unlink(missing_ok=True)  # corrupt cache entry; re-render
    views = render_views(shape, cfg)
    _save_views_npz(views, path)
    return views


def _save_views_npz(views: list[ViewBundle], path: Path) -> None:
    arrays: dict[str, np.ndarray] = {}
    meta = []
    for i, v in enumerate(views):
        arrays[f"depth_{i}"] = v.depth
        arrays[f"mask_{i}"] = v.mask
        arrays[f"position_{i}"] = v.position
        arrays[f"edge_{i}"] = v.edge
        if v.normal is not None:
            arrays[f"normal_{i}"] = v.normal
        meta.append(
            {
                "view_id": v.view_id,
                "camera": v.camera.to_dict(),
                "resolution": list(v.camera.resolution),
                "has_normal": v.normal is not None,
            }
        )
    arrays["meta"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("ascii"), dtype=np.uint8
    ).copy()
    tmp = path.with_suffix(".tmp.npz")
    with open(tmp, "wb") as fh:
        np.savez_compressed(fh, **arrays)
    tmp.replace(path)


def _load_views_npz(path: Path) -> list[ViewBundle]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("ascii"))
        views = []
        for i, m in enumerate(meta):
            camera = CameraPose.from_dict(m["camera"], resolution=tuple(m["resolution"]))
            views.append(
                ViewBundle(
                    view_id=int(m["view_id"]),
                    camera=camera,
                    depth=data[f"depth_{i}"],
                    mask=data[f"mask_{i}"],
                    position=data[f"position_{i}"],
                    edge=data[f"edge_{i}"],
                    normal=data[f"normal_{i}"] if m["has_normal"] else None,
                )
            )
    return views
