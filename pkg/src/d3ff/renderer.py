"""Spherical camera sampling and software rasterization.

Each view produces the geometric maps used downstream: metric depth with a
+inf background sentinel, camera-space unit normals (meshes only), a binary
edge map derived from depth, a foreground mask, and per-pixel world-space
surface positions. There is no shading and no anti-aliasing; one sample per
pixel.

Conventions:
  - World frame is z-up. A camera at elevation theta and azimuth phi sits at
    distance d from the origin and looks at the origin.
  - Camera space: x right, y down, z forward. Depth is the camera-space z
    coordinate (distance along the view axis, not the Euclidean ray length).
  - Pixel (row r, col c) covers [c, c+1) x [r, r+1); its center is
    (c + 0.5, r + 0.5) in (u, v) image coordinates, u rightward, v downward.
  - Normals are flipped so n . ray <= 0, i.e. they point toward the camera.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import NoFaces
from .shape_io import Shape

# unit-step response of these kernels is 1.0, so edge thresholds are in
# units of the normalized depth range
_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64) / 4.0
_SOBEL_Y = _SOBEL_X.T


@dataclass(frozen=True)
class CameraPose:
    """A perspective pinhole camera on the view sphere, looking at the origin."""

    theta_deg: float                       # elevation, degrees, +90 = up
    phi_deg: float                         # azimuth, degrees
    distance: float
    fov_y_deg: float = 50.0
    resolution: tuple[int, int] = (512, 512)  # (H, W)

    def __post_init__(self):
        if self.distance <= 0:
            raise ValueError(f"camera distance must be positive, got {self.distance}")
        if not 0 < self.fov_y_deg < 180:
            raise ValueError(f"fov_y must be in (0, 180), got {self.fov_y_deg}")
        h, w = self.resolution
        if h < 64 or w < 64:
            raise ValueError(f"resolution must be at least 64x64, got {h}x{w}")

    @property
    def eye(self) -> np.ndarray:
        t = math.radians(self.theta_deg)
        p = math.radians(self.phi_deg)
        return self.distance * np.array(
            [math.cos(t) * math.cos(p), math.cos(t) * math.sin(p), math.sin(t)]
        )

    @property
    def rotation(self) -> np.ndarray:
        """World-to-camera rotation; rows are the right, down, forward axes."""
        forward = -self.eye / self.distance
        up = np.array([0.0, 0.0, 1.0])
        right = np.cross(forward, up)
        n = np.linalg.norm(right)
        if n < 1e-12:  # looking straight up or down
            right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
            n = np.linalg.norm(right)
        right = right / n
        down = np.cross(forward, right)
        return np.stack([right, down, forward])

    @property
    def focal(self) -> float:
        """Focal length in pixels for the vertical field of view."""
        h = self.resolution[0]
        return (h / 2.0) / math.tan(math.radians(self.fov_y_deg) / 2.0)

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.eye) @ self.rotation.T

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project world points to (u, v, depth) rows; depth is camera-space z."""
        cam = self.world_to_camera(np.atleast_2d(points))
        h, w = self.resolution
        f = self.focal
        z = cam[:, 2]
        u = f * cam[:, 0] / z + w / 2.0
        v = f * cam[:, 1] / z + h / 2.0
        return np.stack([u, v, z], axis=1)

    def to_dict(self) -> dict:
        return {
            "theta_deg": self.theta_deg,
            "phi_deg": self.phi_deg,
            "distance": self.distance,
            "fov_y_deg": self.fov_y_deg,
        }

    @classmethod
    def from_dict(cls, d: dict, resolution: tuple[int, int] = (512, 512)) -> "CameraPose":
        return cls(
            theta_deg=float(d["theta_deg"]),
            phi_deg=float(d["phi_deg"]),
            distance=float(d["distance"]),
            fov_y_deg=float(d["fov_y_deg"]),
            resolution=tuple(resolution),
        )


@dataclass(frozen=True, eq=False)
class ViewBundle:
    """Geometric maps rendered from one camera.

    Invariant: mask(p) iff depth(p) finite iff position(p) carries a surface
    point; background positions are zero and must be gated by the mask.
    """

    view_id: int
    camera: CameraPose
    depth: np.ndarray              # (H, W) float64, +inf on background
    mask: np.ndarray               # (H, W) bool
    position: np.ndarray           # (H, W, 3) float64 world space
    edge: np.ndarray               # (H, W) bool
    normal: np.ndarray | None = None  # (H, W, 3) float64 camera space

    @property
    def resolution(self) -> tuple[int, int]:
        return self.depth.shape[0], self.depth.shape[1]


def view_grid(n: int) -> tuple[int, int]:
    """Split n into (n_elev, n_azim) with n_elev the largest divisor <= sqrt(n)."""
    if n < 1:
        raise ValueError(f"need at least one view, got {n}")
    for d in range(math.isqrt(n), 0, -1):
        if n % d == 0:
            return d, n // d
    raise AssertionError("unreachable: 1 divides n")


def sample_cameras(
    n: int,
    distance: float = 2.5,
    resolution: tuple[int, int] = (512, 512),
    fov_y_deg: float = 50.0,
) -> list[CameraPose]:
    """Place n cameras on a deterministic elevation x azimuth grid.

    Azimuths are linearly spaced over [0, 360); elevations are linearly
    spaced over the open interval (-90, 90), excluding the redundant poles.
    Order is row-major with elevation as the outer loop, so rotating the
    shape by one azimuth step maps the view list onto a cyclic shift of
    itself within each elevation row.
    """
    n_elev, n_azim = view_grid(n)
    elevations = np.linspace(-90.0, 90.0, n_elev + 2)[1:-1]
    azimuths = np.arange(n_azim) * (360.0 / n_azim)
    return [
        CameraPose(
            theta_deg=float(t),
            phi_deg=float(p),
            distance=distance,
            fov_y_deg=fov_y_deg,
            resolution=tuple(resolution),
        )
        for t in elevations
        for p in azimuths
    ]


def vertex_normals(shape: Shape) -> np.ndarray:
    """Per-vertex normals as area-weighted averages of incident face normals.

    Vertices not referenced by any face get a zero normal.
    """
    if not shape.is_mesh():
        raise NoFaces("vertex normals require faces")
    v = shape.vertices
    f = shape.faces
    face_n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    out = np.zeros_like(v)
    for corner in range(3):
        np.add.at(out, f[:, corner], face_n)
    norms = np.linalg.norm(out, axis=1)
    nz = norms > 0
    out[nz] /= norms[nz, None]
    return out


def _check_frustum(shape: Shape, camera: CameraPose) -> None:
    radius = float(np.linalg.norm(shape.vertices, axis=1).max())
    if camera.distance <= radius:
        raise ValueError(
            f"camera distance {camera.distance} is inside the shape's bounding "
            f"sphere (radius {radius:.4g}); the whole shape must be in front"
        )


def render_mesh(
    shape: Shape,
    camera: CameraPose,
    view_id: int = 0,
    edge_thresholds: tuple[float, float] = (0.05, 0.15),
) -> ViewBundle:
    """Rasterize a triangle mesh with a z-buffer.

    Depth, world position, and the normal are interpolated with
    perspective-correct barycentric weights. No backface culling: both
    windings are rasterized and the normal is flipped toward the camera
    afterward.
    """
    if not shape.is_mesh():
        raise NoFaces("mesh rendering requires faces")
    _check_frustum(shape, camera)
    h, w = camera.resolution
    verts = shape.vertices
    rot = camera.rotation
    cam = camera.world_to_camera(verts)
    z = cam[:, 2]
    f = camera.focal
    u = f * cam[:, 0] / z + w / 2.0
    v = f * cam[:, 1] / z + h / 2.0
    vnorm = vertex_normals(shape)

    zbuf = np.full((h, w), np.inf)
    pos = np.zeros((h, w, 3))
    nrm = np.zeros((h, w, 3))

    for tri in shape.faces:
        us, vs, zs = u[tri], v[tri], z[tri]
        c0 = max(int(math.floor(us.min() - 0.5)), 0)
        c1 = min(int(math.ceil(us.max() - 0.5)), w - 1)
        r0 = max(int(math.floor(vs.min() - 0.5)), 0)
        r1 = min(int(math.ceil(vs.max() - 0.5)), h - 1)
        if c1 < c0 or r1 < r0:
            continue
        area = (us[1] - us[0]) * (vs[2] - vs[0]) - (vs[1] - vs[0]) * (us[2] - us[0])
        if abs(area) < 1e-12:  # degenerate or edge-on triangle
            continue
        px = np.arange(c0, c1 + 1) + 0.5
        py = (np.arange(r0, r1 + 1) + 0.5)[:, None]
        # edge functions cross(b - a, p - a); sign handling admits both windings
        w0 = (us[2] - us[1]) * (py - vs[1]) - (vs[2] - vs[1]) * (px - us[1])
        w1 = (us[0] - us[2]) * (py - vs[2]) - (vs[0] - vs[2]) * (px - us[2])
        w2 = (us[1] - us[0]) * (py - vs[0]) - (vs[1] - vs[0]) * (px - us[0])
        if area > 0:
            inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        else:
            inside = (w0 <= 0) & (w1 <= 0) & (w2 <= 0)
        if not inside.any():
            continue
        l0, l1, l2 = w0 / area, w1 / area, w2 / area
        inv_z = l0 / zs[0] + l1 / zs[1] + l2 / zs[2]
        z_px = 1.0 / inv_z
        zv = zbuf[r0:r1 + 1, c0:c1 + 1]
        better = inside & (z_px < zv)
        if not better.any():
            continue
        # perspective-correct weights: screen barycentrics over vertex depth
        b0 = (l0 / zs[0]) * z_px
        b1 = (l1 / zs[1]) * z_px
        b2 = (l2 / zs[2]) * z_px
        p_px = (
            b0[..., None] * verts[tri[0]]
            + b1[..., None] * verts[tri[1]]
            + b2[..., None] * verts[tri[2]]
        )
        n_px = (
            b0[..., None] * vnorm[tri[0]]
            + b1[..., None] * vnorm[tri[1]]
            + b2[..., None] * vnorm[tri[2]]
        )
        n_len = np.linalg.norm(n_px, axis=-1)
        degenerate = n_len < 1e-12
        if degenerate.any():  # opposing vertex normals canceled; use face plane
            face_n = np.cross(verts[tri[1]] - verts[tri[0]], verts[tri[2]] - verts[tri[0]])
            n_px[degenerate] = face_n
        zv[better] = z_px[better]
        pos[r0:r1 + 1, c0:c1 + 1][better] = p_px[better]
        nrm[r0:r1 + 1, c0:c1 + 1][better] = n_px[better]

    mask = np.isfinite(zbuf)
    normal = np.zeros((h, w, 3))
    if mask.any():
        n_cam = nrm[mask] @ rot.T
        n_cam /= np.linalg.norm(n_cam, axis=1, keepdims=True)
        ray = (pos[mask] - camera.eye) @ rot.T
        ray /= np.linalg.norm(ray, axis=1, keepdims=True)
        facing_away = np.einsum("ij,ij->i", n_cam, ray) > 0
        n_cam[facing_away] *= -1.0
        normal[mask] = n_cam
    edge = edge_from_depth(zbuf, *edge_thresholds)
    return ViewBundle(
        view_id=view_id,
        camera=camera,
        depth=zbuf,
        mask=mask,
        position=pos,
        edge=edge,
        normal=normal,
    )


def render_pointcloud(
    shape: Shape,
    camera: CameraPose,
    splat_px: int = 2,
    view_id: int = 0,
    edge_thresholds: tuple[float, float] = (0.05, 0.15),
) -> ViewBundle:
    """Splat each point as a disc of radius splat_px with a per-pixel depth test.

    The position map carries the world position of the nearest (winning)
    point at each pixel, so reprojection error is bounded by the splat
    radius rather than the mesh path's sub-pixel bound. No normal map.
    """
    if splat_px < 1:
        raise ValueError(f"splat_px must be >= 1, got {splat_px}")
    _check_frustum(shape, camera)
    h, w = camera.resolution
    proj = camera.project(shape.vertices)
    # far-to-near ordering makes the last fancy-index write per pixel the
    # nearest point, resolving duplicate pixel targets deterministically
    order = np.argsort(-proj[:, 2], kind="stable")
    uu, vv, zz = proj[order].T
    ids = order
    cols = np.floor(uu).astype(np.int64)
    rows = np.floor(vv).astype(np.int64)

    zbuf = np.full((h, w), np.inf)
    pid = np.full((h, w), -1, dtype=np.int64)
    offsets = [
        (dr, dc)
        for dr in range(-splat_px, splat_px + 1)
        for dc in range(-splat_px, splat_px + 1)
        if dr * dr + dc * dc <= splat_px * splat_px
    ]
    for dr, dc in offsets:
        rr = rows + dr
        cc = cols + dc
        ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        rr, cc, zo, io = rr[ok], cc[ok], zz[ok], ids[ok]
        closer = zo < zbuf[rr, cc]
        zbuf[rr[closer], cc[closer]] = zo[closer]
        pid[rr[closer], cc[closer]] = io[closer]

    mask = pid >= 0
    pos = np.zeros((h, w, 3))
    pos[mask] = shape.vertices[pid[mask]]
    edge = edge_from_depth(zbuf, *edge_thresholds)
    return ViewBundle(
        view_id=view_id,
        camera=camera,
        depth=zbuf,
        mask=mask,
        position=pos,
        edge=edge,
        normal=None,
    )


def normalize_depth(depth: np.ndarray) -> np.ndarray:
    """Map foreground depth to [0, 1] with near=1 and far=0; background to 0.

    This relative-depth convention is what depth-conditioned generators
    expect; metric depth stays available on the ViewBundle.
    """
    out = np.zeros_like(depth, dtype=np.float64)
    fg = np.isfinite(depth)
    if not fg.any():
        return out
    near = depth[fg].min()
    far = depth[fg].max()
    # a range at roundoff scale is noise, not relief; treat as constant
    if far - near <= 1e-12 * max(abs(far), 1.0):
        out[fg] = 1.0
    else:
        out[fg] = (far - depth[fg]) / (far - near)
    return out


def edge_from_depth(depth: np.ndarray, low: float = 0.05, high: float = 0.15) -> np.ndarray:
    """Canny edges of the depth map, normalized to [0, 1] over foreground.

    Sobel gradients are scaled so a unit step responds with magnitude 1,
    making the hysteresis thresholds fractions of the depth range. The
    silhouette boundary (foreground against the background fill value 0)
    always produces a response; interior edges appear where the normalized
    depth jumps by more than the thresholds.
    """
    if not 0 <= low <= high:
        raise ValueError(f"need 0 <= low <= high, got low={low}, high={high}")
    norm = normalize_depth(depth)
    gx = ndimage.correlate(norm, _SOBEL_X, mode="nearest")
    gy = ndimage.correlate(norm, _SOBEL_Y, mode="nearest")
    mag = np.hypot(gx, gy)
    thin = _suppress_nonmaxima(mag, gx, gy)
    strong = thin >= high
    if not strong.any():
        return np.zeros(depth.shape, dtype=bool)
    weak = thin >= low
    labels, _ = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    keep = np.unique(labels[strong])
    return np.isin(labels, keep[keep > 0])


def _suppress_nonmaxima(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Thin gradient ridges to single-pixel lines along the gradient direction.

    The comparison is strict against the previous neighbor and non-strict
    against the next, so a two-pixel plateau (the typical response to a
    clean step) keeps exactly one pixel.
    """
    h, w = mag.shape
    padded = np.pad(mag, 1)

    def shifted(dr: int, dc: int) -> np.ndarray:
        return padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]

    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    b0 = (ang < 22.5) | (ang >= 157.5)   # gradient ~horizontal
    b1 = (ang >= 22.5) & (ang < 67.5)    # gradient ~down-right
    b2 = (ang >= 67.5) & (ang < 112.5)   # gradient ~vertical
    prev = np.where(
        b0, shifted(0, -1),
        np.where(b1, shifted(-1, -1), np.where(b2, shifted(-1, 0), shifted(-1, 1))),
    )
    nxt = np.where(
        b0, shifted(0, 1),
        np.where(b1, shifted(1, 1), np.where(b2, shifted(1, 0), shifted(1, -1))),
    )
    keep = (mag > prev) & (mag >= nxt) & (mag > 0)
    return np.where(keep, mag, 0.0)
