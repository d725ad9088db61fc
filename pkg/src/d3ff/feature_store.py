"""Feature-map wire format, manifests, and the synthetic feature provider.

Binary layout of a feature-map file (magic "D3FF"):

    bytes 0-3    ASCII "D3FF"
    bytes 4-7    format version, u32 little-endian, currently 1
    bytes 8-19   H, W, C, each u32 little-endian
    bytes 20-23  dtype code, u32 little-endian; 0 = float32 little-endian
    bytes 24-    H*W*C float32 little-endian, row-major, channel-last

Every file has a JSON sidecar `<stem>.json` carrying view_id, kind,
timestep (null unless a single diffusion step), H, W, C, and the camera
pose. One file per (view, kind, timestep): writers can stream results and
readers can process views independently; a manifest stitches them together.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    InvalidFeatureMap,
    IoError,
    ManifestError,
    TruncatedPayload,
    VersionUnsupported,
)
from .renderer import ViewBundle

MAGIC = b"D3FF"
FORMAT_VERSION = 1
DTYPE_FLOAT32_LE = 0
_HEADER = struct.Struct("<4s5I")

KINDS = ("diffusion", "dino", "fused", "synthetic", "position")


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """A dense H x W x C feature image for one view.

    ``timestep`` identifies a single denoising step and is only meaningful
    for diffusion maps; aggregated diffusion maps carry timestep None.
    ``camera`` is pose metadata for the sidecar (theta_deg, phi_deg,
    distance, fov_y_deg); the map's own H and W may be coarser than the
    render resolution, so no image geometry is implied.
    """

    view_id: int
    kind: str
    data: np.ndarray                    # (H, W, C) float32
    timestep: int | None = None
    camera: dict | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidFeatureMap(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        if self.data.ndim != 3:
            raise InvalidFeatureMap(f"data must be (H, W, C), got shape {self.data.shape}")
        if min(self.data.shape) < 1:
            raise InvalidFeatureMap(f"H, W, C must be positive, got {self.data.shape}")
        if self.data.dtype != np.float32:
            object.__setattr__(self, "data", self.data.astype(np.float32))
        if not np.isfinite(self.data).all():
            raise InvalidFeatureMap("data contains non-finite values")
        if self.timestep is not None and self.kind != "diffusion":
            raise InvalidFeatureMap(f"timestep is only valid for diffusion maps, kind={self.kind!r}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def resolution(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".json")


def write_feature_map(fmap: FeatureMap, path: str | Path) -> None:
    """Write a feature map plus its JSON sidecar; round trip is byte exact."""
    path = Path(path)
    h, w, c = fmap.shape
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, h, w, c, DTYPE_FLOAT32_LE)
    payload = np.ascontiguousarray(fmap.data, dtype="<f4").tobytes()
    sidecar = {
        "view_id": fmap.view_id,
        "kind": fmap.kind,
        "timestep": fmap.timestep,
        "H": h,
        "W": w,
        "C": c,
        "camera": fmap.camera,
    }
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
        with open(sidecar_path(path), "w", encoding="ascii") as fh:
            json.dump(sidecar, fh, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_feature_header(path: str | Path) -> tuple[int, int, int]:
    """Validate the binary header and payload length; return (H, W, C)."""
    path = Path(path)
    try:
        size = path.stat().st_size
        with open(path, "rb") as fh:
            head = fh.read(_HEADER.size)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(head) < _HEADER.size:
        raise TruncatedPayload(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, h, w, c, dtype_code = _HEADER.unpack(head)
    if magic != MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"{path}: version {version} unsupported (expected {FORMAT_VERSION})")
    if dtype_code != DTYPE_FLOAT32_LE:
        raise VersionUnsupported(f"{path}: unknown dtype code {dtype_code}")
    expected = _HEADER.size + h * w * c * 4
    if size != expected:
        raise TruncatedPayload(
            f"{path}: header claims {h}x{w}x{c} float32 ({expected} bytes), file has {size}"
        )
    return h, w, c


def read_feature_map(path: str | Path) -> FeatureMap:
    """Read and validate one feature map; requires the JSON sidecar."""
    path = Path(path)
    h, w, c = read_feature_header(path)
    side = sidecar_path(path)
    if not side.is_file():
        raise IoError(f"missing sidecar {side}")
    try:
        meta = json.loads(side.read_text(encoding="ascii"))
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot parse sidecar {side}: {exc}") from exc
    try:
        with open(path, "rb") as fh:
            fh.seek(_HEADER.size)
            data = np.frombuffer(fh.read(), dtype="<f4").reshape(h, w, c)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    camera = meta.get("camera")
    timestep = meta.get("timestep")
    return FeatureMap(
        view_id=int(meta.get("view_id", 0)),
        kind=str(meta.get("kind", "fused")),
        data=data.copy(),
        timestep=None if timestep is None else int(timestep),
        camera=camera,
    )


def write_array(arr: np.ndarray, path: str | Path) -> None:
    """Write a bare (H, W, C) float32 array in the binary container, no sidecar.

    Descriptor exports reuse the container with their own sidecar schema.
    """
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim != 3:
        raise InvalidFeatureMap(f"expected (H, W, C), got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise InvalidFeatureMap("array contains non-finite values")
    h, w, c = arr.shape
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, h, w, c, DTYPE_FLOAT32_LE))
            fh.write(arr.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_array(path: str | Path) -> np.ndarray:
    """Read a bare (H, W, C) float32 array from the binary container."""
    h, w, c = read_feature_header(path)
    try:
        with open(path, "rb") as fh:
            fh.seek(_HEADER.size)
            return np.frombuffer(fh.read(), dtype="<f4").reshape(h, w, c).copy()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def synthetic_features(view: ViewBundle, dim: int, seed: int,
                       frame: np.ndarray | None = None) -> FeatureMap:
    """Deterministic geometry-equivariant features standing in for a real extractor.

    Each foreground pixel's feature is a unit-normalized sinusoidal encoding
    of its world-space position: dim // 6 frequency octaves per axis
    (frequencies pi * 2^k), sine and cosine per octave, phases drawn once
    from the seed, zero-padded up to dim. Two pixels imaging the same world
    point get the same feature no matter the view, which is exactly the
    property the unprojection stage relies on. Background pixels are zero.

    ``frame`` optionally rotates positions into a canonical frame before
    encoding, letting callers compensate a known rigid motion of the shape.
    """
    if dim < 8 or dim % 2:
        raise ValueError(f"dim must be even and >= 8, got {dim}")
    octaves = dim // 6
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=(3, octaves))
    freqs = math.pi * np.exp2(np.arange(octaves))

    h, w = view.resolution
    data = np.zeros((h, w, dim), dtype=np.float64)
    pts = view.position[view.mask]
    if frame is not None:
        pts = pts @ np.asarray(frame, dtype=np.float64).T
    if len(pts):
        # (n, 3, octaves) phase arguments; sin/cos interleaved per axis-octave
        args = pts[:, :, None] * freqs[None, None, :] + phases[None, :, :]
        enc = np.stack([np.sin(args), np.cos(args)], axis=-1).reshape(len(pts), -1)
        enc /= math.sqrt(3 * octaves)  # sin^2 + cos^2 = 1 per octave, norm is constant
        data[view.mask, : 6 * octaves] = enc
    return FeatureMap(
        view_id=view.view_id,
        kind="synthetic",
        data=data.astype(np.float32),
        camera=view.camera.to_dict(),
    )


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True, eq=False)
class ManifestView:
    """File locations for one view's feature maps; paths are manifest-relative."""

    view_id: int
    camera: dict
    diffusion: dict[int, str]        # timestep -> path
    dino: str | None = None
    view_dir: str | None = None


@dataclass(frozen=True, eq=False)
class FeatureManifest:
    """Index of every feature file produced for one shape."""

    shape_id: str
    extractor: str
    T: int
    views: tuple[ManifestView, ...]
    weights_spec: str = "linear 0.1..1.0 over final ceil(T/4)..0 steps"

    def view_by_id(self, view_id: int) -> ManifestView:
        for v in self.views:
            if v.view_id == view_id:
                return v
        raise ManifestError(f"manifest has no view {view_id}")


def write_manifest(manifest: FeatureManifest, path: str | Path) -> None:
    doc = {
        "shape_id": manifest.shape_id,
        "extractor": manifest.extractor,
        "T": manifest.T,
        "weights_spec": manifest.weights_spec,
        "views": [
            {
                "view_id": v.view_id,
                "camera": v.camera,
                "view_dir": v.view_dir,
                "diffusion": {str(t): p for t, p in sorted(v.diffusion.items())},
                "dino": v.dino,
            }
            for v in manifest.views
        ],
    }
    try:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write manifest {path}: {exc}") from exc


def load_manifest(path: str | Path) -> FeatureManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="ascii"))
    except (OSError, ValueError) as exc:
        raise ManifestError(f"cannot parse manifest {path}: {exc}") from exc
    try:
        views = tuple(
            ManifestView(
                view_id=int(v["view_id"]),
                camera=dict(v["camera"]),
                diffusion={int(t): str(p) for t, p in v.get("diffusion", {}).items()},
                dino=v.get("dino"),
                view_dir=v.get("view_dir"),
            )
            for v in doc["views"]
        )
        return FeatureManifest(
            shape_id=str(doc["shape_id"]),
            extractor=str(doc.get("extractor", "unknown")),
            T=int(doc["T"]),
            views=views,
            weights_spec=str(doc.get("weights_spec", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"manifest {path} is malformed: {exc}") from exc


def validate_manifest(manifest: FeatureManifest, base_dir: str | Path) -> None:
    """Check existence, header validity, id uniqueness, and per-kind resolution."""
    base = Path(base_dir)
    ids = [v.view_id for v in manifest.views]
    if len(set(ids)) != len(ids):
        raise ManifestError("duplicate view_ids in manifest")
    resolution_by_kind: dict[str, tuple[int, int]] = {}
    for view in manifest.views:
        paths = [("diffusion", p) for p in view.diffusion.values()]
        if view.dino is not None:
            paths.append(("dino", view.dino))
        for kind, rel in paths:
            p = base / rel
            if not p.is_file():
                raise ManifestError(f"view {view.view_id}: missing file {p}")
            try:
                h, w, _ = read_feature_header(p)
            except (IoError, BadMagic, VersionUnsupported, TruncatedPayload) as exc:
                raise ManifestError(f"view {view.view_id}: {exc}") from exc
            expected = resolution_by_kind.setdefault(kind, (h, w))
            if (h, w) != expected:
                raise ManifestError(
                    f"view {view.view_id}: {kind} resolution {h}x{w} differs from "
                    f"{expected[0]}x{expected[1]} used elsewhere"
                )
