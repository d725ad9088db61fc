"""Load, normalize, sample, and write 3D shapes.

Supported formats: OBJ (``v``/``f`` records only), PLY (ascii and
binary_little_endian), and OFF. Texture and normal records are ignored;
non-manifold meshes are accepted verbatim and never repaired.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CountTooLarge,
    DegenerateShape,
    EmptyShape,
    MalformedGeometry,
    UnreadableFile,
)

_PLY_DTYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass(frozen=True, eq=False)
class Shape:
    """A mesh or point cloud in a single coordinate frame.

    ``centroid`` and ``scale`` record the inverse of the normalization that
    produced this shape: ``original = vertices * scale + centroid``. Freshly
    loaded shapes carry the identity transform.
    """

    vertices: np.ndarray                  # (N, 3) float64
    faces: np.ndarray | None = None       # (F, 3) int64, or None for clouds
    centroid: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    @property
    def normalization(self) -> tuple[np.ndarray, float]:
        return self.centroid, self.scale

    @property
    def bbox_diagonal(self) -> float:
        """Euclidean length of the axis-aligned bounding-box diagonal."""
        if len(self.vertices) == 0:
            return 0.0
        extent = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(extent))

    def is_mesh(self) -> bool:
        return self.faces is not None and len(self.faces) > 0


@dataclass(frozen=True, eq=False)
class SamplePlan:
    """A reproducible subset of vertex indices."""

    indices: np.ndarray  # unique vertex indices
    seed: int


def load_shape(path: str | Path, kind: str = "auto") -> Shape:
    """Read a shape from an OBJ, PLY, or OFF file.

    ``kind`` may be ``auto``, ``mesh``, or ``pointcloud``; ``pointcloud``
    drops any faces the file carries.
    """
    if kind not in ("auto", "mesh", "pointcloud"):
        raise ValueError(f"unknown kind {kind!r}")
    path = Path(path)
    if not path.is_file():
        raise UnreadableFile(f"no such file: {path}")
    suffix = path.suffix.lower()
    if suffix == ".obj":
        vertices, polygons = _load_obj(path)
    elif suffix == ".ply":
        vertices, polygons = _load_ply(path)
    elif suffix == ".off":
        vertices, polygons = _load_off(path)
    else:
        raise UnreadableFile(f"unsupported extension {suffix!r} for {path}")

    if len(vertices) == 0:
        raise EmptyShape(f"{path} contains no vertices")
    vertices = np.asarray(vertices, dtype=np.float64)
    if not np.isfinite(vertices).all():
        raise MalformedGeometry(f"{path} contains non-finite coordinates")

    faces = None
    if polygons and kind != "pointcloud":
        faces = _triangulate(polygons, len(vertices), path)
    return Shape(vertices=vertices, faces=faces)


def normalize(shape: Shape) -> Shape:
    """Center at the origin and scale the longest bounding-box edge to 1.

    The returned shape's ``centroid``/``scale`` map its coordinates back to
    the input's frame. Idempotent up to floating-point roundoff.
    """
    v = shape.vertices
    if len(v) == 0:
        raise EmptyShape("cannot normalize a shape with no vertices")
    if not np.isfinite(v).all():
        raise MalformedGeometry("cannot normalize non-finite coordinates")
    centroid = v.mean(axis=0)
    centered = v - centroid
    scale = float((centered.max(axis=0) - centered.min(axis=0)).max())
    if scale <= 0.0:
        raise DegenerateShape("all vertices coincide; bounding box has zero extent")
    return Shape(
        vertices=centered / scale,
        faces=shape.faces,
        centroid=centroid,
        scale=scale,
    )


def denormalize(shape: Shape) -> np.ndarray:
    """Apply the stored inverse transform, recovering pre-normalization coordinates."""
    return shape.vertices * shape.scale + shape.centroid


def random_sample(shape: Shape, count: int, seed: int) -> SamplePlan:
    """Sample ``count`` distinct vertex indices uniformly, deterministically in ``seed``."""
    n = len(shape.vertices)
    if not 1 <= count <= n:
        raise CountTooLarge(f"count {count} outside [1, {n}]")
    rng = np.random.default_rng(seed)
    indices = rng.choice(n, size=count, replace=False).astype(np.int64)
    return SamplePlan(indices=indices, seed=seed)


def save_ply(
    shape: Shape,
    path: str | Path,
    binary: bool = False,
    colors: np.ndarray | None = None,
) -> None:
    """Write vertices (+faces, +optional uchar r/g/b colors) as PLY.

    Binary files use float32 little-endian coordinates; ascii files keep
    enough digits for 1e-6 round trips.
    """
    path = Path(path)
    v = np.asarray(shape.vertices, dtype=np.float32)
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8)
        if colors.shape != (len(v), 3):
            raise ValueError("colors must be (N, 3) uint8")
    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {len(v)}"]
    header += [f"property float {axis}" for axis in "xyz"]
    if colors is not None:
        header += [f"property uchar {c}" for c in ("red", "green", "blue")]
    faces = shape.faces if shape.is_mesh() else None
    if faces is not None:
        header += [
            f"element face {len(faces)}",
            "property list uchar int vertex_indices",
        ]
    header.append("end_header")

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            if colors is None:
                fh.write(v.astype("<f4").tobytes())
            else:
                row = np.dtype([("xyz", "<f4", 3), ("rgb", "u1", 3)])
                data = np.empty(len(v), dtype=row)
                data["xyz"] = v
                data["rgb"] = colors
                fh.write(data.tobytes())
            if faces is not None:
                for f in faces:
                    fh.write(struct.pack("<B3i", 3, *(int(i) for i in f)))
        else:
            for i, (x, y, z) in enumerate(v):
                line = f"{x:.9g} {y:.9g} {z:.9g}"
                if colors is not None:
                    line += " {} {} {}".format(*colors[i])
                fh.write((line + "\n").encode("ascii"))
            if faces is not None:
                for f in faces:
                    fh.write(f"3 {f[0]} {f[1]} {f[2]}\n".encode("ascii"))


# ---------------------------------------------------------------------------
# format readers


def _triangulate(polygons: list[list[int]], n_vertices: int, path: Path) -> np.ndarray:
    """Fan-triangulate polygons, validating indices and dropping degenerates."""
    triangles = []
    for poly in polygons:
        for idx in poly:
            if not 0 <= idx < n_vertices:
                raise MalformedGeometry(
                    f"{path}: face index {idx} out of range [0, {n_vertices})"
                )
        if len(poly) < 3:
            continue
        for a, b in zip(poly[1:-1], poly[2:]):
            if poly[0] != a and a != b and b != poly[0]:
                triangles.append((poly[0], a, b))
    if not triangles:
        return np.empty((0, 3), dtype=np.int64)
    return np.asarray(triangles, dtype=np.int64)


def _load_obj(path: Path) -> tuple[list, list]:
    vertices: list[tuple[float, float, float]] = []
    polygons: list[list[int]] = []
    try:
        text = path.read_text(encoding="utf-8", errors="replace")
    except OSError as exc:
        raise UnreadableFile(f"cannot read {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise UnreadableFile(f"{path}:{lineno}: vertex record too short")
            try:
                vertices.append(tuple(float(p) for p in parts[1:4]))
            except ValueError as exc:
                raise UnreadableFile(f"{path}:{lineno}: bad vertex: {raw!r}") from exc
        elif tag == "f":
            poly = []
            for token in parts[1:]:
                head = token.split("/")[0]
                try:
                    idx = int(head)
                except ValueError as exc:
                    raise UnreadableFile(f"{path}:{lineno}: bad face token {token!r}") from exc
                if idx == 0:
                    raise MalformedGeometry(f"{path}:{lineno}: OBJ indices are 1-based")
                # negative indices are relative to the vertices seen so far
                poly.append(idx - 1 if idx > 0 else len(vertices) + idx)
            polygons.append(poly)
        # all other record types (vt, vn, usemtl, ...) are ignored
    return vertices, polygons


def _load_off(path: Path) -> tuple[list, list]:
    try:
        tokens_by_line = [
            line.split("#")[0].split()
            for line in path.read_text(encoding="utf-8", errors="replace").splitlines()
        ]
    except OSError as exc:
        raise UnreadableFile(f"cannot read {path}: {exc}") from exc
    tokens = [t for line in tokens_by_line for t in line]
    if not tokens or tokens[0] != "OFF":
        raise UnreadableFile(f"{path}: missing OFF header")
    cursor = 1
    try:
        nv, nf = int(tokens[cursor]), int(tokens[cursor + 1])
        cursor += 3  # vertex count, face count, edge count
        vertices = []
        for _ in range(nv):
            vertices.append(tuple(float(t) for t in tokens[cursor:cursor + 3]))
            cursor += 3
        polygons = []
        for _ in range(nf):
            k = int(tokens[cursor])
            poly = [int(t) for t in tokens[cursor + 1:cursor + 1 + k]]
            if len(poly) != k:
                raise UnreadableFile(f"{path}: truncated face record")
            polygons.append(poly)
            cursor += 1 + k
    except (ValueError, IndexError) as exc:
        raise UnreadableFile(f"{path}: malformed OFF data: {exc}") from exc
    return vertices, polygons


def _load_ply(path: Path) -> tuple[list, list]:
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise UnreadableFile(f"cannot read {path}: {exc}") from exc
    end = blob.find(b"end_header")
    if not blob.startswith(b"ply") or end < 0:
        raise UnreadableFile(f"{path}: not a PLY file")
    end = blob.index(b"\n", end) + 1
    header_lines = blob[:end].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements: list[dict] = []
    for line in header_lines:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append({"name": parts[1], "count": int(parts[2]), "props": []})
        elif parts[0] == "property" and elements:
            if parts[1] == "list":
                elements[-1]["props"].append(("list", parts[2], parts[3], parts[4]))
            else:
                elements[-1]["props"].append(("scalar", parts[1], parts[2]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise UnreadableFile(f"{path}: unsupported PLY format {fmt!r}")

    if fmt == "ascii":
        body_tokens = blob[end:].decode("ascii", errors="replace").split()
        return _parse_ply_ascii(elements, body_tokens, path)
    return _parse_ply_binary(elements, blob[end:], path)


def _parse_ply_ascii(elements, tokens, path) -> tuple[list, list]:
    vertices, polygons = [], []
    cursor = 0
    try:
        for elem in elements:
            for _ in range(elem["count"]):
                values = {}
                for prop in elem["props"]:
                    if prop[0] == "list":
                        k = int(tokens[cursor])
                        cursor += 1
                        values[prop[3]] = [int(t) for t in tokens[cursor:cursor + k]]
                        cursor += k
                    else:
                        values[prop[2]] = float(tokens[cursor])
                        cursor += 1
                _collect_ply_row(elem["name"], values, vertices, polygons)
    except (ValueError, IndexError) as exc:
        raise UnreadableFile(f"{path}: malformed PLY body: {exc}") from exc
    return vertices, polygons


def _parse_ply_binary(elements, body: bytes, path) -> tuple[list, list]:
    vertices, polygons = [], []
    offset = 0
    for elem in elements:
        has_list = any(p[0] == "list" for p in elem["props"])
        if not has_list:
            np_dtype = np.dtype(
                [(p[2], "<" + _ply_np_type(p[1], path)) for p in elem["props"]]
            )
            nbytes = np_dtype.itemsize * elem["count"]
            if offset + nbytes > len(body):
                raise UnreadableFile(f"{path}: truncated PLY payload")
            rows = np.frombuffer(body, dtype=np_dtype, count=elem["count"], offset=offset)
            offset += nbytes
            if elem["name"] == "vertex":
                names = rows.dtype.names
                if not all(axis in names for axis in "xyz"):
                    raise UnreadableFile(f"{path}: vertex element lacks x/y/z")
                vertices.extend(
                    zip(
                        rows["x"].astype(float),
                        rows["y"].astype(float),
                        rows["z"].astype(float),
                    )
                )
            continue
        for _ in range(elem["count"]):
            values = {}
            for prop in elem["props"]:
                if prop[0] == "list":
                    count_t = "<" + _ply_np_type(prop[1], path)
                    idx_t = "<" + _ply_np_type(prop[2], path)
                    k = int(np.frombuffer(body, count_t, count=1, offset=offset)[0])
                    offset += np.dtype(count_t).itemsize
                    idx = np.frombuffer(body, idx_t, count=k, offset=offset)
                    offset += np.dtype(idx_t).itemsize * k
                    values[prop[3]] = [int(i) for i in idx]
                else:
                    scalar_t = "<" + _ply_np_type(prop[1], path)
                    values[prop[2]] = float(np.frombuffer(body, scalar_t, count=1, offset=offset)[0])
                    offset += np.dtype(scalar_t).itemsize
            _collect_ply_row(elem["name"], values, vertices, polygons)
    return vertices, polygons


def _ply_np_type(name: str, path) -> str:
    try:
        return _PLY_DTYPES[name]
    except KeyError as exc:
        raise UnreadableFile(f"{path}: unknown PLY property type {name!r}") from exc


def _collect_ply_row(element: str, values: dict, vertices: list, polygons: list) -> None:
    if element == "vertex":
        try:
            vertices.append((values["x"], values["y"], values["z"]))
        except KeyError as exc:
            raise UnreadableFile("vertex element lacks x/y/z") from exc
    elif element == "face":
        for key in ("vertex_indices", "vertex_index"):
            if key in values:
                polygons.append(values[key])
                break
