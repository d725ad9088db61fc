"""Aggregation mathematics: timestep weighting, fusion, unprojection, pooling.

The pipeline for one shape is: per view, normalize each per-timestep feature
map, take the weighted sum over the final denoising window, fuse with the
second feature family, unproject foreground pixels into 3D, and share
features with surface points through a fixed-radius ball query; then average
each point's per-view vectors and renormalize. Everything here is pure
numpy over immutable inputs; per-view work can run in any order and the
result is order-independent within float accumulation tolerance (1e-6).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    D3ffError,
    IoError,
    ManifestError,
    ResolutionMismatch,
    ShapeMismatch,
    WindowMismatch,
)
from .feature_store import (
    FeatureManifest,
    FeatureMap,
    read_array,
    read_feature_map,
    sidecar_path,
    synthetic_features,
    write_array,
)
from .renderer import ViewBundle
from .shape_io import SamplePlan, Shape

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimestepWeights:
    """Aggregation weights over the final denoising steps.

    The window runs from step ceil(T/4) down to 0. Weights are linearly
    spaced from 0.1 at the noisiest step in the window to 1.0 at the final
    step, favoring features from the least noisy images. ``weights[i]``
    belongs to ``window[i]``.
    """

    T: int
    window: tuple[int, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.window) != len(self.weights):
            raise WindowMismatch(
                f"{len(self.window)} steps but {len(self.weights)} weights"
            )
        if not self.window:
            raise WindowMismatch("empty timestep window")

    @classmethod
    def for_steps(cls, T: int, invert: bool = False) -> "TimestepWeights":
        """Build the window ceil(T/4)..0 with linear weights 0.1..1.0.

        ``invert`` flips the ramp (1.0 at the noisiest step), exposing the
        opposite reading of the schedule for ablation.
        """
        if T < 1:
            raise ValueError(f"T must be >= 1, got {T}")
        start = -(-T // 4)
        window = tuple(range(start, -1, -1))
        m = len(window)
        if m == 1:
            weights = (1.0,)
        else:
            weights = tuple(float(x) for x in np.linspace(0.1, 1.0, m))
        if invert:
            weights = tuple(reversed(weights))
        return cls(T=T, window=window, weights=weights)

    def weight_for(self, step: int) -> float:
        try:
            return self.weights[self.window.index(step)]
        except ValueError as exc:
            raise WindowMismatch(f"step {step} not in window {self.window}") from exc


def _unit_rows(data: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """Scale each trailing-axis vector to unit norm; zero vectors stay zero."""
    norms = np.linalg.norm(data, axis=-1, keepdims=True)
    nz = norms[..., 0] > eps
    out = data.copy()
    out[nz] = data[nz] / norms[nz]
    return out


def normalize_map(fmap: FeatureMap) -> FeatureMap:
    """Scale every pixel's feature vector to unit L2 norm.

    Background pixels (all-zero vectors) are left at zero; that convention
    keeps them out of every later stage.
    """
    data = _unit_rows(fmap.data.astype(np.float64))
    return FeatureMap(
        view_id=fmap.view_id,
        kind=fmap.kind,
        data=data.astype(np.float32),
        timestep=fmap.timestep,
        camera=fmap.camera,
    )


def weighted_sum(maps: list[FeatureMap], weights: TimestepWeights) -> np.ndarray:
    """Per-pixel weighted sum over the timestep window, before renormalization.

    Maps are matched to weights by their timestep field and accumulated in
    window order regardless of list order, so results are deterministic.
    """
    if not maps:
        raise WindowMismatch("no maps to aggregate")
    shape = maps[0].shape
    by_step: dict[int, FeatureMap] = {}
    for m in maps:
        if m.shape != shape:
            raise ShapeMismatch(f"map shapes differ: {m.shape} vs {shape}")
        if m.timestep is None:
            raise WindowMismatch("aggregation input must carry a timestep")
        if m.timestep in by_step:
            raise WindowMismatch(f"duplicate timestep {m.timestep}")
        by_step[m.timestep] = m
    if set(by_step) != set(weights.window):
        raise WindowMismatch(
            f"map timesteps {sorted(by_step)} do not cover window {sorted(weights.window)}"
        )
    acc = np.zeros(shape, dtype=np.float64)
    for step, w in zip(weights.window, weights.weights):
        acc += w * by_step[step].data.astype(np.float64)
    return acc


def aggregate_timesteps(maps: list[FeatureMap], weights: TimestepWeights) -> FeatureMap:
    """Weighted sum over the denoising window, then per-pixel renormalization."""
    acc = _unit_rows(weighted_sum(maps, weights))
    first = maps[0]
    return FeatureMap(
        view_id=first.view_id,
        kind="diffusion",
        data=acc.astype(np.float32),
        timestep=None,
        camera=first.camera,
    )


@dataclass(frozen=True)
class FusionConfig:
    """How to concatenate the two feature families."""

    alpha: float = 0.5
    diff_dim: int = 1280
    dino_dim: int = 64

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.diff_dim < 1 or self.dino_dim < 1:
            raise ValueError("feature dimensions must be positive")


def fuse(diff: FeatureMap, dino: FeatureMap, cfg: FusionConfig) -> FeatureMap:
    """Concatenate [alpha * diff, (1 - alpha) * dino] per pixel, renormalized.

    Both inputs must already be per-pixel unit-normalized and share (H, W).
    """
    if diff.resolution != dino.resolution:
        raise ShapeMismatch(
            f"fusion inputs disagree on resolution: {diff.resolution} vs {dino.resolution}"
        )
    if diff.shape[2] != cfg.diff_dim or dino.shape[2] != cfg.dino_dim:
        raise ShapeMismatch(
            f"channel counts ({diff.shape[2]}, {dino.shape[2]}) do not match "
            f"config ({cfg.diff_dim}, {cfg.dino_dim})"
        )
    joined = np.concatenate(
        [
            cfg.alpha * diff.data.astype(np.float64),
            (1.0 - cfg.alpha) * dino.data.astype(np.float64),
        ],
        axis=2,
    )
    return FeatureMap(
        view_id=diff.view_id,
        kind="fused",
        data=_unit_rows(joined).astype(np.float32),
        camera=diff.camera,
    )


def ball_query(queries: np.ndarray, data: np.ndarray, r: float) -> list[np.ndarray]:
    """Indices of data points within Euclidean distance r of each query (inclusive).

    Returned index arrays are sorted ascending, so the result is a canonical
    set representation directly comparable against a brute-force oracle.
    """
    if r <= 0:
        raise ValueError(f"radius must be positive, got {r}")
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    data = np.asarray(data, dtype=np.float64)
    if len(data) == 0:
        return [np.empty(0, dtype=np.int64) for _ in range(len(queries))]
    tree = cKDTree(data)
    found = tree.query_ball_point(queries, r, return_sorted=True)
    return [np.asarray(idx, dtype=np.int64) for idx in found]


def unproject_view(
    view: ViewBundle,
    features: FeatureMap,
    points: np.ndarray,
    r: float,
    distance_weighted: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Share pixel features with the surface points around them.

    Every foreground pixel contributes its feature at its world position;
    each query point receives the mean over pixels within its radius-r ball,
    unit-normalized. Returns (vectors: P x C float64, hits: P int64) where
    hits counts contributing pixels; rows with zero hits are zero.

    ``distance_weighted`` switches the mean to weights 1 - d/r, emphasizing
    pixels near the point. Off by default.
    """
    if features.resolution != view.resolution:
        raise ResolutionMismatch(
            f"feature map is {features.resolution}, view is {view.resolution}"
        )
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n_points = len(points)
    n_channels = features.shape[2]
    # background pixels carry zero vectors and never enter the query
    pix_mask = view.mask & (np.linalg.norm(features.data, axis=2) > 0)
    vectors = np.zeros((n_points, n_channels), dtype=np.float64)
    hits = np.zeros(n_points, dtype=np.int64)
    if not pix_mask.any():
        return vectors, hits
    pix_pos = view.position[pix_mask]
    pix_feat = features.data[pix_mask].astype(np.float64)

    balls = ball_query(points, pix_pos, r)
    hits = np.array([len(b) for b in balls], dtype=np.int64)
    if hits.sum() == 0:
        return vectors, hits
    point_idx = np.repeat(np.arange(n_points), hits)
    pixel_idx = np.concatenate([b for b in balls if len(b)])
    if distance_weighted:
        d = np.linalg.norm(points[point_idx] - pix_pos[pixel_idx], axis=1)
        w = 1.0 - d / r
        np.add.at(vectors, point_idx, w[:, None] * pix_feat[pixel_idx])
        wsum = np.zeros(n_points)
        np.add.at(wsum, point_idx, w)
        degenerate = (hits > 0) & (wsum < 1e-12)  # all contributors on the boundary
        ok = (hits > 0) & ~degenerate
        vectors[ok] /= wsum[ok, None]
        if degenerate.any():
            plain = np.zeros_like(vectors)
            np.add.at(plain, point_idx, pix_feat[pixel_idx])
            vectors[degenerate] = plain[degenerate] / hits[degenerate, None]
    else:
        np.add.at(vectors, point_idx, pix_feat[pixel_idx])
        vectors[hits > 0] /= hits[hits > 0, None]
    return _unit_rows(vectors), hits


@dataclass(frozen=True, eq=False)
class PointDescriptors:
    """Per-point descriptor matrix with view-coverage bookkeeping.

    Rows with coverage 0 were never seen by any view; they are filled from
    the nearest covered point but stay flagged so evaluators can exclude
    them.
    """

    point_ids: np.ndarray    # (P,) int64 vertex indices
    matrix: np.ndarray       # (P, D) float64, unit rows where coverage > 0
    coverage: np.ndarray     # (P,) int64 contributing-view counts

    def __post_init__(self):
        if not (len(self.point_ids) == len(self.matrix) == len(self.coverage)):
            raise ShapeMismatch(
                f"inconsistent row counts: {len(self.point_ids)} ids, "
                f"{len(self.matrix)} rows, {len(self.coverage)} coverages"
            )

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def aggregate_views(
    per_view: list[tuple[np.ndarray, np.ndarray]],
    point_ids: np.ndarray | None = None,
    pool: str = "mean",
) -> PointDescriptors:
    """Reduce per-view (vector, hits) pairs into final point descriptors.

    ``mean`` averages each point's vectors over the views that saw it, then
    renormalizes; ``max`` takes the elementwise maximum instead (kept as an
    ablation; it measured worse). The reduction is accumulated in list
    order, so any permutation of the input changes results only at float
    roundoff (within 1e-6).
    """
    if pool not in ("mean", "max"):
        raise ValueError(f"unknown pool {pool!r}")
    if not per_view:
        raise ValueError("no per-view contributions")
    n_points, dim = per_view[0][0].shape
    coverage = np.zeros(n_points, dtype=np.int64)
    acc = np.full((n_points, dim), -np.inf) if pool == "max" else np.zeros((n_points, dim))
    for vec, hits in per_view:
        if vec.shape != (n_points, dim) or hits.shape != (n_points,):
            raise ShapeMismatch("per-view contributions disagree on point count or dim")
        saw = hits > 0
        coverage += saw
        if pool == "mean":
            acc[saw] += vec[saw]
        else:
            acc[saw] = np.maximum(acc[saw], vec[saw])
    covered = coverage > 0
    matrix = np.zeros((n_points, dim))
    if pool == "mean":
        matrix[covered] = acc[covered] / coverage[covered, None]
    else:
        matrix[covered] = acc[covered]
    matrix = _unit_rows(matrix)
    if point_ids is None:
        point_ids = np.arange(n_points, dtype=np.int64)
    return PointDescriptors(
        point_ids=np.asarray(point_ids, dtype=np.int64),
        matrix=matrix,
        coverage=coverage,
    )


def fill_uncovered(desc: PointDescriptors, positions: np.ndarray) -> PointDescriptors:
    """Copy each uncovered point's descriptor from its nearest covered neighbor.

    Coverage stays 0 on filled rows. Correspondence output must be total, so
    leaving self-occluded points as zero vectors (which would match
    arbitrarily) is not an option. If nothing is covered, the input is
    returned unchanged with a warning.
    """
    covered = desc.coverage > 0
    if covered.all():
        return desc
    if not covered.any():
        log.warning("no point was covered by any view; descriptors left as zeros")
        return desc
    positions = np.asarray(positions, dtype=np.float64)
    tree = cKDTree(positions[covered])
    _, nearest = tree.query(positions[~covered])
    matrix = desc.matrix.copy()
    matrix[~covered] = matrix[covered][nearest]
    return PointDescriptors(point_ids=desc.point_ids, matrix=matrix, coverage=desc.coverage)


def resample_map(fmap: FeatureMap, resolution: tuple[int, int]) -> FeatureMap:
    """Bilinearly resample to a target (H, W) and renormalize pixels.

    Feature maps from image networks are coarser than the render; bilinear
    interpolation keeps them smooth. Interpolation mixes background zeros
    into silhouette pixels, so vectors are renormalized afterward.
    """
    if fmap.resolution == tuple(resolution):
        return fmap
    data = _resize_bilinear(fmap.data, resolution)
    return FeatureMap(
        view_id=fmap.view_id,
        kind=fmap.kind,
        data=_unit_rows(data.astype(np.float64)).astype(np.float32),
        timestep=fmap.timestep,
        camera=fmap.camera,
    )


def _resize_bilinear(data: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Half-pixel-aligned bilinear resize of an (H, W, C) array."""
    h, w = data.shape[:2]
    oh, ow = out_hw
    ys = np.clip((np.arange(oh) + 0.5) * h / oh - 0.5, 0, h - 1)
    xs = np.clip((np.arange(ow) + 0.5) * w / ow - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(data.dtype)[:, None, None]
    wx = (xs - x0).astype(data.dtype)[None, :, None]
    top = data[y0][:, x0] * (1 - wx) + data[y0][:, x1] * wx
    bottom = data[y1][:, x0] * (1 - wx) + data[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def _truncate_map(fmap: FeatureMap, dim: int) -> FeatureMap:
    """Keep the first ``dim`` channels and renormalize (memory cap, off by default)."""
    if fmap.shape[2] <= dim:
        return fmap
    data = _unit_rows(fmap.data[:, :, :dim].astype(np.float64))
    return FeatureMap(
        view_id=fmap.view_id,
        kind=fmap.kind,
        data=data.astype(np.float32),
        timestep=fmap.timestep,
        camera=fmap.camera,
    )


class SyntheticProvider:
    """Per-view features from the deterministic positional encoding."""

    def __init__(self, dim: int = 48, seed: int = 0, frame: np.ndarray | None = None):
        self.dim = dim
        self.seed = seed
        self.frame = frame

    def features_for(self, view: ViewBundle) -> FeatureMap:
        return synthetic_features(view, self.dim, self.seed, frame=self.frame)


class ManifestProvider:
    """Per-view fused features assembled from files listed in a manifest.

    For each view: read the diffusion maps covering the timestep window,
    normalize each, take the weighted sum, read and normalize the companion
    map, resample both to the view resolution, and fuse. With alpha = 1 the
    companion file may be absent and the aggregated diffusion features are
    used alone.
    """

    def __init__(
        self,
        manifest: FeatureManifest,
        base_dir: str | Path,
        alpha: float = 0.5,
        invert_weights: bool = False,
    ):
        self.manifest = manifest
        self.base_dir = Path(base_dir)
        self.alpha = alpha
        self.weights = TimestepWeights.for_steps(manifest.T, invert=invert_weights)

    def features_for(self, view: ViewBundle) -> FeatureMap:
        entry = self.manifest.view_by_id(view.view_id)
        maps = []
        for step in self.weights.window:
            if step not in entry.diffusion:
                raise ManifestError(f"view {view.view_id}: no map for timestep {step}")
            maps.append(normalize_map(read_feature_map(self.base_dir / entry.diffusion[step])))
        diff = aggregate_timesteps(maps, self.weights)
        diff = resample_map(diff, view.resolution)
        if entry.dino is None:
            if self.alpha == 1.0:
                return diff
            raise ManifestError(
                f"view {view.view_id}: companion features missing but alpha={self.alpha} < 1"
            )
        dino = normalize_map(read_feature_map(self.base_dir / entry.dino))
        dino = resample_map(dino, view.resolution)
        cfg = FusionConfig(
            alpha=self.alpha, diff_dim=diff.shape[2], dino_dim=dino.shape[2]
        )
        return fuse(diff, dino, cfg)


def distill(
    shape: Shape,
    views: list[ViewBundle],
    provider,
    r_fraction: float = 0.01,
    ball_radius: float | None = None,
    pool: str = "mean",
    distance_weighted: bool = False,
    max_feature_dim: int | None = None,
    plan: SamplePlan | None = None,
) -> tuple[PointDescriptors, list[tuple[int, str]]]:
    """Run the full per-shape pipeline and return (descriptors, view failures).

    ``provider.features_for(view)`` supplies each view's feature map; maps
    not at render resolution are resampled first. The query radius is
    ``r_fraction`` of the shape's bounding-box diagonal unless
    ``ball_radius`` pins an absolute value. A failing view is recorded and
    skipped; remaining views still produce a (partial-coverage) result.
    """
    point_ids = plan.indices if plan is not None else np.arange(len(shape.vertices), dtype=np.int64)
    points = shape.vertices[point_ids]
    r = ball_radius if ball_radius is not None else r_fraction * shape.bbox_diagonal
    if r <= 0:
        raise ValueError(f"ball radius must be positive, got {r}")
    contributions: list[tuple[np.ndarray, np.ndarray]] = []
    failures: list[tuple[int, str]] = []
    for view in views:
        try:
            fmap = provider.features_for(view)
            if max_feature_dim is not None:
                fmap = _truncate_map(fmap, max_feature_dim)
            if fmap.resolution != view.resolution:
                fmap = resample_map(fmap, view.resolution)
            contributions.append(
                unproject_view(view, fmap, points, r, distance_weighted=distance_weighted)
            )
        except (D3ffError, OSError) as exc:
            failures.append((view.view_id, f"{type(exc).__name__}: {exc}"))
            log.warning("view %d failed, continuing: %s", view.view_id, exc)
    if not contributions:
        raise D3ffError(f"every view failed; first error: {failures[0][1]}")
    desc = aggregate_views(contributions, point_ids=point_ids, pool=pool)
    return fill_uncovered(desc, points), failures


def save_descriptors(
    desc: PointDescriptors,
    path: str | Path,
    shape_id: str = "",
    positions: np.ndarray | None = None,
    config: dict | None = None,
) -> None:
    """Write descriptors as a P x 1 x D binary container plus a JSON sidecar.

    The sidecar records point_ids, coverage, optional per-point positions
    (making the file self-sufficient for matching and evaluation), and a
    config echo for provenance. Output is byte-stable for identical inputs.
    """
    write_array(desc.matrix.astype(np.float32)[:, None, :], path)
    sidecar = {
        "shape_id": shape_id,
        "point_ids": [int(i) for i in desc.point_ids],
        "coverage": [int(c) for c in desc.coverage],
        "positions": None if positions is None else np.asarray(positions, dtype=float).tolist(),
        "config": config,
    }
    side = sidecar_path(path)
    try:
        with open(side, "w", encoding="ascii") as fh:
            json.dump(sidecar, fh, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise D3ffError(f"cannot write {side}: {exc}") from exc


def load_descriptors(path: str | Path) -> tuple[PointDescriptors, dict]:
    """Read descriptors and their sidecar metadata back."""
    arr = read_array(path)
    side = sidecar_path(path)
    if not side.is_file():
        raise IoError(f"missing sidecar {side}")
    try:
        meta = json.loads(side.read_text(encoding="ascii"))
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot parse sidecar {side}: {exc}") from exc
    matrix = arr[:, 0, :].astype(np.float64)
    desc = PointDescriptors(
        point_ids=np.asarray(meta["point_ids"], dtype=np.int64),
        matrix=matrix,
        coverage=np.asarray(meta["coverage"], dtype=np.int64),
    )
    return desc, meta
