"""Dense correspondence by cosine similarity, metrics, and segmentation.

Matching is the raw per-point argmax: no smoothing, no injectivity
constraint, many-to-one allowed. Evaluation uses Euclidean error against
ground-truth target positions, with the accuracy threshold expressed as a
fraction of the evaluated target set's diameter.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from .distiller import PointDescriptors
from .errors import DimMismatch, KTooLarge, MissingGroundTruth, UnreadableFile

_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class CorrespondenceResult:
    """Per-source-point assignment into the target's point set.

    ``assignment[i]`` is the target vertex id (an entry of ``target_ids``)
    whose descriptor is most similar to source point i; ``score[i]`` is the
    winning cosine similarity.
    """

    source_ids: np.ndarray   # (S,) int64
    target_ids: np.ndarray   # (T,) int64
    assignment: np.ndarray   # (S,) int64, values drawn from target_ids
    score: np.ndarray        # (S,) float64 in [-1, 1]


@dataclass(frozen=True)
class EvalReport:
    """Correspondence quality numbers for one pair."""

    err: float               # mean Euclidean distance to ground truth
    acc: dict[float, float]  # tolerance fraction -> fraction correct
    n: int                   # evaluated sample count
    excluded: int            # coverage-0 points left out (0 unless excluding)

    def to_dict(self) -> dict:
        return {
            "err": self.err,
            "acc": {f"{g:g}": v for g, v in sorted(self.acc.items())},
            "n": self.n,
            "excluded": self.excluded,
        }


@dataclass(frozen=True, eq=False)
class SegmentationResult:
    """k-means clustering of one shape's descriptors."""

    k: int
    labels: np.ndarray       # (P,) int64 in [0, k)
    centroids: np.ndarray    # (k, D) float64
    inertia_history: tuple[float, ...]


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return m / np.maximum(norms, _EPS)


def similarity_matrix(fs: PointDescriptors, ft: PointDescriptors) -> np.ndarray:
    """Cosine similarity between every source row and every target row."""
    if fs.dim != ft.dim:
        raise DimMismatch(f"descriptor dims differ: {fs.dim} vs {ft.dim}")
    return _unit_rows(fs.matrix) @ _unit_rows(ft.matrix).T


def match(fs: PointDescriptors, ft: PointDescriptors) -> CorrespondenceResult:
    """Assign each source point the most similar target point.

    Ties break toward the lowest target index, which makes the output
    deterministic; ties have measure zero on real descriptors.
    """
    sim = similarity_matrix(fs, ft)
    cols = np.argmax(sim, axis=1)  # first maximum = lowest index on ties
    rows = np.arange(len(cols))
    return CorrespondenceResult(
        source_ids=fs.point_ids.copy(),
        target_ids=ft.point_ids.copy(),
        assignment=ft.point_ids[cols],
        score=sim[rows, cols],
    )


def read_ground_truth(path: str | Path) -> dict[int, int]:
    """Parse a ground-truth file: one `source_index target_index` pair per line, 0-based."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="ascii").splitlines()
    except OSError as exc:
        raise UnreadableFile(f"cannot read {path}: {exc}") from exc
    gt: dict[int, int] = {}
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) != 2:
            raise UnreadableFile(f"{path}:{lineno}: expected two indices, got {line!r}")
        try:
            gt[int(parts[0])] = int(parts[1])
        except ValueError as exc:
            raise UnreadableFile(f"{path}:{lineno}: bad index in {line!r}") from exc
    return gt


def evaluate(
    result: CorrespondenceResult,
    gt: dict[int, int],
    target_positions: np.ndarray,
    tolerances: tuple[float, ...] = (0.01, 0.05, 0.10, 0.20),
    coverage: np.ndarray | None = None,
    exclude_uncovered: bool = False,
) -> EvalReport:
    """Score a correspondence against ground truth.

    err is the mean Euclidean distance between predicted and ground-truth
    target positions. acc(g) is the fraction of predictions strictly within
    g * d, where d is the exact diameter of the evaluated target point set
    (the candidate set of the match, i.e. the downsampled target).

    ``target_positions`` is indexed by raw vertex id and must cover both
    predicted and ground-truth ids. ``coverage`` (aligned with the source
    rows) together with ``exclude_uncovered`` drops points no view ever saw;
    by default they are kept, since they were filled from their nearest
    covered neighbor.
    """
    target_positions = np.asarray(target_positions, dtype=np.float64)
    keep = np.ones(len(result.source_ids), dtype=bool)
    excluded = 0
    if coverage is not None:
        uncovered = np.asarray(coverage) == 0
        excluded = int(uncovered.sum())
        if exclude_uncovered:
            keep = ~uncovered
    src = result.source_ids[keep]
    pred = result.assignment[keep]
    if len(src) == 0:
        raise MissingGroundTruth("no points left to evaluate")
    missing = [int(s) for s in src if int(s) not in gt]
    if missing:
        raise MissingGroundTruth(
            f"{len(missing)} evaluated source ids lack ground truth, e.g. {missing[:3]}"
        )
    gt_ids = np.array([gt[int(s)] for s in src], dtype=np.int64)
    hi = max(int(pred.max()), int(gt_ids.max()), int(result.target_ids.max()))
    if hi >= len(target_positions):
        raise MissingGroundTruth(
            f"target positions cover ids < {len(target_positions)}, need {hi}"
        )
    distances = np.linalg.norm(
        target_positions[pred] - target_positions[gt_ids], axis=1
    )
    evaluated_target = target_positions[result.target_ids]
    d = float(pdist(evaluated_target).max()) if len(evaluated_target) > 1 else 0.0
    acc = {float(g): float(np.mean(distances < g * d)) for g in tolerances}
    return EvalReport(err=float(distances.mean()), acc=acc, n=int(len(src)), excluded=excluded)


def kmeans_fit(
    desc: PointDescriptors,
    k: int,
    seed: int = 0,
    iters: int = 100,
) -> SegmentationResult:
    """Lloyd's algorithm with seeded k-means++ initialization.

    Deterministic for a fixed seed. Converges when no label changes or the
    iteration budget runs out; an emptied cluster is reseeded to the point
    farthest from its assigned centroid. Returned centroids are the means of
    their final members, and the recorded inertia never increases.
    """
    points = desc.matrix
    n = len(points)
    if k < 1 or k > n:
        raise KTooLarge(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    centroids = points[_kmeans_pp(points, k, rng)].copy()
    labels = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    for _ in range(max(1, iters)):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        best = d2[np.arange(n), new_labels]
        # the pool masks already-stolen points so two empty clusters never
        # reseed to the same index
        reseed_pool = best.copy()
        for c in range(k):
            if not (new_labels == c).any():
                far = int(np.argmax(reseed_pool))
                new_labels[far] = c
                best[far] = 0.0
                reseed_pool[far] = -np.inf
        history.append(float(best.sum()))
        converged = (new_labels == labels).all()
        labels = new_labels
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = points[members].mean(axis=0)
        if converged:
            break
    return SegmentationResult(
        k=k, labels=labels, centroids=centroids, inertia_history=tuple(history)
    )


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centroids proportionally to squared distance."""
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:  # all remaining points coincide with a centroid
            candidates = np.setdiff1d(np.arange(n), np.array(chosen))
            nxt = int(candidates[0]) if len(candidates) else chosen[-1]
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((points - points[nxt]) ** 2).sum(axis=1))
    return np.array(chosen, dtype=np.int64)


def segment_transfer(centroids: np.ndarray, desc: PointDescriptors) -> np.ndarray:
    """Label each point by its nearest centroid in cosine distance.

    Centroids fit on one shape segment another this way; cosine distance
    matches the metric used for correspondence.
    """
    centroids = np.asarray(centroids, dtype=np.float64)
    if centroids.ndim != 2 or centroids.shape[1] != desc.dim:
        raise DimMismatch(
            f"centroid dim {centroids.shape[-1] if centroids.ndim == 2 else '?'} "
            f"does not match descriptors ({desc.dim})"
        )
    if len(desc.matrix) == 0:
        return np.empty(0, dtype=np.int64)
    sims = _unit_rows(desc.matrix) @ _unit_rows(centroids).T
    return np.argmax(sims, axis=1).astype(np.int64)  # max cosine = min cosine distance
