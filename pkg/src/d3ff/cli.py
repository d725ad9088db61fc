"""Command-line surface: render, distill, match, eval-suite, segment, export-ply.

Every command is deterministic under a fixed seed and config, prints a JSON
result to stdout, and on failure prints {"error": <class>, "message": ...}
to stderr and exits nonzero. Output files are written atomically (temp file
plus rename). Set DIFF3F_CACHE_DIR to reuse rendered views across runs.
"""
from __future__ import annotations

import argparse
import colorsys
import csv
import dataclasses
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import distiller, matcher, shape_io, view_io
from .config import RunConfig
from .errors import D3ffError, MissingGroundTruth, UnreadableFile
from .feature_store import load_manifest, validate_manifest

_CONFIG_FLAGS: list[tuple[str, type | None, str]] = [
    # (field, argparse type, help)  booleans get paired --x/--no-x flags
    ("n_views", int, "number of cameras on the view sphere"),
    ("resolution", int, "square render resolution in pixels"),
    ("distance", float, "camera distance in normalized units"),
    ("fov_y_deg", float, "vertical field of view in degrees"),
    ("r_fraction", float, "ball radius as a fraction of the bbox diagonal"),
    ("ball_radius", float, "absolute ball radius override"),
    ("alpha", float, "fusion weight on the diffusion family"),
    ("t_steps", int, "total inference steps T"),
    ("invert_weights", None, "flip the timestep weight ramp"),
    ("provider", str, "feature provider: synthetic or manifest"),
    ("synthetic_dim", int, "synthetic feature dimension"),
    ("max_feature_dim", int, "truncate per-pixel features to this many channels"),
    ("seed", int, "seed for sampling and synthetic features"),
    ("sample_count", int, "per-shape evaluation sample size"),
    ("tolerances", str, "comma-separated accuracy tolerance fractions"),
    ("pool", str, "view pooling: mean or max"),
    ("distance_weighted", None, "weight ball contributions by 1 - d/r"),
    ("exclude_uncovered", None, "drop coverage-0 points from metrics"),
    ("splat_px", int, "point splat radius in pixels"),
    ("canny_low", float, "weak edge threshold on normalized depth"),
    ("canny_high", float, "strong edge threshold on normalized depth"),
    ("jobs", int, "parallel workers for eval-suite"),
]


def _config_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, default=None, help="JSON config file")
    for field, argtype, helptext in _CONFIG_FLAGS:
        flag = "--" + field.replace("_", "-")
        if argtype is None:
            p.add_argument(flag, action=argparse.BooleanOptionalAction, default=None, help=helptext)
        else:
            p.add_argument(flag, type=argtype, default=None, help=helptext)
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file (or defaults) overridden by any explicitly given flags."""
    base = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    for field, _, _ in _CONFIG_FLAGS:
        value = getattr(args, field, None)
        if value is None:
            continue
        if field == "tolerances":
            value = tuple(float(t) for t in str(value).split(","))
        overrides[field] = value
    return dataclasses.replace(base, **overrides) if overrides else base


def _write_text_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="ascii")
    tmp.replace(path)


def _dump(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _emit(doc: dict, out: Path | None = None) -> None:
    text = _dump(doc)
    if out is not None:
        _write_text_atomic(out, text)
    sys.stdout.write(text)


def _cache_dir() -> str | None:
    return os.environ.get("DIFF3F_CACHE_DIR") or None


def _load_normalized(path: str | Path, kind: str = "auto") -> shape_io.Shape:
    return shape_io.normalize(shape_io.load_shape(path, kind=kind))


def _provider_for(cfg: RunConfig, manifest_path: Path | None):
    if cfg.provider == "synthetic":
        return distiller.SyntheticProvider(dim=cfg.synthetic_dim, seed=cfg.seed)
    if manifest_path is None:
        raise UnreadableFile("provider=manifest requires --manifest")
    manifest = load_manifest(manifest_path)
    validate_manifest(manifest, manifest_path.parent)
    return distiller.ManifestProvider(
        manifest,
        base_dir=manifest_path.parent,
        alpha=cfg.alpha,
        invert_weights=cfg.invert_weights,
    )


def _distill_shape(
    shape: shape_io.Shape, cfg: RunConfig, provider, sample: int = 0
) -> tuple[distiller.PointDescriptors, list, np.ndarray]:
    """Render (or reuse cached) views and distill; returns (desc, failures, positions)."""
    views = view_io.cached_render(shape, cfg, _cache_dir())
    plan = None
    if sample:
        plan = shape_io.random_sample(shape, min(sample, len(shape.vertices)), cfg.seed)
    desc, failures = distiller.distill(
        shape,
        views,
        provider,
        r_fraction=cfg.r_fraction,
        ball_radius=cfg.ball_radius,
        pool=cfg.pool,
        distance_weighted=cfg.distance_weighted,
        max_feature_dim=cfg.max_feature_dim,
        plan=plan,
    )
    return desc, failures, shape.vertices[desc.point_ids]


# ---------------------------------------------------------------------------
# commands


def cmd_render(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    shape = _load_normalized(args.shape, kind=args.kind)
    views = view_io.cached_render(shape, cfg, _cache_dir())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for view in views:
        view_io.export_view_bundle(view, out / f"view_{view.view_id:03d}")
    _write_text_atomic(
        out / "run.json",
        _dump(
            {
                "shape": str(args.shape),
                "shape_id": Path(args.shape).stem,
                "n_views": len(views),
                "normalization": {
                    "centroid": shape.centroid.tolist(),
                    "scale": shape.scale,
                },
                "config": cfg.to_dict(),
            }
        ),
    )
    _emit({"out": str(out), "views": len(views), "config": cfg.to_dict()})
    return 0


def cmd_distill(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if args.manifest is not None:
        cfg = dataclasses.replace(cfg, provider="manifest")
    shape = _load_normalized(args.shape, kind=args.kind)
    provider = _provider_for(cfg, args.manifest)
    desc, failures, positions = _distill_shape(shape, cfg, provider, sample=args.sample)
    out = Path(args.out)
    distiller.save_descriptors(
        desc,
        out,
        shape_id=Path(args.shape).stem,
        positions=positions,
        config=cfg.to_dict(),
    )
    _emit(
        {
            "out": str(out),
            "points": int(len(desc.point_ids)),
            "dim": int(desc.dim),
            "covered": int((desc.coverage > 0).sum()),
            "failures": [{"view_id": v, "message": m} for v, m in failures],
            "config": cfg.to_dict(),
        }
    )
    return 0


def _target_positions_for_eval(
    args: argparse.Namespace, meta: dict
) -> np.ndarray:
    """Vertex-id-indexed positions for the evaluated target."""
    if args.target_shape is not None:
        return _load_normalized(args.target_shape).vertices
    point_ids = meta.get("point_ids") or []
    positions = meta.get("positions")
    if positions is not None and list(point_ids) == list(range(len(positions))):
        return np.asarray(positions, dtype=np.float64)
    raise MissingGroundTruth(
        "descriptor sidecar does not cover every vertex id; pass --target-shape"
    )


def cmd_match(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    fs, _ = distiller.load_descriptors(args.source)
    ft, meta_t = distiller.load_descriptors(args.target)
    result = matcher.match(fs, ft)
    doc = {
        "source": str(args.source),
        "target": str(args.target),
        "source_ids": result.source_ids.tolist(),
        "target_ids": result.target_ids.tolist(),
        "assignment": result.assignment.tolist(),
        "score": [round(float(s), 9) for s in result.score],
        "config": cfg.to_dict(),
    }
    if args.gt is not None:
        gt = matcher.read_ground_truth(args.gt)
        positions = _target_positions_for_eval(args, meta_t)
        report = matcher.evaluate(
            result,
            gt,
            positions,
            tolerances=cfg.tolerances,
            coverage=fs.coverage,
            exclude_uncovered=cfg.exclude_uncovered,
        )
        doc["eval"] = report.to_dict()
    _emit(doc, out=Path(args.out) if args.out else None)
    return 0


def _parse_pairs(path: Path) -> list[tuple[str, str, str | None]]:
    try:
        lines = path.read_text(encoding="ascii").splitlines()
    except OSError as exc:
        raise UnreadableFile(f"cannot read pair list {path}: {exc}") from exc
    base = path.parent
    pairs = []
    for lineno, raw in enumerate(lines, start=1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) not in (2, 3):
            raise UnreadableFile(f"{path}:{lineno}: expected `source target [gt]`")
        resolved = [str(p if Path(p).is_absolute() else base / p) for p in parts]
        pairs.append((resolved[0], resolved[1], resolved[2] if len(parts) == 3 else None))
    return pairs


def _eval_pair(cfg_dict: dict, index: int, source: str, target: str, gt_path: str | None) -> dict:
    """Run one pair end to end; self-pairs without a gt file use the identity map."""
    cfg = RunConfig.from_dict(cfg_dict)
    row = {"pair": index, "source": source, "target": target, "status": "ok", "message": ""}
    try:
        src = _load_normalized(source)
        tgt = src if source == target else _load_normalized(target)
        provider = distiller.SyntheticProvider(dim=cfg.synthetic_dim, seed=cfg.seed)
        fs, _, _ = _distill_shape(src, cfg, provider, sample=cfg.sample_count)
        ft, _, _ = _distill_shape(tgt, cfg, provider, sample=cfg.sample_count)
        result = matcher.match(fs, ft)
        if gt_path is not None:
            gt = matcher.read_ground_truth(gt_path)
        elif source == target:
            gt = {int(i): int(i) for i in fs.point_ids}
        else:
            gt = None
        if gt is not None:
            report = matcher.evaluate(
                result,
                gt,
                tgt.vertices,
                tolerances=cfg.tolerances,
                coverage=fs.coverage,
                exclude_uncovered=cfg.exclude_uncovered,
            )
            row.update(report.to_dict())
    except (D3ffError, OSError, ValueError) as exc:
        row["status"] = "failed"
        row["message"] = f"{type(exc).__name__}: {exc}"
    return row


def cmd_eval_suite(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    pairs = _parse_pairs(Path(args.pairs))
    jobs = [(cfg.to_dict(), i, s, t, g) for i, (s, t, g) in enumerate(pairs)]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(_eval_pair_star, jobs))
    else:
        rows = [_eval_pair(*job) for job in jobs]

    ok = [r for r in rows if r["status"] == "ok" and "err" in r]
    summary: dict = {"pairs": len(rows), "failed": sum(r["status"] == "failed" for r in rows)}
    if ok:
        summary["err"] = float(np.mean([r["err"] for r in ok]))
        summary["acc"] = {
            g: float(np.mean([r["acc"][g] for r in ok])) for g in ok[0]["acc"]
        }
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_text_atomic(
        out_dir / "results.json",
        _dump({"rows": rows, "summary": summary, "config": cfg.to_dict()}),
    )
    _write_text_atomic(out_dir / "results.csv", _rows_to_csv(rows, summary, cfg))
    _emit({"out": str(out_dir), "summary": summary})
    return 0


def _eval_pair_star(job: tuple) -> dict:
    return _eval_pair(*job)


def _rows_to_csv(rows: list[dict], summary: dict, cfg: RunConfig) -> str:
    gammas = [f"{g:g}" for g in cfg.tolerances]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["pair", "source", "target", "status", "err"]
                    + [f"acc_{g}" for g in gammas] + ["n", "excluded", "message"])
    for r in rows:
        acc = r.get("acc", {})
        writer.writerow(
            [r["pair"], r["source"], r["target"], r["status"], r.get("err", "")]
            + [acc.get(g, "") for g in gammas]
            + [r.get("n", ""), r.get("excluded", ""), r.get("message", "")]
        )
    acc = summary.get("acc", {})
    writer.writerow(
        ["summary", "", "", f"{summary.get('failed', 0)} failed", summary.get("err", "")]
        + [acc.get(g, "") for g in gammas]
        + ["", "", ""]
    )
    return buf.getvalue()


def cmd_segment(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    desc, _ = distiller.load_descriptors(args.descriptors)
    seg = matcher.kmeans_fit(desc, k=args.k, seed=cfg.seed, iters=args.iters)
    doc = {
        "k": seg.k,
        "point_ids": desc.point_ids.tolist(),
        "labels": seg.labels.tolist(),
        "centroids": [[round(float(x), 9) for x in c] for c in seg.centroids],
        "inertia_history": [round(float(v), 9) for v in seg.inertia_history],
        "config": cfg.to_dict(),
    }
    _emit(doc, out=Path(args.out) if args.out else None)
    if args.transfer_to is not None:
        other, _ = distiller.load_descriptors(args.transfer_to)
        labels = matcher.segment_transfer(seg.centroids, other)
        transfer_doc = {
            "k": seg.k,
            "point_ids": other.point_ids.tolist(),
            "labels": labels.tolist(),
            "source_descriptors": str(args.descriptors),
            "config": cfg.to_dict(),
        }
        _emit(transfer_doc, out=Path(args.transfer_out) if args.transfer_out else None)
    return 0


def _label_palette(k: int) -> np.ndarray:
    """k visually distinct colors, deterministic, as uint8 rows."""
    hues = [(i / max(k, 1)) % 1.0 for i in range(k)]
    rgb = [colorsys.hsv_to_rgb(h, 0.85, 0.95) for h in hues]
    return (np.array(rgb) * 255).astype(np.uint8)


def cmd_export_ply(args: argparse.Namespace) -> int:
    shape = shape_io.load_shape(args.shape)
    colors = None
    if args.labels is not None:
        doc = json.loads(Path(args.labels).read_text(encoding="ascii"))
        palette = _label_palette(int(doc["k"]))
        colors = np.full((len(shape.vertices), 3), 128, dtype=np.uint8)
        for pid, label in zip(doc["point_ids"], doc["labels"]):
            colors[int(pid)] = palette[int(label)]
    elif args.correspondence is not None:
        if args.source_shape is None:
            raise UnreadableFile("--correspondence coloring requires --source-shape")
        doc = json.loads(Path(args.correspondence).read_text(encoding="ascii"))
        source = shape_io.load_shape(args.source_shape)
        source_colors = _position_colors(source.vertices)
        colors = np.full((len(shape.vertices), 3), 128, dtype=np.uint8)
        for sid, tid in zip(doc["source_ids"], doc["assignment"]):
            colors[int(tid)] = source_colors[int(sid)]
    elif args.color_by_position:
        colors = _position_colors(shape.vertices)
    shape_io.save_ply(shape, args.out, binary=args.binary, colors=colors)
    _emit({"out": str(args.out), "vertices": len(shape.vertices), "colored": colors is not None})
    return 0


def _position_colors(vertices: np.ndarray) -> np.ndarray:
    lo = vertices.min(axis=0)
    extent = np.maximum(vertices.max(axis=0) - lo, 1e-12)
    return np.round((vertices - lo) / extent * 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# parser wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="d3ff",
        description="Multi-view feature distillation for dense 3D shape correspondence.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    shared = _config_parser()

    p = sub.add_parser("render", parents=[shared], help="render view bundles for a shape")
    p.add_argument("--shape", required=True, help="OBJ, PLY, or OFF file")
    p.add_argument("--kind", choices=("auto", "mesh", "pointcloud"), default="auto")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("distill", parents=[shared], help="compute per-point descriptors")
    p.add_argument("--shape", required=True)
    p.add_argument("--kind", choices=("auto", "mesh", "pointcloud"), default="auto")
    p.add_argument("--manifest", type=Path, default=None, help="feature manifest (real extractor)")
    p.add_argument("--sample", type=int, default=0, help="descriptor point count, 0 = all vertices")
    p.add_argument("--out", required=True, help="descriptor output file")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("match", parents=[shared], help="match source descriptors to target")
    p.add_argument("--source", required=True, help="source descriptor file")
    p.add_argument("--target", required=True, help="target descriptor file")
    p.add_argument("--gt", type=Path, default=None, help="ground-truth `src tgt` index pairs")
    p.add_argument("--target-shape", type=Path, default=None,
                   help="target shape file for evaluation positions")
    p.add_argument("--out", type=Path, default=None, help="write the JSON result here too")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval-suite", parents=[shared], help="run a pair list end to end")
    p.add_argument("--pairs", required=True, help="file with `source target [gt]` lines")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval_suite)

    p = sub.add_parser("segment", parents=[shared], help="k-means part segmentation")
    p.add_argument("--descriptors", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--transfer-to", type=Path, default=None,
                   help="descriptors of another shape to label with the fitted centroids")
    p.add_argument("--transfer-out", type=Path, default=None)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("export-ply", parents=[shared], help="write a (colored) PLY")
    p.add_argument("--shape", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--binary", action="store_true")
    p.add_argument("--color-by-position", action="store_true")
    p.add_argument("--labels", type=Path, default=None, help="segmentation JSON")
    p.add_argument("--correspondence", type=Path, default=None, help="match JSON")
    p.add_argument("--source-shape", type=Path, default=None)
    p.set_defaults(func=cmd_export_ply)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (D3ffError, ValueError, OSError) as exc:
        sys.stderr.write(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n"
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
