"""Multi-view feature distillation for dense 3D shape correspondence.

Render an untextured shape from many views, lift per-view image features
onto its surface points (weighted timestep aggregation, fusion, ball-query
unprojection, multi-view averaging), then match points across shapes by
cosine similarity, segment parts by clustering, and score correspondences.
"""
from .config import RunConfig
from .distiller import (
    FusionConfig,
    ManifestProvider,
    PointDescriptors,
    SyntheticProvider,
    TimestepWeights,
    aggregate_timesteps,
    aggregate_views,
    ball_query,
    distill,
    fill_uncovered,
    fuse,
    load_descriptors,
    normalize_map,
    resample_map,
    save_descriptors,
    unproject_view,
    weighted_sum,
)
from .errors import D3ffError
from .feature_store import (
    FeatureManifest,
    FeatureMap,
    ManifestView,
    load_manifest,
    read_feature_header,
    read_feature_map,
    synthetic_features,
    validate_manifest,
    write_feature_map,
    write_manifest,
)
from .matcher import (
    CorrespondenceResult,
    EvalReport,
    SegmentationResult,
    evaluate,
    kmeans_fit,
    match,
    read_ground_truth,
    segment_transfer,
    similarity_matrix,
)
from .renderer import (
    CameraPose,
    ViewBundle,
    edge_from_depth,
    normalize_depth,
    render_mesh,
    render_pointcloud,
    sample_cameras,
    vertex_normals,
    view_grid,
)
from .shape_io import (
    SamplePlan,
    Shape,
    denormalize,
    load_shape,
    normalize,
    random_sample,
    save_ply,
)
from .view_io import cached_render, export_view_bundle, load_view_bundle, render_views

__version__ = "0.1.0"

__all__ = [
    "CameraPose",
    "CorrespondenceResult",
    "D3ffError",
    "EvalReport",
    "FeatureManifest",
    "FeatureMap",
    "FusionConfig",
    "ManifestProvider",
    "ManifestView",
    "PointDescriptors",
    "RunConfig",
    "SamplePlan",
    "SegmentationResult",
    "Shape",
    "SyntheticProvider",
    "TimestepWeights",
    "ViewBundle",
    "aggregate_timesteps",
    "aggregate_views",
    "ball_query",
    "cached_render",
    "denormalize",
    "distill",
    "edge_from_depth",
    "evaluate",
    "export_view_bundle",
    "fill_uncovered",
    "fuse",
    "kmeans_fit",
    "load_descriptors",
    "load_manifest",
    "load_shape",
    "load_view_bundle",
    "match",
    "normalize",
    "normalize_depth",
    "normalize_map",
    "random_sample",
    "read_feature_header",
    "read_feature_map",
    "read_ground_truth",
    "render_mesh",
    "render_pointcloud",
    "render_views",
    "resample_map",
    "sample_cameras",
    "save_descriptors",
    "save_ply",
    "segment_transfer",
    "similarity_matrix",
    "synthetic_features",
    "unproject_view",
    "validate_manifest",
    "vertex_normals",
    "view_grid",
    "weighted_sum",
    "write_feature_map",
    "write_manifest",
]
