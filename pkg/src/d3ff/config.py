"""Run configuration shared by the CLI and the pipeline drivers.

Defaults mirror the pipeline's standard operating point: 100 views, 512 px
renders, camera distance 2.5 with a 50 degree vertical field of view, query
radius 1% of the bounding-box diagonal, fusion weight 0.5, 30 inference
steps, and the 1/5/10/20% accuracy tolerance grid.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import UnreadableFile


@dataclass(frozen=True)
class RunConfig:
    n_views: int = 100
    resolution: int = 512              # square renders
    distance: float = 2.5              # camera distance, normalized units
    fov_y_deg: float = 50.0
    r_fraction: float = 0.01           # ball radius as a fraction of bbox diagonal
    ball_radius: float | None = None   # absolute override; pins r across reposed shapes
    alpha: float = 0.5                 # fusion weight on the diffusion family
    t_steps: int = 30                  # total inference steps T
    invert_weights: bool = False       # flip the timestep ramp (ablation)
    provider: str = "synthetic"        # synthetic | manifest
    synthetic_dim: int = 48
    max_feature_dim: int | None = None
    seed: int = 0
    sample_count: int = 1024           # per-shape evaluation sample size
    tolerances: tuple[float, ...] = (0.01, 0.05, 0.10, 0.20)
    pool: str = "mean"                 # mean | max
    distance_weighted: bool = False
    exclude_uncovered: bool = False
    splat_px: int = 2
    canny_low: float = 0.05
    canny_high: float = 0.15
    jobs: int = 1

    def __post_init__(self):
        if self.n_views < 1:
            raise ValueError("n_views must be >= 1")
        if self.resolution < 64:
            raise ValueError("resolution must be >= 64")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.r_fraction <= 0 and self.ball_radius is None:
            raise ValueError("r_fraction must be positive")
        if self.provider not in ("synthetic", "manifest"):
            raise ValueError(f"unknown provider {self.provider!r}")
        if self.pool not in ("mean", "max"):
            raise ValueError(f"unknown pool {self.pool!r}")
        if self.t_steps < 1:
            raise ValueError("t_steps must be >= 1")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        object.__setattr__(self, "tolerances", tuple(float(g) for g in self.tolerances))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tolerances"] = list(self.tolerances)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if "tolerances" in d:
            d = dict(d)
            d["tolerances"] = tuple(d["tolerances"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            return cls.from_json(Path(path).read_text(encoding="ascii"))
        except OSError as exc:
            raise UnreadableFile(f"cannot read config {path}: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="ascii")
