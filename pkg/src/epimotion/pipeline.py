"""Sequence-level orchestration: per-triplet geometry estimation with
fallbacks, geometry serialization, config parsing and the staged
pipeline used by the command-line interface.

Every stage reads its inputs from disk and writes its outputs through
atomic renames, so a partially written file never survives and a full
run is byte-identical to running the stages one by one.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .errors import ArgError, ConfigError, EstimationError, InsufficientDataError
from .flow_io import FlowField, read_flo, write_flo
from .geometry import (
    Correspondences,
    RansacParams,
    TripletGeometry,
    detect_static_camera,
    ransac_triplet,
    static_fundamentals,
)
from .trajectories import ConsistencyParams, TrajectorySet

DEFAULT_STATIC_EPS = 0.25


def homogeneous(pos: np.ndarray) -> np.ndarray:
    """(N, 2) positions -> (N, 3) homogeneous with third coordinate 1."""
    pos = np.asarray(pos, dtype=np.float64)
    return np.column_stack([pos, np.ones(len(pos))])


# ---------------------------------------------------------------------------
# per-sequence geometry


def estimate_sequence_geometry(
    trajset: TrajectorySet,
    flows_fwd,
    params: RansacParams | None = None,
    static_eps: float = DEFAULT_STATIC_EPS,
    threads: int = 1,
) -> list:
    """One TripletGeometry per frame triplet.

    Static triplets (half the pixels still in both steps) take the fixed
    skew-matrix geometry.  Failed estimations fall back to the previous
    triplet's geometry, or to the static geometry for the first triplet.
    Each triplet gets its own seed (base seed XOR triplet index), so
    results do not depend on thread count.
    """
    if params is None:
        params = RansacParams()
    flows = list(flows_fwd)
    F = trajset.frame_count
    if len(flows) != F - 1:
        raise ArgError(f"need {F - 1} forward fields, got {len(flows)}")
    h, w = trajset.height, trajset.width

    def estimate(t):
        if detect_static_camera([flows[t], flows[t + 1]], static_eps):
            return static_fundamentals(h, w)
        ids, pos = trajset.window(t, 3)
        corrs = Correspondences(
            homogeneous(pos[0]), homogeneous(pos[1]), homogeneous(pos[2]), ids
        )
        try:
            return ransac_triplet(corrs, replace(params, rng_seed=params.rng_seed ^ t))
        except (InsufficientDataError, EstimationError):
            return None

    triplets = range(F - 2)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(estimate, triplets))
    else:
        results = [estimate(t) for t in triplets]
    for t, geom in enumerate(results):
        if geom is None:
            results[t] = results[t - 1] if t > 0 else static_fundamentals(h, w)
    return results


def save_geometry(path, geoms) -> None:
    """Dump triplet geometries as JSON (degenerate pairs as zero matrices)."""
    doc = {
        "triplets": [
            {
                "frame": t,
                "F21": g.F21.flatten().tolist(),
                "F31": g.F31.flatten().tolist(),
                "F32": g.F32.flatten().tolist(),
                "inlier_ratio": g.inlier_ratio,
                "static": bool(g.static_camera),
            }
            for t, g in enumerate(geoms)
        ]
    }
    _atomic_text(Path(path), json.dumps(doc, sort_keys=True, indent=1))


def load_geometry(path) -> list:
    doc = json.loads(Path(path).read_text())
    geoms = []
    for entry in doc["triplets"]:
        mats = [np.array(entry[k]).reshape(3, 3) for k in ("F21", "F31", "F32")]
        geoms.append(
            TripletGeometry(
                *mats,
                inlier_ratio=entry["inlier_ratio"],
                static_camera=entry["static"],
                degenerate_pairs=tuple(not m.any() for m in mats),
            )
        )
    return geoms


# ---------------------------------------------------------------------------
# configuration


@dataclass
class PipelineConfig:
    flow_fwd_dir: str
    flow_bwd_dir: str
    out_dir: str
    gt_dir: str | None = None
    seed: int = 0
    threads: int = 1
    static_eps_px: float = DEFAULT_STATIC_EPS
    tau: float | None = None  # None: 5x median of the ED maps
    min_region_px: int = 64
    dropout_fraction: float = 0.0
    consistency: ConsistencyParams = field(default_factory=ConsistencyParams)
    ransac: RansacParams = field(default_factory=RansacParams)

    def validate(self) -> None:
        for name in ("flow_fwd_dir", "flow_bwd_dir"):
            d = getattr(self, name)
            if not Path(d).is_dir():
                raise ConfigError(f"{name} does not exist: {d}")
        if self.gt_dir is not None and not Path(self.gt_dir).is_dir():
            raise ConfigError(f"gt_dir does not exist: {self.gt_dir}")
        if self.static_eps_px <= 0:
            raise ConfigError("static_eps_px must be positive")
        if self.tau is not None and self.tau < 0:
            raise ConfigError("tau must be non-negative")
        if self.min_region_px < 1:
            raise ConfigError("min_region_px must be at least 1")
        if not 0.0 <= self.dropout_fraction <= 1.0:
            raise ConfigError("dropout_fraction must lie in [0,1]")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")


def _take(d: dict, cls, context: str) -> dict:
    fields = {f for f in cls.__dataclass_fields__}
    unknown = set(d) - fields
    if unknown:
        raise ConfigError(f"unknown {context} keys: {sorted(unknown)}")
    return d


def pipeline_config_from_dict(d: dict) -> PipelineConfig:
    if not isinstance(d, dict):
        raise ConfigError("pipeline config must be a mapping")
    d = dict(d)
    cons = ConsistencyParams(**_take(d.pop("consistency", {}), ConsistencyParams, "consistency"))
    rans = RansacParams(**_take(d.pop("ransac", {}), RansacParams, "ransac"))
    for key in ("flow_fwd_dir", "flow_bwd_dir", "out_dir"):
        if key not in d:
            raise ConfigError(f"pipeline config misses required key {key!r}")
    cfg = PipelineConfig(
        **_take(d, PipelineConfig, "pipeline"),
    )
    cfg.consistency = cons
    cfg.ransac = rans
    if cfg.ransac.rng_seed == 0:
        cfg.ransac = replace(cfg.ransac, rng_seed=cfg.seed)
    return cfg


def load_pipeline_config(path) -> PipelineConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return pipeline_config_from_dict(doc)


def scene_config_from_dict(d: dict):
    from .synth import (
        BackgroundConfig,
        CameraPath,
        ForegroundPatch,
        PatchMotion,
        SceneConfig,
    )

    if not isinstance(d, dict):
        raise ConfigError("scene config must be a mapping")
    d = dict(d)
    cam = CameraPath(**_take(d.pop("camera", {}), CameraPath, "camera"))
    bg = BackgroundConfig(**_take(d.pop("background", {}), BackgroundConfig, "background"))
    patches = []
    for p in d.pop("foreground", []):
        p = dict(p)
        motion = PatchMotion(**_take(p.pop("motion", {}), PatchMotion, "motion"))
        if motion.pause is not None:
            motion.pause = tuple(motion.pause)
        patch = ForegroundPatch(**_take(p, ForegroundPatch, "foreground"))
        patch.motion = motion
        patches.append(patch)
    cfg = SceneConfig(**_take(d, SceneConfig, "scene"))
    cfg.camera = cam
    cfg.background = bg
    cfg.foreground = patches
    return cfg


def load_scene_config(path):
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return scene_config_from_dict(doc)


# ---------------------------------------------------------------------------
# staged pipeline


def _atomic_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _atomic_text(path: Path, text: str) -> None:
    _atomic_bytes(path, text.encode())


def atomic_file(path, writer) -> None:
    """Run ``writer(tmp_path)`` then atomically move the result to
    ``path``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def list_frames(directory, suffix: str) -> list:
    """Frame files of one directory in zero-padded numeric order."""
    d = Path(directory)
    if not d.is_dir():
        raise ArgError(f"not a directory: {d}")
    files = sorted(d.glob(f"*{suffix}"), key=lambda p: p.name)
    if not files:
        raise ArgError(f"no {suffix} files in {d}")
    return files


def read_flow_dirs(fwd_dir, bwd_dir):
    fwd_files = list_frames(fwd_dir, ".flo")
    bwd_files = list_frames(bwd_dir, ".flo")
    if len(fwd_files) != len(bwd_files):
        raise ArgError(
            f"{len(fwd_files)} forward vs {len(bwd_files)} backward flow files"
        )
    return [read_flo(p) for p in fwd_files], [read_flo(p) for p in bwd_files]
