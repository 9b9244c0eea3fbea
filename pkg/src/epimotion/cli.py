"""Command-line interface.

Subcommands cover each pipeline stage (track, geometry, epdist,
motion-images, saliency, eval), scene generation (synth) and the staged
end-to-end pipeline (run).  ``run`` is resumable: a stage whose outputs
are already complete is skipped, and running it equals running the
individual stage commands with the same parameters.

Exit codes: 0 success, 2 bad input (missing files, malformed data or
config), 3 estimation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .errors import (
    ArgError,
    ConfigError,
    DataError,
    DegenerateError,
    EpipoleError,
    EstimationError,
    FormatError,
    InsufficientDataError,
)
from .flow_io import read_pfm, write_mask, write_pfm
from .geometry import RansacParams
from .metrics import evaluate_sequence
from .saliency import (
    default_tau,
    ed_maps,
    export_training_set,
    motion_images,
    normalize_ed,
    threshold_saliency,
    trajectory_ed,
)
from .synth import generate
from .trajectories import (
    ConsistencyParams,
    build_trajectories,
    load_trajectories,
    save_trajectories,
)

_INPUT_ERRORS = (
    ArgError,
    ConfigError,
    FormatError,
    DataError,
    FileNotFoundError,
    NotADirectoryError,
)
_ESTIMATION_ERRORS = (
    DegenerateError,
    EpipoleError,
    EstimationError,
    InsufficientDataError,
)


def _read_mask_dir(directory, expected: int):
    from .flow_io import read_mask

    files = pl.list_frames(directory, ".png")
    if len(files) != expected:
        raise ArgError(f"{directory}: {len(files)} masks for {expected} frames")
    return [read_mask(p) for p in files]


def _read_ed_dir(directory) -> np.ndarray:
    files = pl.list_frames(directory, ".pfm")
    maps = [read_pfm(p) for p in files]
    for m in maps:
        if m.ndim != 2:
            raise ArgError(f"{directory}: ED maps must be single channel")
    return np.stack(maps)


# ---------------------------------------------------------------------------
# stage implementations (shared between single commands and cmd_run)


def _stage_track(fwd_dir, bwd_dir, out_file, consistency: ConsistencyParams):
    fwd, bwd = pl.read_flow_dirs(fwd_dir, bwd_dir)
    ts = build_trajectories(fwd, bwd, consistency)
    pl.atomic_file(out_file, lambda p: save_trajectories(p, ts))


def _stage_geometry(traj_file, fwd_dir, out_file, ransac, static_eps, threads):
    from .flow_io import read_flo

    ts = load_trajectories(traj_file)
    fwd = [read_flo(p) for p in pl.list_frames(fwd_dir, ".flo")]
    geoms = pl.estimate_sequence_geometry(ts, fwd, ransac, static_eps, threads)
    pl.save_geometry(out_file, geoms)


def _stage_epdist(traj_file, geometry_file, out_dir):
    ts = load_trajectories(traj_file)
    geoms = pl.load_geometry(geometry_file)
    maps = ed_maps(ts, trajectory_ed(ts, geoms))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for t in range(len(maps)):
        pl.atomic_file(
            out / f"{t:06d}.pfm", lambda p, m=maps[t]: write_pfm(p, m.astype(np.float32))
        )


def _stage_motion(fwd_dir, ed_dir, out_dir, dropout_fraction, seed, mask_dir=None):
    from .flow_io import read_flo

    fwd = [read_flo(p) for p in pl.list_frames(fwd_dir, ".flo")]
    maps = _read_ed_dir(ed_dir)
    if len(maps) != len(fwd) + 1:
        raise ArgError(f"{len(maps)} ED maps for {len(fwd)} flow fields")
    imgs = motion_images(fwd, normalize_ed(maps))
    masks = _read_mask_dir(mask_dir, len(imgs)) if mask_dir else None
    export_training_set(imgs, masks, out_dir, dropout_fraction, seed)


def _stage_saliency(ed_dir, out_dir, tau, min_region_px):
    maps = _read_ed_dir(ed_dir)
    if tau is None:
        tau = default_tau(maps)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for t in range(len(maps)):
        mask = threshold_saliency(maps[t], tau, min_region_px)
        pl.atomic_file(out / f"{t:06d}.png", lambda p, m=mask: write_mask(p, m))


def _stage_eval(pred_dir, gt_dir, out_file, quiet=False):
    report = evaluate_sequence(pred_dir, gt_dir)
    pl.atomic_file(out_file, lambda p: p.write_text(report.to_json()))
    if not quiet:
        print(report.to_table())


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    cfg = pl.load_scene_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    generate(cfg, out_dir=args.out)
    return 0


def cmd_track(args) -> int:
    _stage_track(
        args.fwd, args.bwd, args.out, ConsistencyParams(args.alpha, args.beta)
    )
    return 0


def cmd_geometry(args) -> int:
    ransac = RansacParams(
        inlier_threshold=args.threshold,
        max_iters=args.max_iters,
        confidence=args.confidence,
        sample_cap=args.sample_cap,
        rng_seed=args.seed,
    )
    _stage_geometry(args.traj, args.fwd, args.out, ransac, args.static_eps, args.threads)
    return 0


def cmd_epdist(args) -> int:
    _stage_epdist(args.traj, args.geometry, args.out)
    return 0


def cmd_motion_images(args) -> int:
    _stage_motion(
        args.fwd, args.ed, args.out, args.dropout_fraction, args.seed, args.masks
    )
    return 0


def cmd_saliency(args) -> int:
    _stage_saliency(args.ed, args.out, args.tau, args.min_region)
    return 0


def cmd_eval(args) -> int:
    _stage_eval(args.pred, args.gt, args.out)
    return 0


def cmd_run(args) -> int:
    cfg = pl.load_pipeline_config(args.config)
    if args.threads is not None:
        cfg.threads = args.threads
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    fwd_files = pl.list_frames(cfg.flow_fwd_dir, ".flo")
    bwd_files = pl.list_frames(cfg.flow_bwd_dir, ".flo")
    if len(fwd_files) != len(bwd_files):
        raise ArgError(
            f"{len(fwd_files)} forward vs {len(bwd_files)} backward flow files"
        )
    frames = len(fwd_files) + 1

    traj_file = out / "trajectories.trj"
    geometry_file = out / "geometry.json"
    ed_dir = out / "ed"
    motion_dir = out / "motion"
    sal_dir = out / "saliency"
    eval_file = out / "eval.json"

    def _count(directory, suffix):
        return len(list(Path(directory).glob(f"*{suffix}"))) if Path(directory).is_dir() else 0

    stages = [
        (
            "track",
            lambda: traj_file.exists(),
            lambda: _stage_track(
                cfg.flow_fwd_dir, cfg.flow_bwd_dir, traj_file, cfg.consistency
            ),
        ),
        (
            "geometry",
            lambda: geometry_file.exists(),
            lambda: _stage_geometry(
                traj_file,
                cfg.flow_fwd_dir,
                geometry_file,
                cfg.ransac,
                cfg.static_eps_px,
                cfg.threads,
            ),
        ),
        (
            "epdist",
            lambda: _count(ed_dir, ".pfm") == frames,
            lambda: _stage_epdist(traj_file, geometry_file, ed_dir),
        ),
        (
            "motion",
            lambda: (motion_dir / "manifest.json").exists()
            and _count(motion_dir, ".pfm") == frames,
            lambda: _stage_motion(
                cfg.flow_fwd_dir,
                ed_dir,
                motion_dir,
                cfg.dropout_fraction,
                cfg.seed,
                cfg.gt_dir,
            ),
        ),
        (
            "saliency",
            lambda: _count(sal_dir, ".png") == frames,
            lambda: _stage_saliency(ed_dir, sal_dir, cfg.tau, cfg.min_region_px),
        ),
    ]
    if cfg.gt_dir is not None:
        stages.append(
            (
                "eval",
                lambda: eval_file.exists(),
                lambda: _stage_eval(sal_dir, cfg.gt_dir, eval_file, quiet=True),
            )
        )

    log = {"config": str(args.config), "out_dir": str(out), "stages": []}
    for name, complete, run in stages:
        t0 = time.perf_counter()
        skipped = complete()
        if not skipped:
            run()
        log["stages"].append(
            {
                "name": name,
                "seconds": round(time.perf_counter() - t0, 6),
                "skipped": bool(skipped),
            }
        )
    # the wall-time log lives next to the artifact tree, not inside it,
    # so identical runs leave byte-identical trees
    log_path = out.parent / (out.name + ".runlog.json")
    log_path.write_text(json.dumps(log, sort_keys=True, indent=1))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="epimotion",
        description="Dense-trajectory epipolar-distance motion saliency",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--config", required=True, help="scene YAML")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track", help="build dense trajectories from flow")
    p.add_argument("--fwd", required=True, help="forward .flo directory")
    p.add_argument("--bwd", required=True, help="backward .flo directory")
    p.add_argument("--out", required=True, help="output trajectory file")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--beta", type=float, default=0.5)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("geometry", help="estimate per-triplet geometry")
    p.add_argument("--traj", required=True, help="trajectory file")
    p.add_argument("--fwd", required=True, help="forward .flo directory")
    p.add_argument("--out", required=True, help="output geometry JSON")
    p.add_argument("--threshold", type=float, default=1.0)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--confidence", type=float, default=0.99)
    p.add_argument("--sample-cap", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--static-eps", type=float, default=pl.DEFAULT_STATIC_EPS)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_geometry)

    p = sub.add_parser("epdist", help="per-frame epipolar-distance maps")
    p.add_argument("--traj", required=True)
    p.add_argument("--geometry", required=True)
    p.add_argument("--out", required=True, help="output PFM directory")
    p.set_defaults(func=cmd_epdist)

    p = sub.add_parser("motion-images", help="three-channel training images")
    p.add_argument("--fwd", required=True, help="forward .flo directory")
    p.add_argument("--ed", required=True, help="ED map PFM directory")
    p.add_argument("--out", required=True)
    p.add_argument("--dropout-fraction", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--masks", default=None, help="label mask directory (optional)")
    p.set_defaults(func=cmd_motion_images)

    p = sub.add_parser("saliency", help="threshold ED maps into masks")
    p.add_argument("--ed", required=True, help="ED map PFM directory")
    p.add_argument("--out", required=True, help="output PNG directory")
    p.add_argument(
        "--tau", type=float, default=None, help="threshold (default: 5x median ED)"
    )
    p.add_argument("--min-region", type=int, default=64)
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("eval", help="score masks against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True, help="output report JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="full staged pipeline from a config file")
    p.add_argument("--config", required=True, help="pipeline YAML")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_run)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _ESTIMATION_ERRORS as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
