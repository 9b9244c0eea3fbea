"""From triplet geometry to per-pixel motion saliency.

Each trajectory gets one score: the mean of its summed six-way epipolar
distances over every frame triplet it fully spans.  Scores are spread
onto pixels through the per-frame ownership rasters, normalized, stacked
with the flow into three-channel motion images, and thresholded into
binary saliency masks.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ArgError
from .flow_io import write_mask, write_pfm
from .geometry import TripletGeometry, _pair_distances
from .trajectories import TrajectorySet


@dataclass
class TrajectoryED:
    """Per-trajectory epipolar-distance scores."""

    values: np.ndarray  # (T,) float64, 0 where undefined
    defined: np.ndarray  # (T,) bool


def _homog(pos: np.ndarray) -> np.ndarray:
    """(N, 2) pixel positions -> (N, 3) with third coordinate exactly 1."""
    return np.column_stack([pos, np.ones(len(pos))])


def trajectory_ed(trajset: TrajectorySet, geoms) -> TrajectoryED:
    """Score every trajectory against the per-triplet geometry.

    ``geoms`` must hold one TripletGeometry per frame triplet (F-2 of
    them).  A trajectory spanning no triplet but covering one frame pair
    falls back to half the summed two-way distance of that pair; single
    point trajectories stay undefined.
    """
    geoms = list(geoms)
    F = trajset.frame_count
    if len(geoms) != F - 2:
        raise ArgError(f"expected {F - 2} triplet geometries, got {len(geoms)}")
    T = trajset.traj_count
    sums = np.zeros(T)
    counts = np.zeros(T, dtype=np.int64)
    for t in range(F - 2):
        ids, pos = trajset.window(t, 3)
        if len(ids) == 0:
            continue
        d = _triplet_batch(geoms[t], pos)
        sums[ids] += d
        counts[ids] += 1
    values = np.zeros(T)
    covered = counts > 0
    values[covered] = sums[covered] / counts[covered]

    # pair-only trajectories: halve the two-way distance of the one pair
    pair_only = np.nonzero((trajset.length == 2) & ~covered)[0]
    for s in np.unique(trajset.start[pair_only]):
        ids = pair_only[trajset.start[pair_only] == s]
        base = trajset.offsets[ids]
        xa = _homog(trajset.points[base])
        xb = _homog(trajset.points[base + 1])
        if s <= F - 3:  # frames (s, s+1) are pair (1,2) of triplet s
            geom, F_ab, flag = geoms[s], geoms[s].F21, geoms[s].degenerate_pairs[0]
        else:  # the final pair is pair (2,3) of the last triplet
            geom, F_ab, flag = geoms[-1], geoms[-1].F32, geoms[-1].degenerate_pairs[2]
        if not flag:
            values[ids] = _pair_distances(F_ab, xa, xb) / 2.0
    defined = covered | (trajset.length == 2)
    return TrajectoryED(values, defined)


def _triplet_batch(geom: TripletGeometry, pos: np.ndarray) -> np.ndarray:
    """Summed six-way distances for a (3, N, 2) position window."""
    d = np.zeros(pos.shape[1])
    x = [_homog(pos[k]) for k in range(3)]
    pairs = (
        (geom.F21, x[0], x[1], geom.degenerate_pairs[0]),
        (geom.F31, x[0], x[2], geom.degenerate_pairs[1]),
        (geom.F32, x[1], x[2], geom.degenerate_pairs[2]),
    )
    for F_ab, xa, xb, degenerate in pairs:
        if not degenerate:
            d += _pair_distances(F_ab, xa, xb)
    return d


# ---------------------------------------------------------------------------
# rasters


def _median_fill(vals: np.ndarray, have: np.ndarray) -> np.ndarray:
    """Fill undefined pixels with the median of defined 3x3 neighbours,
    repeating until everything is defined."""
    out = np.where(have, vals, np.nan)
    h, w = out.shape
    while np.isnan(out).any():
        p = np.pad(out, 1, constant_values=np.nan)
        stack = np.stack(
            [p[dy : dy + h, dx : dx + w] for dy in range(3) for dx in range(3)]
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            med = np.nanmedian(stack, axis=0)
        fill = np.isnan(out) & ~np.isnan(med)
        if not fill.any():  # nothing defined anywhere: fall back to zero
            return np.where(np.isnan(out), 0.0, out)
        out[fill] = med[fill]
    return out


def ed_maps(trajset: TrajectorySet, trajed: TrajectoryED) -> np.ndarray:
    """Per-frame ED rasters (F, h, w): every pixel takes the score of the
    trajectory that owns it; pixels owned by undefined trajectories are
    median-filled from their neighbourhood."""
    F = trajset.frame_count
    out = np.empty((F, trajset.height, trajset.width))
    for t in range(F):
        own = trajset.assignment[t]
        out[t] = _median_fill(trajed.values[own], trajed.defined[own])
    return out


def default_tau(maps: np.ndarray) -> float:
    """Baseline threshold: five times the sequence-wide median ED."""
    return 5.0 * float(np.median(np.asarray(maps)))


def normalize_ed(maps: np.ndarray, percentile: float = 99.0) -> np.ndarray:
    """Scale by the sequence-wide percentile and clamp to [0, 1]."""
    arr = np.asarray(maps, dtype=np.float64)
    if not 0 < percentile <= 100:
        raise ArgError("percentile must lie in (0, 100]")
    p = float(np.percentile(arr, percentile))
    if p <= 0.0:
        return (arr > 0).astype(np.float64)
    return np.clip(arr / p, 0.0, 1.0)


def motion_images(flows_fwd, norm_maps: np.ndarray) -> list:
    """Stack (u, v, normalized ED) per frame; the last frame reuses the
    final flow field."""
    flows = list(flows_fwd)
    maps = np.asarray(norm_maps)
    F = len(maps)
    if len(flows) != F - 1:
        raise ArgError(f"need {F - 1} flow fields for {F} frames, got {len(flows)}")
    out = []
    for t in range(F):
        f = flows[min(t, F - 2)]
        out.append(
            np.stack(
                [f.u, f.v, maps[t].astype(np.float32)], axis=-1
            ).astype(np.float32)
        )
    return out


def input_dropout(img: np.ndarray, mode: str, rng) -> np.ndarray:
    """Perturb the ED channel of one motion image: ``zero`` blanks it,
    ``noise`` replaces it with uniform [0, 1) samples."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ArgError(f"motion images are (h,w,3), got {img.shape}")
    out = img.copy()
    if mode == "zero":
        out[:, :, 2] = 0.0
    elif mode == "noise":
        out[:, :, 2] = rng.random(img.shape[:2]).astype(img.dtype)
    else:
        raise ArgError(f"unknown dropout mode {mode!r}")
    return out


def export_training_set(
    motion_imgs,
    masks,
    out_dir,
    dropout_fraction: float = 0.2,
    seed: int = 0,
) -> dict:
    """Write motion images (PFM) plus label masks (PNG) with the ED
    channel perturbed on a seeded random subset of frames.

    ceil(dropout_fraction * F) frames are chosen; the first half of them
    (rounding up) get zero mode, the rest noise mode.  Returns the
    manifest, which is also written as ``manifest.json``.
    """
    imgs = list(motion_imgs)
    F = len(imgs)
    if F == 0:
        raise ArgError("no motion images to export")
    if masks is not None and len(masks) != F:
        raise ArgError(f"{len(masks)} masks for {F} frames")
    if not 0.0 <= dropout_fraction <= 1.0:
        raise ArgError("dropout_fraction must lie in [0,1]")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    n = math.ceil(dropout_fraction * F)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    chosen = np.sort(rng.choice(F, size=n, replace=False)) if n else np.array([], int)
    modes = {}
    for k, t in enumerate(chosen):
        modes[int(t)] = "zero" if k < (n + 1) // 2 else "noise"

    def _atomic(path, writer):
        tmp = path.with_name(path.name + ".tmp")
        writer(tmp)
        os.replace(tmp, path)

    entries = []
    for t, img in enumerate(imgs):
        mode = modes.get(t)
        if mode is not None:
            frame_rng = np.random.default_rng(np.random.SeedSequence((seed, 1, t)))
            img = input_dropout(img, mode, frame_rng)
        name = f"{t:06d}.pfm"
        _atomic(out / name, lambda p, img=img: write_pfm(p, img))
        if masks is not None:
            _atomic(out / f"{t:06d}.png", lambda p, m=masks[t]: write_mask(p, m))
        entries.append({"index": t, "file": name, "dropout": mode})
    manifest = {
        "dropout_fraction": dropout_fraction,
        "seed": seed,
        "frames": entries,
    }
    text = json.dumps(manifest, sort_keys=True, indent=1)
    _atomic(out / "manifest.json", lambda p: p.write_text(text))
    return manifest


# ---------------------------------------------------------------------------
# thresholding


def threshold_saliency(ed_map: np.ndarray, tau: float, min_region_px: int = 1):
    """Binary saliency: ED > tau, minus connected components (8-way)
    smaller than ``min_region_px``, then one 3x3 morphological closing
    computed as on an infinite empty canvas."""
    if tau < 0:
        raise ArgError("tau must be non-negative")
    if min_region_px < 1:
        raise ArgError("min_region_px must be at least 1")
    mask = np.asarray(ed_map) > tau
    if min_region_px > 1 and mask.any():
        labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
        sizes = np.bincount(labels.ravel(), minlength=n + 1)
        keep = sizes >= min_region_px
        keep[0] = False
        mask = keep[labels]
    padded = np.pad(mask, 2)
    padded = ndimage.binary_dilation(padded, structure=np.ones((3, 3), dtype=bool))
    padded = ndimage.binary_erosion(padded, structure=np.ones((3, 3), dtype=bool))
    return padded[2:-2, 2:-2].astype(np.uint8)
