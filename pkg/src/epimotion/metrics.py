"""Segmentation quality metrics: region overlap (J) and boundary F.

Sequences are scored per frame against ground-truth masks, skipping the
first frame (its mask seeds the task and would score trivially), then
summarized as mean / recall (fraction of frames above 0.5) / decay
(first-quarter mean minus last-quarter mean).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ArgError
from .flow_io import read_mask


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union of two binary masks; 1.0 when both are
    empty."""
    a = np.asarray(pred) != 0
    b = np.asarray(gt) != 0
    if a.shape != b.shape:
        raise ArgError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def region_stats(j_per_frame) -> tuple:
    """(mean, recall, decay) of a per-frame score series.

    Recall counts frames strictly above 0.5.  Decay is the mean of the
    first quarter minus the mean of the last quarter (quarters by
    ``array_split``; with fewer than four frames, by as many chunks as
    there are frames).
    """
    j = np.asarray(list(j_per_frame), dtype=np.float64)
    if j.size == 0:
        raise ArgError("no per-frame scores")
    chunks = np.array_split(j, min(4, j.size))
    decay = float(chunks[0].mean() - chunks[-1].mean())
    return float(j.mean()), float((j > 0.5).mean()), decay


def _inner_boundary(mask: np.ndarray) -> np.ndarray:
    eroded = ndimage.binary_erosion(
        mask, structure=np.ones((3, 3), dtype=bool), border_value=1
    )
    return mask & ~eroded


def _disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (yy**2 + xx**2) <= r**2


def boundary_f(pred: np.ndarray, gt: np.ndarray, radius: int | None = None) -> float:
    """Boundary F-measure: precision/recall of the masks' inner boundaries
    matched within ``radius`` pixels (default 0.8% of the image diagonal,
    rounded up)."""
    a = np.asarray(pred) != 0
    b = np.asarray(gt) != 0
    if a.shape != b.shape:
        raise ArgError(f"mask shapes differ: {a.shape} vs {b.shape}")
    if radius is None:
        radius = math.ceil(0.008 * math.hypot(*a.shape))
    if radius < 1:
        raise ArgError("radius must be at least 1")
    ab = _inner_boundary(a)
    bb = _inner_boundary(b)
    na, nb = ab.sum(), bb.sum()
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    disk = _disk(radius)
    gt_zone = ndimage.binary_dilation(bb, structure=disk)
    pred_zone = ndimage.binary_dilation(ab, structure=disk)
    precision = (ab & gt_zone).sum() / na
    recall = (bb & pred_zone).sum() / nb
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


@dataclass
class EvalReport:
    """Per-frame and summary scores of one sequence."""

    frames: list  # evaluated frame names
    j: list  # region IoU per frame
    f: list  # boundary F per frame

    def summary(self) -> dict:
        jm, jr, jd = region_stats(self.j)
        fm, fr, fd = region_stats(self.f)
        return {
            "j_mean": jm, "j_recall": jr, "j_decay": jd,
            "f_mean": fm, "f_recall": fr, "f_decay": fd,
        }

    def to_json(self) -> str:
        doc = {
            "frames": self.frames,
            "j": self.j,
            "f": self.f,
            "summary": self.summary(),
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    def to_table(self) -> str:
        s = self.summary()
        rows = [
            ("metric", "mean", "recall", "decay"),
            (
                "J",
                f"{s['j_mean']:.4f}",
                f"{s['j_recall']:.4f}",
                f"{s['j_decay']:.4f}",
            ),
            (
                "F",
                f"{s['f_mean']:.4f}",
                f"{s['f_recall']:.4f}",
                f"{s['f_decay']:.4f}",
            ),
        ]
        widths = [max(len(r[c]) for r in rows) for c in range(4)]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)) for r in rows]
        return "\n".join(lines)


def evaluate_sequence(pred_dir, gt_dir) -> EvalReport:
    """Score every mask of ``pred_dir`` against the same-named ordering of
    ``gt_dir``, excluding the first frame."""
    pred_files = sorted(Path(pred_dir).glob("*.png"))
    gt_files = sorted(Path(gt_dir).glob("*.png"))
    if not pred_files:
        raise ArgError(f"no masks found in {pred_dir}")
    if len(pred_files) != len(gt_files):
        raise ArgError(
            f"{len(pred_files)} predicted vs {len(gt_files)} ground-truth masks"
        )
    if len(pred_files) < 2:
        raise ArgError("need at least two frames to evaluate")
    frames, js, fs = [], [], []
    for pf, gf in zip(pred_files[1:], gt_files[1:]):
        p = read_mask(pf)
        g = read_mask(gf)
        frames.append(pf.name)
        js.append(iou(p, g))
        fs.append(boundary_f(p, g))
    return EvalReport(frames, js, fs)
