"""Dense pixel trajectories chained from per-frame optical flow.

Every pixel of the first frame seeds a trajectory.  A trajectory is
extended by bilinearly sampling the forward field at its current
sub-pixel position.  Interpolated tracking has one structural weakness:
a foreign flow vector under the interpolation support bleeds into the
sampled step at reduced, check-evading strength, so a path skimming a
motion discontinuity takes a blend of two motions that tracks neither
side and slowly drifts off its own.  When the support disagrees with the
blend (the consistency test applied to the disagreement), the step
therefore snaps to the flow of the pixel the path rounds to -- the
surface the path itself shows.  Backward fields are sampled with the
same suspicion (bilinear only while the support agrees, else the support
median).  A trajectory terminates when the forward/backward check flags
the pixel it rounds to, when its step fails that check at the landing,
or when it leaves the image.
After each step every pixel of the new frame is owned by exactly one
surviving trajectory (the longest one rounding there; ties go to the
smallest id); pixels left unowned seed fresh trajectories.  Losing
trajectories keep tracking, they just stop owning pixels.

Storage is flat: per-trajectory start frames and lengths index into one
packed (sum-of-lengths, 2) position buffer, plus one int32 ownership
raster per frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ArgError, FormatError
from .flow_io import FlowField

_MAGIC = b"TRJ1"


@dataclass
class ConsistencyParams:
    """Thresholds of the forward/backward occlusion test."""

    alpha: float = 0.01
    beta: float = 0.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ArgError("consistency thresholds must be non-negative")


@dataclass
class Trajectory:
    """A read-only view of one trajectory."""

    traj_id: int
    start_frame: int
    points: np.ndarray  # (length, 2) sub-pixel (x, y)

    @property
    def length(self) -> int:
        return len(self.points)

    @property
    def end_frame(self) -> int:
        return self.start_frame + self.length - 1


@dataclass
class TrajectorySet:
    """All trajectories of a sequence in packed form."""

    frame_count: int
    height: int
    width: int
    start: np.ndarray  # (T,) int32 first frame
    length: np.ndarray  # (T,) int32 number of points
    points: np.ndarray  # (sum(length), 2) float64 (x, y)
    assignment: np.ndarray  # (frame_count, height, width) int32 owner ids
    offsets: np.ndarray = field(init=False)  # (T+1,) int64 into points

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=np.int32)
        self.length = np.asarray(self.length, dtype=np.int32)
        self.points = np.asarray(self.points, dtype=np.float64)
        self.assignment = np.asarray(self.assignment, dtype=np.int32)
        if len(self.start) != len(self.length):
            raise ArgError("start/length arrays disagree")
        self.offsets = np.concatenate(
            [[0], np.cumsum(self.length.astype(np.int64))]
        )
        if self.points.shape != (int(self.offsets[-1]), 2):
            raise ArgError(
                f"points buffer has {self.points.shape}, lengths sum to {self.offsets[-1]}"
            )
        if self.assignment.shape != (self.frame_count, self.height, self.width):
            raise ArgError("assignment raster shape mismatch")

    @property
    def traj_count(self) -> int:
        return len(self.start)

    def points_of(self, i: int) -> np.ndarray:
        return self.points[self.offsets[i] : self.offsets[i + 1]]

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(i, int(self.start[i]), self.points_of(i))

    def __iter__(self):
        return (self.trajectory(i) for i in range(self.traj_count))

    def window(self, t: int, span: int):
        """Ids and positions of all trajectories alive on frames
        t .. t+span-1; positions returned as (span, N, 2)."""
        if t < 0 or t + span > self.frame_count:
            raise ArgError(f"window [{t}, {t + span}) outside sequence")
        ids = np.nonzero(
            (self.start <= t) & (self.start + self.length >= t + span)
        )[0]
        base = self.offsets[ids] + (t - self.start[ids])
        pos = np.stack([self.points[base + k] for k in range(span)])
        return ids, pos

    def validate(self) -> None:
        """Check structural invariants; raises ArgError on violation."""
        if self.traj_count == 0:
            raise ArgError("empty trajectory set")
        if (self.length < 1).any():
            raise ArgError("zero-length trajectory")
        ends = self.start + self.length
        if (self.start < 0).any() or (ends > self.frame_count).any():
            raise ArgError("trajectory outside the sequence")
        x, y = self.points[:, 0], self.points[:, 1]
        if (x < 0).any() or (x > self.width - 1).any() or (y < 0).any() or (
            y > self.height - 1
        ).any():
            raise ArgError("trajectory point outside image bounds")
        if (self.assignment < 0).any() or (self.assignment >= self.traj_count).any():
            raise ArgError("assignment raster references unknown trajectory")
        for t in range(self.frame_count):
            owners = self.assignment[t].ravel()
            alive = (self.start[owners] <= t) & (ends[owners] > t)
            if not alive.all():
                raise ArgError(f"frame {t}: owner not alive")
            at = self.offsets[owners] + (t - self.start[owners])
            px = np.rint(self.points[at, 0]).astype(np.int64)
            py = np.rint(self.points[at, 1]).astype(np.int64)
            grid = np.arange(self.height * self.width)
            if not ((py * self.width + px) == grid).all():
                raise ArgError(f"frame {t}: owner does not round to its pixel")


# ---------------------------------------------------------------------------


def _sample(channel: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear sample with edge clamping, in float64."""
    return ndimage.map_coordinates(
        channel.astype(np.float64), np.stack([y, x]), order=1, mode="nearest"
    )


def _robust_backward(bwu, bwv, x, y, params: ConsistencyParams):
    """Backward displacement at sub-pixel targets.

    Bilinear while the support agrees with the blend; otherwise the
    component-wise median of the four support vectors.  The median shrugs
    off a single junk vector instead of folding it into the sample, yet at
    an occlusion boundary it still lands between the two motions, where the
    compromise duly fails the consistency test.
    """
    bwu = np.asarray(bwu, dtype=np.float64)
    bwv = np.asarray(bwv, dtype=np.float64)
    h, w = bwu.shape
    bu = _sample(bwu, x, y)
    bv = _sample(bwv, x, y)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, w - 2)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, h - 2)
    cus, cvs = [], []
    coh = np.ones(bu.shape, dtype=bool)
    for cy, cx in ((y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)):
        cu = bwu[cy, cx]
        cv = bwv[cy, cx]
        dev = (cu - bu) ** 2 + (cv - bv) ** 2
        coh &= dev <= params.alpha * (cu**2 + cv**2 + bu**2 + bv**2) + params.beta
        cus.append(cu)
        cvs.append(cv)
    return (
        np.where(coh, bu, np.median(cus, axis=0)),
        np.where(coh, bv, np.median(cvs, axis=0)),
    )


def fb_consistency(
    fwd: FlowField, bwd: FlowField, params: ConsistencyParams | None = None
) -> np.ndarray:
    """Occlusion mask of the forward step.

    A pixel is flagged (1) when the forward displacement plus the backward
    displacement sampled at the forward target fails
    |w + w_back|^2 <= alpha * (|w|^2 + |w_back|^2) + beta,
    or when the target lies outside the image.  The backward displacement
    comes from :func:`_robust_backward`, so one junk vector under the
    target's support does not fake an occlusion.
    """
    if params is None:
        params = ConsistencyParams()
    if (fwd.width, fwd.height) != (bwd.width, bwd.height):
        raise ArgError(
            f"forward {fwd.width}x{fwd.height} vs backward {bwd.width}x{bwd.height}"
        )
    h, w = fwd.height, fwd.width
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    u = fwd.u.astype(np.float64)
    v = fwd.v.astype(np.float64)
    tx = xs + u
    ty = ys + v
    inb = (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)
    bu, bv = _robust_backward(bwd.u, bwd.v, tx.ravel(), ty.ravel(), params)
    bu = bu.reshape(h, w)
    bv = bv.reshape(h, w)
    lhs = (u + bu) ** 2 + (v + bv) ** 2
    rhs = params.alpha * (u**2 + v**2 + bu**2 + bv**2) + params.beta
    return ((lhs > rhs) | ~inb).astype(np.uint8)


def build_trajectories(
    flows_fwd, flows_bwd, params: ConsistencyParams | None = None
) -> TrajectorySet:
    """Chain dense trajectories through a flow sequence.

    ``flows_fwd[t]`` maps frame t to t+1, ``flows_bwd[t]`` maps frame t+1
    back to t; both lists must have the same, non-zero number of fields of
    identical size.
    """
    if params is None:
        params = ConsistencyParams()
    fwd = list(flows_fwd)
    bwd = list(flows_bwd)
    if len(fwd) != len(bwd):
        raise ArgError(f"{len(fwd)} forward vs {len(bwd)} backward fields")
    if not fwd:
        raise ArgError("at least one flow pair is required")
    h, w = fwd[0].height, fwd[0].width
    for f in (*fwd, *bwd):
        if (f.height, f.width) != (h, w):
            raise ArgError("all flow fields must share one size")
    F = len(fwd) + 1
    n_px = h * w

    grid = np.arange(n_px, dtype=np.int64)
    live_pos = np.column_stack([grid % w, grid // w]).astype(np.float64)
    live_ids = grid.copy()
    live_start = np.zeros(n_px, dtype=np.int64)
    next_id = n_px

    start_batches = [np.zeros(n_px, dtype=np.int64)]
    frame_ids = [live_ids.copy()]
    frame_pos = [live_pos.copy()]
    assignment = np.empty((F, h, w), dtype=np.int32)
    assignment[0] = grid.reshape(h, w).astype(np.int32)

    for t in range(F - 1):
        occ = fb_consistency(fwd[t], bwd[t], params)
        fu = fwd[t].u.astype(np.float64)
        fv = fwd[t].v.astype(np.float64)
        px, py = live_pos[:, 0], live_pos[:, 1]
        du = _sample(fu, px, py)
        dv = _sample(fv, px, py)

        # coherence of the interpolation support: the blended step must agree
        # with every flow vector feeding it (same test, disagreement as the
        # residual); a blend across a motion discontinuity tracks neither side
        x0 = np.clip(np.floor(px).astype(np.int64), 0, w - 2)
        y0 = np.clip(np.floor(py).astype(np.int64), 0, h - 2)
        coherent = np.ones(len(du), dtype=bool)
        for cy, cx in ((y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)):
            cu = fu[cy, cx]
            cv = fv[cy, cx]
            dev = (cu - du) ** 2 + (cv - dv) ** 2
            bound = params.alpha * (cu**2 + cv**2 + du**2 + dv**2) + params.beta
            coherent &= dev <= bound

        # an incoherent support falls back to the flow of the pixel the path
        # rounds to -- the surface the path itself shows -- so a boundary
        # trajectory keeps tracking its own side instead of drifting off it
        rx = np.rint(px).astype(np.int64)
        ry = np.rint(py).astype(np.int64)
        du = np.where(coherent, du, fu[ry, rx])
        dv = np.where(coherent, dv, fv[ry, rx])

        # survival: the pixel the path rounds to must pass the forward/
        # backward check; foreign support vectors are already neutralized by
        # the snap, so only the tracked surface itself can veto the step
        alive = occ[ry, rx] == 0

        nx = px + du
        ny = py + dv
        inb = alive & (nx >= 0) & (nx <= w - 1) & (ny >= 0) & (ny <= h - 1)
        pos = np.column_stack([nx[inb], ny[inb]])
        ids = live_ids[inb]
        st = live_start[inb]
        du, dv = du[inb], dv[inb]

        # the step must itself pass the consistency test at its landing
        bu, bv = _robust_backward(bwd[t].u, bwd[t].v, pos[:, 0], pos[:, 1], params)
        good = (du + bu) ** 2 + (dv + bv) ** 2 <= params.alpha * (
            du**2 + dv**2 + bu**2 + bv**2
        ) + params.beta
        pos = pos[good]
        ids = ids[good]
        st = st[good]

        # pixel ownership at frame t+1: longest trajectory, then smallest id
        keys = np.rint(pos[:, 1]).astype(np.int64) * w + np.rint(pos[:, 0]).astype(
            np.int64
        )
        lengths = t + 2 - st
        order = np.lexsort((ids, -lengths, keys))
        skeys = keys[order]
        lead = np.ones(len(order), dtype=bool)
        lead[1:] = skeys[1:] != skeys[:-1]
        winners = order[lead]

        raster = np.full(n_px, -1, dtype=np.int64)
        raster[keys[winners]] = ids[winners]
        vacant = np.nonzero(raster < 0)[0]
        new_ids = np.arange(next_id, next_id + len(vacant), dtype=np.int64)
        raster[vacant] = new_ids
        next_id += len(vacant)
        assignment[t + 1] = raster.reshape(h, w).astype(np.int32)

        new_pos = np.column_stack([vacant % w, vacant // w]).astype(np.float64)
        live_pos = np.vstack([pos, new_pos])
        live_ids = np.concatenate([ids, new_ids])
        live_start = np.concatenate([st, np.full(len(vacant), t + 1, dtype=np.int64)])
        start_batches.append(np.full(len(vacant), t + 1, dtype=np.int64))
        frame_ids.append(live_ids.copy())
        frame_pos.append(live_pos.copy())

    starts = np.concatenate(start_batches)
    T = next_id
    lengths = np.zeros(T, dtype=np.int64)
    for ids in frame_ids:
        lengths[ids] += 1
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    points = np.empty((int(offsets[-1]), 2))
    for t, (ids, pos) in enumerate(zip(frame_ids, frame_pos)):
        points[offsets[ids] + (t - starts[ids])] = pos
    return TrajectorySet(F, h, w, starts, lengths, points, assignment)


# ---------------------------------------------------------------------------
# binary serialization


def save_trajectories(path, trajset: TrajectorySet) -> None:
    """Write the packed binary trajectory file (magic ``TRJ1``)."""
    T = trajset.traj_count
    if T == 0:
        raise ArgError("refusing to save an empty trajectory set")
    header = _MAGIC + struct.pack(
        "<iii q", trajset.frame_count, trajset.height, trajset.width, T
    )
    length = trajset.length.astype(np.int64)
    offsets = trajset.offsets
    total = int(offsets[-1])

    heads = np.empty((T, 2), dtype="<i4")
    heads[:, 0] = trajset.start
    heads[:, 1] = trajset.length
    pts = np.ascontiguousarray(trajset.points, dtype="<f4")

    buf = np.empty(8 * (T + total), dtype=np.uint8)
    head_pos = 8 * (np.arange(T, dtype=np.int64) + offsets[:-1])
    cols = np.arange(8, dtype=np.int64)
    buf[head_pos[:, None] + cols] = heads.view(np.uint8).reshape(T, 8)
    traj_of = np.repeat(np.arange(T, dtype=np.int64), length)
    pt_pos = 8 * (traj_of + 1 + np.arange(total, dtype=np.int64))
    buf[pt_pos[:, None] + cols] = pts.view(np.uint8).reshape(total, 8)

    rasters = trajset.assignment.astype("<i4").tobytes()
    Path(path).write_bytes(header + buf.tobytes() + rasters)


def load_trajectories(path) -> TrajectorySet:
    """Read a file written by ``save_trajectories``."""
    raw = Path(path).read_bytes()
    if len(raw) < 24:
        raise FormatError(f"{path}: truncated header")
    if raw[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    F, h, w, T = struct.unpack_from("<iii q", raw, 4)
    if F < 1 or h < 1 or w < 1 or T < 1:
        raise FormatError(f"{path}: non-positive dimensions")
    raster_bytes = 4 * F * h * w
    section = len(raw) - 24 - raster_bytes
    if section < 0 or section % 8:
        raise FormatError(f"{path}: inconsistent payload size")
    total = section // 8 - T
    if total < T:  # every trajectory has at least one point
        raise FormatError(f"{path}: record section too small")

    lengths = np.empty(T, dtype=np.int64)
    pos = 24
    end = 24 + section
    for i in range(T):
        if pos + 8 > end:
            raise FormatError(f"{path}: truncated trajectory records")
        lengths[i] = struct.unpack_from("<i", raw, pos + 4)[0]
        if lengths[i] < 1:
            raise FormatError(f"{path}: zero-length trajectory record")
        pos += 8 + 8 * lengths[i]
    if pos != end or lengths.sum() != total:
        raise FormatError(f"{path}: record section size mismatch")

    body = np.frombuffer(raw, dtype=np.uint8, count=section, offset=24)
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    head_pos = 8 * (np.arange(T, dtype=np.int64) + offsets[:-1])
    cols = np.arange(8, dtype=np.int64)
    heads = body[head_pos[:, None] + cols].reshape(T * 2, 4).copy().view("<i4")
    starts = heads.reshape(T, 2)[:, 0].astype(np.int64)
    traj_of = np.repeat(np.arange(T, dtype=np.int64), lengths)
    pt_pos = 8 * (traj_of + 1 + np.arange(total, dtype=np.int64))
    pts = (
        body[pt_pos[:, None] + cols]
        .reshape(total * 2, 4)
        .copy()
        .view("<f4")
        .reshape(total, 2)
        .astype(np.float64)
    )
    rasters = (
        np.frombuffer(raw, dtype="<i4", count=F * h * w, offset=24 + section)
        .reshape(F, h, w)
        .copy()
    )
    return TrajectorySet(F, h, w, starts, lengths, pts, rasters)
