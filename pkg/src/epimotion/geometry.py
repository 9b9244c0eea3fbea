"""Three-view rigid geometry: minimal six-point solver, robust triplet
estimation, and point-to-epipolar-line distances.

A frame triplet's rigid geometry is summarized by three fundamental
matrices (F21, F31, F32).  A point triplet (x1, x2, x3) tracked across
the three frames is scored by the sum of its six point-to-line distances
(both directions of each pair); rigid points score near zero.

The minimal solver recovers the cameras of a triplet from six point
correspondences.  Each view is mapped so the first four points become a
canonical basis; in that frame the cameras take a reduced three-parameter
form and the roles of points and cameras can be exchanged.  The remaining
two points then act as a camera pair observing the three reduced-camera
parameter vectors, whose "fundamental matrix" has zero diagonal, zero
entry sum, and zero determinant.  Intersecting those constraints yields a
cubic, hence at most three real solutions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ArgError,
    DegenerateError,
    EpipoleError,
    EstimationError,
    InsufficientDataError,
)

# index order of the six off-diagonal entries of the dual matrix
_OFFDIAG = ((0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1))


# ---------------------------------------------------------------------------
# containers


@dataclass
class Correspondence3:
    """One point tracked across the three frames of a triplet."""

    x1: np.ndarray  # (3,) homogeneous, third coordinate 1
    x2: np.ndarray
    x3: np.ndarray
    traj_id: int = -1


@dataclass
class Correspondences:
    """Column-stacked point triplets; the array form of ``Correspondence3``."""

    x1: np.ndarray  # (N, 3)
    x2: np.ndarray
    x3: np.ndarray
    traj_ids: np.ndarray  # (N,)

    def __post_init__(self):
        self.x1 = np.asarray(self.x1, dtype=np.float64)
        self.x2 = np.asarray(self.x2, dtype=np.float64)
        self.x3 = np.asarray(self.x3, dtype=np.float64)
        self.traj_ids = np.asarray(self.traj_ids, dtype=np.int64)
        n = len(self.traj_ids)
        for a in (self.x1, self.x2, self.x3):
            if a.shape != (n, 3):
                raise ArgError(f"correspondence arrays must be (N,3), got {a.shape}")

    @classmethod
    def from_records(cls, records) -> "Correspondences":
        records = list(records)
        if not records:
            return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
        return cls(
            np.stack([r.x1 for r in records]),
            np.stack([r.x2 for r in records]),
            np.stack([r.x3 for r in records]),
            np.array([r.traj_id for r in records]),
        )

    def __len__(self) -> int:
        return len(self.traj_ids)


@dataclass
class TripletGeometry:
    """Pairwise epipolar geometry of one frame triplet.

    F21 maps frame-1 points to lines in frame 2 (x2' F21 x1 = 0); F31 and
    F32 likewise for pairs (1,3) and (2,3).  A pair whose cameras coincide
    carries no epipolar constraint and is flagged degenerate; its matrix is
    stored as zeros and it contributes nothing to distances.
    """

    F21: np.ndarray
    F31: np.ndarray
    F32: np.ndarray
    inlier_ratio: float = 1.0
    static_camera: bool = False
    degenerate_pairs: tuple = (False, False, False)

    def __post_init__(self):
        self.F21 = np.asarray(self.F21, dtype=np.float64)
        self.F31 = np.asarray(self.F31, dtype=np.float64)
        self.F32 = np.asarray(self.F32, dtype=np.float64)
        for F in (self.F21, self.F31, self.F32):
            if F.shape != (3, 3):
                raise ArgError(f"fundamental matrices must be 3x3, got {F.shape}")
        if not 0.0 <= self.inlier_ratio <= 1.0:
            raise ArgError(f"inlier_ratio outside [0,1]: {self.inlier_ratio}")


@dataclass
class RansacParams:
    inlier_threshold: float = 1.0  # mean per-pair distance, pixels
    max_iters: int = 500
    confidence: float = 0.99
    sample_cap: int = 2000
    rng_seed: int = 0
    # scale ladder: counts are also taken at inlier_threshold / scale_step**k
    # for k = 1..scale_levels, and the model is chosen at the tightest scale
    # still explained by a dominant (>= dominance) share of the data
    scale_levels: int = 8
    scale_step: float = 4.0
    dominance: float = 0.5

    def __post_init__(self):
        if self.inlier_threshold <= 0:
            raise ArgError("inlier_threshold must be positive")
        if not 0 < self.confidence < 1:
            raise ArgError("confidence must be in (0,1)")
        if self.max_iters < 1 or self.sample_cap < 6:
            raise ArgError("max_iters >= 1 and sample_cap >= 6 required")
        if self.scale_levels < 0 or self.scale_step <= 1:
            raise ArgError("scale_levels >= 0 and scale_step > 1 required")
        if not 0 < self.dominance <= 1:
            raise ArgError("dominance must be in (0,1]")


# ---------------------------------------------------------------------------
# elementary constructions


def skew(v) -> np.ndarray:
    """Cross-product matrix: skew(v) @ x == cross(v, x)."""
    v = np.asarray(v, dtype=np.float64)
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )


def hartley_normalize(points: np.ndarray):
    """Similarity T moving the centroid to the origin and the RMS radius
    to sqrt(2).  Returns (T, T-transformed points).

    ``points`` is (N, 3) homogeneous with third coordinate 1 (an (N, 2)
    array is accepted and homogenized).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] not in (2, 3):
        raise ArgError(f"points must be (N,2) or (N,3), got {pts.shape}")
    if pts.shape[1] == 3:
        xy = pts[:, :2] / pts[:, 2:3]
    else:
        xy = pts
    centroid = xy.mean(axis=0)
    centered = xy - centroid
    rms = math.sqrt(float((centered**2).sum(axis=1).mean()))
    if rms < 1e-12:
        raise DegenerateError("all points coincide; no similarity normalization")
    s = math.sqrt(2.0) / rms
    T = np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )
    out = np.column_stack([s * centered, np.ones(len(xy))])
    return T, out


def _homogeneous(points: np.ndarray, name: str) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape != (6, 3):
        raise ArgError(f"{name} must be (6,3) homogeneous points, got {pts.shape}")
    if np.any(pts[:, 2] == 0):
        raise ArgError(f"{name} has points at infinity")
    return pts / pts[:, 2:3]


def _canonical_transform(pts4: np.ndarray) -> np.ndarray:
    """3x3 map taking four image points to e1, e2, e3, (1,1,1)."""
    M = pts4[:3].T
    det = np.linalg.det(M)
    scale = np.abs(M).max()
    if abs(det) < 1e-10 * scale**3:
        raise DegenerateError("three of the four basis points are collinear")
    alpha = np.linalg.solve(M, pts4[3])
    if np.min(np.abs(alpha)) < 1e-10 * np.max(np.abs(alpha)):
        raise DegenerateError("fourth basis point lies on a line of the basis triangle")
    return np.linalg.inv(M * alpha)


def _reduced_camera(q: np.ndarray) -> np.ndarray:
    """Camera of the reduced form diag(q1,q2,q3) | q4*(1,1,1)^T."""
    return np.array(
        [
            [q[0], 0.0, 0.0, q[3]],
            [0.0, q[1], 0.0, q[3]],
            [0.0, 0.0, q[2], q[3]],
        ]
    )


def _camera_center(P: np.ndarray) -> np.ndarray:
    _, _, Vt = np.linalg.svd(P)
    return Vt[-1]


def _canonicalize(Ps):
    """World homography making the first camera [I | 0]."""
    P1 = Ps[0]
    M = np.vstack([P1, _camera_center(P1)])
    if abs(np.linalg.det(M)) < 1e-14 * max(np.abs(M).max(), 1.0) ** 4:
        return None
    H = np.linalg.inv(M)
    out = [np.hstack([np.eye(3), np.zeros((3, 1))])]
    for P in Ps[1:]:
        out.append(P @ H)
    return tuple(out)


def triangulate(Ps, xs) -> np.ndarray:
    """Linear triangulation of one point from >= 2 views."""
    rows = []
    for P, x in zip(Ps, xs):
        rows.append(x[0] * P[2] - x[2] * P[0])
        rows.append(x[1] * P[2] - x[2] * P[1])
    _, _, Vt = np.linalg.svd(np.vstack(rows))
    return Vt[-1]


# ---------------------------------------------------------------------------
# six-point minimal solver


def trifocal_six_point(x1, x2, x3):
    """Cameras of a frame triplet from six tracked points.

    Arguments are (6, 3) homogeneous pixel coordinates of the same six
    points in the three frames.  Returns a non-empty list of candidate
    camera triplets (P1, P2, P3) with P1 = [I | 0]; every candidate
    reprojects all six points to within 1e-6 in normalized coordinates.

    Raises DegenerateError when the configuration admits no such solution
    (collinear basis points, coinciding points, ambiguous rank).
    """
    views = [_homogeneous(x1, "x1"), _homogeneous(x2, "x2"), _homogeneous(x3, "x3")]
    Ns, Ts, hat5, hat6 = [], [], [], []
    for xv in views:
        N, xn = hartley_normalize(xv)
        C = _canonical_transform(xn[:4])
        Ts.append(C @ N)
        hat5.append(C @ xn[4])
        hat6.append(C @ xn[5])

    # Linear constraints on the six off-diagonal entries of the dual
    # matrix: one incidence equation per view plus the zero entry sum.
    A = np.zeros((4, 6))
    for i in range(3):
        a, b = hat5[i], hat6[i]
        for k, (r, c) in enumerate(_OFFDIAG):
            A[i, k] = b[r] * a[c]
    A[3, :] = 1.0
    _, S, Vt = np.linalg.svd(A)
    if S[3] < 1e-10 * S[0]:
        raise DegenerateError("six-point system is rank deficient")
    Fa = np.zeros((3, 3))
    Fb = np.zeros((3, 3))
    for k, (r, c) in enumerate(_OFFDIAG):
        Fa[r, c] = Vt[-1, k]
        Fb[r, c] = Vt[-2, k]

    # det(t*Fa + Fb) restricted to zero-diagonal matrices is the sum of
    # the two 3-cycles; expand to a cubic in t.
    def lin(r, c):
        return np.array([Fa[r, c], Fb[r, c]])

    cubic = np.polymul(np.polymul(lin(0, 1), lin(1, 2)), lin(2, 0)) + np.polymul(
        np.polymul(lin(0, 2), lin(2, 1)), lin(1, 0)
    )
    duals = []
    if np.max(np.abs(cubic)) > 0:
        for rt in np.roots(cubic):
            if abs(rt.imag) <= 1e-8 * (1.0 + abs(rt.real)):
                duals.append(rt.real * Fa + Fb)
    duals.append(Fa)  # the solution at t -> infinity

    candidates = []
    saw_coplanar = False
    for Fh in duals:
        cams = _cameras_from_dual(Fh, hat5, hat6, Ts)
        if cams is None:
            continue
        if _max_reprojection(cams, views, Ns) >= 1e-6:
            continue
        if _coplanar_deviation(cams, views) < 1e-3:
            saw_coplanar = True
            continue
        candidates.append(cams)
    if not candidates:
        if saw_coplanar:
            raise DegenerateError("four of the implied scene points are coplanar")
        raise DegenerateError("no consistent camera triplet for this sample")
    return _dedupe_candidates(candidates)[:3]


def _cameras_from_dual(Fh, hat5, hat6, Ts):
    """Recover the camera triplet from one root of the dual cubic."""
    F01, F02 = Fh[0, 1], Fh[0, 2]
    F10, F12 = Fh[1, 0], Fh[1, 2]
    F20, F21 = Fh[2, 0], Fh[2, 1]
    # two algebraically equivalent expressions for the auxiliary vector;
    # pick the better conditioned one
    wa = np.array([F12 * F20, -F20 * F02, F02 * F10])
    wb = np.array([-F21 * F10, -F20 * F01, F01 * F10])
    w = wa if np.linalg.norm(wa) >= np.linalg.norm(wb) else wb
    norm_w = np.linalg.norm(w)
    if norm_w < 1e-14 * max(1.0, np.abs(Fh).max() ** 2):
        return None
    w = w / norm_w
    den = np.array(
        [w[1] ** 2 + w[2] ** 2, w[0] ** 2 + w[2] ** 2, w[0] ** 2 + w[1] ** 2]
    )
    if den.min() < 1e-14:
        return None
    g = np.array(
        [
            (-F10 * w[2] + F20 * w[1]) / den[0],
            (F01 * w[2] - F21 * w[0]) / den[1],
            (-F02 * w[1] + F12 * w[0]) / den[2],
        ]
    )
    design = np.column_stack([np.ones(3), -w])
    (p, _q), *_ = np.linalg.lstsq(design, g, rcond=None)
    X5 = np.ones(4)
    X6 = np.array([g[0], g[1], g[2], p])
    n6 = np.linalg.norm(X6)
    if n6 < 1e-14:
        return None
    P5 = _reduced_camera(X5)
    P6 = _reduced_camera(X6 / n6)
    Ps = []
    for i in range(3):
        q = triangulate((P5, P6), (hat5[i], hat6[i]))
        if np.abs(q).max() < 1e-14:
            return None
        Ps.append(np.linalg.inv(Ts[i]) @ _reduced_camera(q))
    return _canonicalize(Ps)


def _max_reprojection(cams, views, Ns):
    """Largest reprojection residual of the six points, measured in the
    similarity-normalized image frames."""
    worst = 0.0
    for j in range(6):
        X = triangulate(cams, [v[j] for v in views])
        for P, N, xv in zip(cams, Ns, views):
            proj = N @ (P @ X)
            if abs(proj[2]) < 1e-14:
                return np.inf
            ref = N @ xv[j]
            err = np.hypot(
                proj[0] / proj[2] - ref[0] / ref[2],
                proj[1] / proj[2] - ref[1] / ref[2],
            )
            worst = max(worst, err)
    return worst


_QUAD_ANCHORS = [
    (d, tuple(q for q in quad if q != d))
    for quad in itertools.combinations(range(6), 4)
    for d in quad
]


def _coplanar_deviation(cams, views) -> float:
    """Smallest pixel evidence against any four implied points being coplanar.

    For every four-point subset and every choice of one of them as probe,
    the probe is forced onto the plane of the other three (intersecting its
    view-1 ray) and reprojected into views 2 and 3.  The return value is the
    minimum over subsets of the maximum reprojection deviation; a
    near-zero value means four of the triangulated points admit an exact
    planar interpretation and the sample is ambiguous.
    """
    P1, P2, P3 = cams
    rows = np.empty((6, 6, 4))
    for j in range(6):
        for vi, (P, xv) in enumerate(zip(cams, views)):
            x = xv[j]
            rows[j, 2 * vi] = x[0] * P[2] - x[2] * P[0]
            rows[j, 2 * vi + 1] = x[1] * P[2] - x[2] * P[1]
    X = np.linalg.svd(rows)[2][:, -1, :]  # (6, 4) triangulated points

    triples = np.stack([X[list(abc)] for _, abc in _QUAD_ANCHORS])  # (60,3,4)
    planes = np.linalg.svd(triples)[2][:, -1, :]  # (60, 4)
    probes = np.array([d for d, _ in _QUAD_ANCHORS])
    ray = views[0][probes] / views[0][probes][:, 2:3]  # (60, 3), P1 = [I|0]
    den = np.einsum("ij,ij->i", planes[:, :3], ray)
    ok = np.abs(den) > 1e-12 * (np.abs(planes[:, 3]) + 1.0)
    mu = np.where(ok, -planes[:, 3] / np.where(ok, den, 1.0), 0.0)
    Xp = np.concatenate([mu[:, None] * ray, np.ones((60, 1))], axis=1)

    worst = np.zeros(60)
    for P, xv in ((P2, views[1]), (P3, views[2])):
        pr = Xp @ P.T
        obs = xv[probes]
        w_ok = np.abs(pr[:, 2]) > 1e-12 * np.abs(pr).max(axis=1)
        err = np.full(60, np.inf)
        err[w_ok] = np.hypot(
            pr[w_ok, 0] / pr[w_ok, 2] - obs[w_ok, 0] / obs[w_ok, 2],
            pr[w_ok, 1] / pr[w_ok, 2] - obs[w_ok, 1] / obs[w_ok, 2],
        )
        worst = np.maximum(worst, err)
    worst[~ok] = np.inf
    return float(worst.min())


def _dedupe_candidates(cands):
    """Drop camera triplets that duplicate an earlier one up to scale."""
    kept = []
    for cams in cands:
        dup = False
        for ref in kept:
            same = True
            for P, Q in zip(cams, ref):
                Pn = P / np.linalg.norm(P)
                Qn = Q / np.linalg.norm(Q)
                if min(np.abs(Pn - Qn).max(), np.abs(Pn + Qn).max()) > 1e-9:
                    same = False
                    break
            if same:
                dup = True
                break
        if not dup:
            kept.append(cams)
    return kept


# ---------------------------------------------------------------------------
# fundamental matrices and distances


def fundamental_from_cameras(Pi: np.ndarray, Pj: np.ndarray):
    """F mapping view-i points to epipolar lines in view j.

    Returns (F, degenerate).  When the two camera centers coincide the
    pair has no epipolar constraint: F is all zeros and degenerate True.
    Otherwise F has rank 2, unit Frobenius norm, and a sign fixed by its
    largest-magnitude entry.
    """
    Pi = np.asarray(Pi, dtype=np.float64)
    Pj = np.asarray(Pj, dtype=np.float64)
    if Pi.shape != (3, 4) or Pj.shape != (3, 4):
        raise ArgError("cameras must be 3x4")
    Ci = _camera_center(Pi)
    e = Pj @ Ci
    if np.linalg.norm(e) < 1e-9 * np.linalg.norm(Pj):
        return np.zeros((3, 3)), True
    F = skew(e) @ Pj @ np.linalg.pinv(Pi)
    # enforce rank 2 exactly
    U, S, Vt = np.linalg.svd(F)
    S[2] = 0.0
    F = (U * S) @ Vt
    norm = np.linalg.norm(F)
    if norm < 1e-14:
        return np.zeros((3, 3)), True
    F = F / norm
    pivot = np.abs(F).argmax()
    if F.flat[pivot] < 0:
        F = -F
    return F, False


def cameras_to_fundamentals(P1, P2, P3, inlier_ratio: float = 1.0) -> TripletGeometry:
    """Pairwise fundamental matrices of a camera triplet."""
    F21, d21 = fundamental_from_cameras(P1, P2)
    F31, d31 = fundamental_from_cameras(P1, P3)
    F32, d32 = fundamental_from_cameras(P2, P3)
    return TripletGeometry(
        F21, F31, F32, inlier_ratio=inlier_ratio, degenerate_pairs=(d21, d31, d32)
    )


def epipolar_line(F: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Epipolar line l = F x; raises EpipoleError when l carries no
    direction (x at the epipole, or l the line at infinity)."""
    l = np.asarray(F, dtype=np.float64) @ np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(l)
    if norm == 0.0 or np.hypot(l[0], l[1]) < 1e-12 * norm:
        raise EpipoleError("epipolar line is undefined at this point")
    return l


def epipolar_distance(l: np.ndarray, x: np.ndarray) -> float:
    """Perpendicular distance from homogeneous point x (third coord 1) to
    line l, in pixels."""
    l = np.asarray(l, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    den = np.hypot(l[0], l[1])
    norm = np.linalg.norm(l)
    if norm == 0.0 or den < 1e-12 * norm:
        raise EpipoleError("line has no finite direction")
    return float(abs(x @ l) / den)


def _pair_distances(F: np.ndarray, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Sum of both directed point-line distances for each row of (xa, xb).

    Rows whose epipolar line is undefined contribute zero, matching the
    scalar path where an EpipoleError is mapped to zero by the caller.
    """
    lb = xa @ F.T  # lines in frame b
    la = xb @ F  # lines in frame a
    num = np.abs(np.einsum("ij,ij->i", xb, lb))
    out = np.zeros(len(xa))
    for lines, scale in ((lb, la), (la, lb)):
        den = np.hypot(lines[:, 0], lines[:, 1])
        norm = np.linalg.norm(lines, axis=1)
        ok = (norm > 0) & (den >= 1e-12 * norm)
        out[ok] += num[ok] / den[ok]
    return out


def triplet_distances(geom: TripletGeometry, x1, x2, x3) -> np.ndarray:
    """Summed six-way epipolar distance for stacked (N, 3) point triplets."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    x3 = np.asarray(x3, dtype=np.float64)
    d = np.zeros(len(x1))
    pairs = (
        (geom.F21, x1, x2, geom.degenerate_pairs[0]),
        (geom.F31, x1, x3, geom.degenerate_pairs[1]),
        (geom.F32, x2, x3, geom.degenerate_pairs[2]),
    )
    for F, xa, xb, degenerate in pairs:
        if degenerate:
            continue
        d += _pair_distances(F, xa, xb)
    return d


def triplet_distance(geom: TripletGeometry, corr: Correspondence3) -> float:
    """Six-way epipolar distance of a single correspondence.

    Individual undefined point-line distances (EpipoleError) count as
    zero so a degenerate direction never poisons the sum.
    """
    total = 0.0
    pairs = (
        (geom.F21, corr.x1, corr.x2, geom.degenerate_pairs[0]),
        (geom.F31, corr.x1, corr.x3, geom.degenerate_pairs[1]),
        (geom.F32, corr.x2, corr.x3, geom.degenerate_pairs[2]),
    )
    for F, xa, xb, degenerate in pairs:
        if degenerate:
            continue
        for Fdir, src, dst in ((F, xa, xb), (F.T, xb, xa)):
            try:
                total += epipolar_distance(epipolar_line(Fdir, src), dst)
            except EpipoleError:
                pass
    return total


# ---------------------------------------------------------------------------
# static-camera handling


def detect_static_camera(flows_fwd, eps_px: float = 0.25) -> bool:
    """True when at least half of all pixels barely move in every given
    forward field (displacement magnitude < eps_px jointly)."""
    if eps_px <= 0:
        raise ArgError("eps_px must be positive")
    flows = list(flows_fwd)
    if not flows:
        raise ArgError("at least one flow field required")
    still = None
    for f in flows:
        m = f.magnitude() < eps_px
        still = m if still is None else (still & m)
    return float(still.mean()) >= 0.5


def static_fundamentals(height: int, width: int) -> TripletGeometry:
    """Triplet geometry for a non-moving camera.

    Without parallax any line pencil through a fixed point is consistent;
    the skew matrix of the image center pins that point mid-frame.  The
    matrix is kept with exact half-integer entries so that a pixel that
    does not move scores a distance of exactly zero.
    """
    if height < 1 or width < 1:
        raise ArgError("image dimensions must be positive")
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    F = skew((cx, cy, 1.0))
    return TripletGeometry(
        F.copy(), F.copy(), F.copy(), inlier_ratio=1.0, static_camera=True
    )


# ---------------------------------------------------------------------------
# robust estimation


def ransac_triplet(corrs, params: RansacParams | None = None) -> TripletGeometry:
    """Robust triplet geometry from tracked point correspondences.

    ``corrs`` is a ``Correspondences`` bundle or a sequence of
    ``Correspondence3``.  Samples six points, solves, and scores models by
    the mean per-pair distance (sum of six distances / 6) on a ladder of
    thresholds ``inlier_threshold / scale_step**k``.  The winner is the
    highest-count model at the tightest scale still explained by a
    dominant share of the data: with small inter-frame motion many wrong
    models sit below any fixed pixel threshold, and only the rigid
    dominant structure survives as the scale shrinks toward the residual
    floor.  The winning model is returned as-is; no nonlinear refinement.
    """
    if params is None:
        params = RansacParams()
    if not isinstance(corrs, Correspondences):
        corrs = Correspondences.from_records(corrs)
    n_total = len(corrs)
    if n_total < 6:
        raise InsufficientDataError(f"need >= 6 correspondences, got {n_total}")

    rng = np.random.default_rng(params.rng_seed)
    if n_total > params.sample_cap:
        keep = rng.choice(n_total, size=params.sample_cap, replace=False)
        keep.sort()
        x1, x2, x3 = corrs.x1[keep], corrs.x2[keep], corrs.x3[keep]
    else:
        x1, x2, x3 = corrs.x1, corrs.x2, corrs.x3
    n = len(x1)

    thresholds = params.inlier_threshold / params.scale_step ** np.arange(
        params.scale_levels + 1
    )
    min_count = math.ceil(params.dominance * n)
    # enough iterations to hit an all-inlier sample of any dominant
    # structure with the requested confidence
    needed = math.log(1.0 - params.confidence) / math.log(
        1.0 - params.dominance**6
    )
    iters = min(params.max_iters, max(1, math.ceil(needed)))

    best_score = -1  # ladder sum among dominant models
    best_cams = None
    best_base = 0
    best_deep = 0  # the winner's count at the tightest scale
    fallback_count = -1  # plain inlier count when nothing is dominant
    fallback_cams = None
    for it in range(iters):
        sample = rng.choice(n, size=6, replace=False)
        try:
            candidates = trifocal_six_point(x1[sample], x2[sample], x3[sample])
        except DegenerateError:
            continue
        for cams in candidates:
            geom = cameras_to_fundamentals(*cams)
            if any(geom.degenerate_pairs):
                # zero-baseline pairs score distance 0 everywhere, which
                # would crown a model that constrains nothing
                continue
            d = triplet_distances(geom, x1, x2, x3) / 6.0
            counts = (d[None, :] < thresholds[:, None]).sum(axis=1)
            if counts[0] > fallback_count:
                fallback_count = int(counts[0])
                fallback_cams = cams
            if counts[0] < min_count:
                continue
            score = int(counts.sum())
            if score > best_score:
                best_score = score
                best_cams = cams
                best_base = int(counts[0])
                best_deep = int(counts[-1])
        if best_deep >= min_count:
            # dominant down to the tightest scale: the model already sits
            # on the residual floor of the dominant structure
            break
    if best_cams is None:
        best_cams, best_base = fallback_cams, fallback_count
    if best_cams is None:
        raise EstimationError(
            f"no valid model in {iters} iterations (degenerate samples throughout)"
        )
    return cameras_to_fundamentals(*best_cams, inlier_ratio=best_base / n)
