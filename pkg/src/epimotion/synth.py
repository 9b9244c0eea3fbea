"""Synthetic rigid scenes with exact flow, visibility and geometry.

A scene is a set of fronto-parallel rectangular patches: a background
made of depth-jittered tiles over a distant backstop plane (or a single
plane), plus foreground patches that translate along scripted paths and
may pause.  The camera follows a static, translating or orbiting path.

Flow is computed in closed form per pixel: cast the ray, intersect every
patch plane, keep the nearest hit, move the hit point by the patch's
scripted displacement and reproject into the next frame.  No rendering
or interpolation is involved, so flow, visibility, masks, tracks and
fundamental matrices are exact and serve as oracles for the rest of the
package.  Gaussian noise and uniform outliers are applied only after the
exact fields are computed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgError, ConfigError, DegenerateError
from .flow_io import FlowField, write_flo, write_mask
from .geometry import TripletGeometry, cameras_to_fundamentals, fundamental_from_cameras

_LAMBDA_TOL = 1e-9  # relative slack when comparing ray depths


@dataclass
class CameraPath:
    kind: str = "static"  # static | translate | orbit
    start: tuple = (0.0, 0.0, 0.0)
    velocity: tuple = (0.0, 0.0, 0.0)  # world units per frame (translate)
    # sinusoidal lateral offset added to translate paths; a straight-line
    # path puts every centre triple on a line, which is a critical
    # configuration for six-point estimation
    sway_amplitude: float = 0.0  # world units, along sway_axis
    sway_period: float = 7.0  # frames
    sway_axis: tuple = (0.0, 1.0, 0.0)
    orbit_center: tuple = (0.0, 0.0, 8.0)
    orbit_radius: float = 2.0
    orbit_rate: float = 0.02  # radians per frame


@dataclass
class PatchMotion:
    velocity: tuple = (0.0, 0.0, 0.0)  # world units per frame
    pause: tuple | None = None  # (first_frame, end_frame): steps with zero motion


@dataclass
class ForegroundPatch:
    center: tuple  # (x, y, z) world position at frame 0
    half_size: tuple  # (hx, hy) world units
    motion: PatchMotion = field(default_factory=PatchMotion)


@dataclass
class BackgroundConfig:
    kind: str = "tiles"  # tiles | plane
    depth: float = 8.0
    tile_grid: tuple = (8, 6)
    depth_jitter: float = 0.12  # fraction of depth
    backstop_depth: float | None = None  # default: 4 * depth


@dataclass
class SceneConfig:
    frames: int = 20
    width: int = 320
    height: int = 240
    focal_px: float = 400.0
    principal: tuple | None = None  # default: pixel-grid center
    camera: CameraPath = field(default_factory=CameraPath)
    background: BackgroundConfig = field(default_factory=BackgroundConfig)
    foreground: list = field(default_factory=list)
    noise_sigma: float = 0.0
    outlier_fraction: float = 0.0
    outlier_range: float = 20.0
    seed: int = 0

    def validate(self) -> None:
        if self.frames < 3:
            raise ConfigError("a scene needs at least 3 frames")
        if self.width < 8 or self.height < 8:
            raise ConfigError("image dimensions must be at least 8x8")
        if self.focal_px <= 0:
            raise ConfigError("focal length must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ConfigError("outlier_fraction must lie in [0,1]")
        if self.background.depth <= 0:
            raise ConfigError("background depth must be positive")
        if self.camera.kind not in ("static", "translate", "orbit"):
            raise ConfigError(f"unknown camera kind {self.camera.kind!r}")
        if self.camera.kind == "translate":
            moves = any(v != 0 for v in self.camera.velocity)
            if not moves and self.camera.sway_amplitude == 0.0:
                raise ConfigError(
                    "translating camera with zero velocity has no baseline; "
                    "use kind='static'"
                )
        if self.camera.kind == "orbit" and (
            self.camera.orbit_radius == 0 or self.camera.orbit_rate == 0
        ):
            raise ConfigError(
                "orbit with zero radius or rate has no baseline; use kind='static'"
            )
        if self.background.kind not in ("tiles", "plane"):
            raise ConfigError(f"unknown background kind {self.background.kind!r}")
        for p in self.foreground:
            if p.center[2] <= 0:
                raise ConfigError("foreground patches must start in front of the camera")
            if p.motion.pause is not None:
                a, b = p.motion.pause
                if not (0 <= a <= b <= self.frames):
                    raise ConfigError(f"pause interval {p.motion.pause} outside sequence")


@dataclass
class _Surface:
    z0: float
    rect: tuple | None  # (x0, x1, y0, y1) world bounds, None = infinite plane
    offsets: np.ndarray  # (frames, 3) scripted displacement per frame
    foreground: bool


class SceneGroundTruth:
    """Exact flow and geometry of a generated scene, plus the noisy copies
    that act as pipeline input."""

    def __init__(self, config, K, cameras, centers, rotations, surfaces):
        self.config = config
        self.K = K
        self.cameras = cameras  # (F, 3, 4)
        self._centers = centers  # (F, 3)
        self._rotations = rotations  # (F, 3, 3)
        self._surfaces = surfaces
        self.flows_fwd: list[FlowField] = []
        self.flows_bwd: list[FlowField] = []
        self.noisy_fwd: list[FlowField] = []
        self.noisy_bwd: list[FlowField] = []
        self.fg_masks: np.ndarray | None = None  # (F, h, w) uint8
        self.visibility: np.ndarray | None = None  # (F-1, h, w) uint8

    # -- exact geometric queries ------------------------------------------

    def _rays(self, t, xs, ys):
        cfg = self.config
        cx, cy = cfg.principal
        d_cam = np.stack(
            [(xs - cx) / cfg.focal_px, (ys - cy) / cfg.focal_px, np.ones_like(xs)],
            axis=-1,
        )
        return d_cam @ self._rotations[t]  # rows R^T d

    def _first_hit(self, t, xs, ys):
        """Nearest surface along each pixel ray.

        Returns (surface index, ray parameter, world point); index -1
        where nothing is hit (cannot happen with a backstop).
        """
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        d = self._rays(t, xs, ys)
        C = self._centers[t]
        lam = np.full(xs.shape + (len(self._surfaces),), np.inf)
        for k, s in enumerate(self._surfaces):
            off = s.offsets[t]
            dz = d[..., 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                l = (s.z0 + off[2] - C[2]) / dz
            ok = np.isfinite(l) & (l > 0)
            if s.rect is not None:
                safe = np.where(ok, l, 1.0)
                px = C[0] + safe * d[..., 0]
                py = C[1] + safe * d[..., 1]
                x0, x1, y0, y1 = s.rect
                ok &= (px >= x0 + off[0]) & (px <= x1 + off[0])
                ok &= (py >= y0 + off[1]) & (py <= y1 + off[1])
            lam[..., k] = np.where(ok, l, np.inf)
        idx = np.argmin(lam, axis=-1)
        best = np.take_along_axis(lam, idx[..., None], axis=-1)[..., 0]
        idx = np.where(np.isfinite(best), idx, -1)
        X = C + best[..., None] * d
        return idx, best, X

    def _project(self, t, X):
        p = X @ self.cameras[t, :, :3].T + self.cameras[t, :, 3]
        return p[..., 0] / p[..., 2], p[..., 1] / p[..., 2], p[..., 2]

    def _surface_offsets(self, t):
        return np.stack([s.offsets[t] for s in self._surfaces])

    def _grid(self):
        cfg = self.config
        ys, xs = np.mgrid[0 : cfg.height, 0 : cfg.width].astype(np.float64)
        return xs, ys

    def _flow_between(self, t_src, t_dst):
        """Exact displacement of every frame-t_src pixel into frame t_dst."""
        xs, ys = self._grid()
        idx, _, X = self._first_hit(t_src, xs, ys)
        delta = self._surface_offsets(t_dst) - self._surface_offsets(t_src)
        Xm = X + delta[idx]
        px, py, _ = self._project(t_dst, Xm)
        u = px - xs
        v = py - ys
        # a frozen step of an unchanged camera is the identity map: make
        # the zero exact instead of keeping round-off residue
        if np.array_equal(self.cameras[t_src], self.cameras[t_dst]):
            frozen = (delta[idx] == 0).all(axis=-1)
            u[frozen] = 0.0
            v[frozen] = 0.0
        return u, v, idx, Xm

    def _visibility_step(self, t, px, py, Xm, idx):
        """1 where the frame-t pixel's surface point (moved to ``Xm``,
        reprojecting at ``px, py``) is still nearest and in-frame at t+1."""
        cfg = self.config
        inb = (px >= 0) & (px <= cfg.width - 1) & (py >= 0) & (py <= cfg.height - 1)
        safe_x = np.where(inb, px, 0.0)
        safe_y = np.where(inb, py, 0.0)
        _, lam_min, _ = self._first_hit(t + 1, safe_x, safe_y)
        d = self._rays(t + 1, safe_x, safe_y)
        C = self._centers[t + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            lam_self = (Xm[..., 2] - C[2]) / d[..., 2]
        visible = inb & (lam_min >= lam_self * (1.0 - _LAMBDA_TOL)) & (idx >= 0)
        return visible.astype(np.uint8)

    # -- public oracle API --------------------------------------------------

    def foreground_mask(self, t) -> np.ndarray:
        xs, ys = self._grid()
        idx, _, _ = self._first_hit(t, xs, ys)
        fg = np.zeros(xs.shape, dtype=np.uint8)
        for k, s in enumerate(self._surfaces):
            if s.foreground:
                fg[idx == k] = 1
        return fg

    def true_fundamentals(self, i: int, j: int) -> np.ndarray:
        """Fundamental matrix mapping frame-i points to lines in frame j."""
        F, degenerate = fundamental_from_cameras(self.cameras[i], self.cameras[j])
        if degenerate:
            raise DegenerateError(f"cameras {i} and {j} share a center")
        return F

    def true_triplet_geometry(self, t: int) -> TripletGeometry:
        geom = cameras_to_fundamentals(
            self.cameras[t], self.cameras[t + 1], self.cameras[t + 2]
        )
        if any(geom.degenerate_pairs):
            raise DegenerateError(f"triplet {t} has coinciding camera centers")
        return geom

    def true_tracks(self, t0: int, length: int) -> np.ndarray:
        """Exact trajectories of every frame-t0 pixel center: (length, h, w, 2).

        Positions follow the material surface point regardless of later
        occlusion; combine with ``visibility`` to select clean tracks.
        """
        if t0 < 0 or t0 + length > self.config.frames:
            raise ArgError("track window outside the sequence")
        xs, ys = self._grid()
        idx, _, X = self._first_hit(t0, xs, ys)
        out = np.empty((length, self.config.height, self.config.width, 2))
        out[0, :, :, 0] = xs
        out[0, :, :, 1] = ys
        base = self._surface_offsets(t0)
        for k in range(1, length):
            t = t0 + k
            delta = self._surface_offsets(t) - base
            Xm = X + delta[idx]
            px, py, _ = self._project(t, Xm)
            if np.array_equal(self.cameras[t0], self.cameras[t]):
                frozen = (delta[idx] == 0).all(axis=-1)
                px[frozen] = xs[frozen]
                py[frozen] = ys[frozen]
            out[k, :, :, 0] = px
            out[k, :, :, 1] = py
        return out

    # -- output --------------------------------------------------------------

    def write(self, out_dir) -> None:
        """Write pipeline inputs and ground truth under ``out_dir``."""
        out = Path(out_dir)
        for sub in ("flow_fwd", "flow_bwd", "masks", "visibility"):
            (out / sub).mkdir(parents=True, exist_ok=True)
        for t, f in enumerate(self.noisy_fwd):
            write_flo(out / "flow_fwd" / f"{t:06d}.flo", f)
        for t, f in enumerate(self.noisy_bwd):
            write_flo(out / "flow_bwd" / f"{t:06d}.flo", f)
        for t in range(self.config.frames):
            write_mask(out / "masks" / f"{t:06d}.png", self.fg_masks[t])
        for t in range(self.config.frames - 1):
            write_mask(out / "visibility" / f"{t:06d}.png", self.visibility[t])
        pairs = []
        for t in range(self.config.frames - 1):
            for j in (t + 1, t + 2):
                if j >= self.config.frames:
                    continue
                try:
                    F = self.true_fundamentals(t, j)
                except DegenerateError:
                    F = np.zeros((3, 3))
                pairs.append({"i": t, "j": j, "F": F.flatten().tolist()})
        doc = {
            "K": self.K.flatten().tolist(),
            "cameras": [P.flatten().tolist() for P in self.cameras],
            "fundamentals": pairs,
        }
        (out / "cameras.json").write_text(json.dumps(doc, sort_keys=True, indent=1))


# ---------------------------------------------------------------------------
# scene construction


def _camera_sequence(config):
    cam = config.camera
    F = config.frames
    centers = np.zeros((F, 3))
    rotations = np.tile(np.eye(3), (F, 1, 1))
    start = np.asarray(cam.start, dtype=np.float64)
    if cam.kind == "static":
        centers[:] = start
    elif cam.kind == "translate":
        vel = np.asarray(cam.velocity, dtype=np.float64)
        axis = np.asarray(cam.sway_axis, dtype=np.float64)
        for t in range(F):
            sway = cam.sway_amplitude * math.sin(2.0 * math.pi * t / cam.sway_period)
            centers[t] = start + t * vel + sway * axis
    else:  # orbit
        ctr = np.asarray(cam.orbit_center, dtype=np.float64)
        for t in range(F):
            ang = t * cam.orbit_rate
            centers[t] = ctr + cam.orbit_radius * np.array(
                [math.sin(ang), 0.0, -math.cos(ang)]
            )
            z_axis = ctr - centers[t]
            z_axis = z_axis / np.linalg.norm(z_axis)
            x_axis = np.cross([0.0, 1.0, 0.0], z_axis)
            x_axis = x_axis / np.linalg.norm(x_axis)
            y_axis = np.cross(z_axis, x_axis)
            rotations[t] = np.stack([x_axis, y_axis, z_axis])
    cx, cy = config.principal
    K = np.array(
        [[config.focal_px, 0.0, cx], [0.0, config.focal_px, cy], [0.0, 0.0, 1.0]]
    )
    cameras = np.empty((F, 3, 4))
    for t in range(F):
        Rt = rotations[t]
        cameras[t, :, :3] = K @ Rt
        cameras[t, :, 3] = -(K @ Rt @ centers[t])
    return K, cameras, centers, rotations


def _world_extent(config, centers, depth):
    """Conservative world-plane rectangle seen by the camera at ``depth``."""
    cfg = config
    cx, cy = cfg.principal
    half_x = max(cx, cfg.width - 1 - cx) * depth / cfg.focal_px
    half_y = max(cy, cfg.height - 1 - cy) * depth / cfg.focal_px
    margin = 1.5
    x0 = centers[:, 0].min() - margin * half_x
    x1 = centers[:, 0].max() + margin * half_x
    y0 = centers[:, 1].min() - margin * half_y
    y1 = centers[:, 1].max() + margin * half_y
    return x0, x1, y0, y1


def _patch_offsets(motion: PatchMotion, frames: int) -> np.ndarray:
    vel = np.asarray(motion.velocity, dtype=np.float64)
    out = np.zeros((frames, 3))
    a, b = motion.pause if motion.pause is not None else (frames, frames)
    acc = np.zeros(3)
    for t in range(1, frames):
        step = t - 1
        if not a <= step < b:
            acc = acc + vel
        out[t] = acc
    return out


def _build_surfaces(config, centers):
    bg = config.background
    F = config.frames
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 2)))
    zeros = np.zeros((F, 3))
    surfaces = []
    for p in config.foreground:
        hx, hy = p.half_size
        cxw, cyw, z = p.center
        surfaces.append(
            _Surface(
                z0=z,
                rect=(cxw - hx, cxw + hx, cyw - hy, cyw + hy),
                offsets=_patch_offsets(p.motion, F),
                foreground=True,
            )
        )
    if bg.kind == "plane":
        surfaces.append(_Surface(bg.depth, None, zeros, False))
    else:
        zmax = bg.depth * (1.0 + bg.depth_jitter)
        x0, x1, y0, y1 = _world_extent(config, centers, zmax)
        nx, ny = bg.tile_grid
        xs = np.linspace(x0, x1, nx + 1)
        ys = np.linspace(y0, y1, ny + 1)
        for iy in range(ny):
            for ix in range(nx):
                z = bg.depth * (1.0 + bg.depth_jitter * rng.uniform(-1.0, 1.0))
                surfaces.append(
                    _Surface(z, (xs[ix], xs[ix + 1], ys[iy], ys[iy + 1]), zeros, False)
                )
        backstop = bg.backstop_depth if bg.backstop_depth is not None else 4 * bg.depth
        surfaces.append(_Surface(backstop, None, zeros, False))
    return surfaces


def _corrupt(u, v, sigma, frac, rng, outlier_range):
    if sigma > 0:
        u = u + rng.normal(0.0, sigma, u.shape)
        v = v + rng.normal(0.0, sigma, v.shape)
    if frac > 0:
        bad = rng.random(u.shape) < frac
        u = np.where(bad, rng.uniform(-outlier_range, outlier_range, u.shape), u)
        v = np.where(bad, rng.uniform(-outlier_range, outlier_range, v.shape), v)
    return u, v


def generate(config: SceneConfig, out_dir=None) -> SceneGroundTruth:
    """Build the scene, compute exact fields, apply corruption, optionally
    write everything under ``out_dir``."""
    if config.principal is None:
        config.principal = ((config.width - 1) / 2.0, (config.height - 1) / 2.0)
    config.validate()
    K, cameras, centers, rotations = _camera_sequence(config)
    surfaces = _build_surfaces(config, centers)
    gt = SceneGroundTruth(config, K, cameras, centers, rotations, surfaces)

    F, h, w = config.frames, config.height, config.width
    fg_ids = np.array(
        [k for k, s in enumerate(surfaces) if s.foreground], dtype=np.int64
    )
    xs, ys = gt._grid()
    masks, vis = [], []
    idx_b = None
    for t in range(F - 1):
        u, v, idx, Xm = gt._flow_between(t, t + 1)
        gt.flows_fwd.append(FlowField(w, h, u, v))
        masks.append(np.isin(idx, fg_ids).astype(np.uint8))
        vis.append(gt._visibility_step(t, xs + u, ys + v, Xm, idx))
        ub, vb, idx_b, _ = gt._flow_between(t + 1, t)
        gt.flows_bwd.append(FlowField(w, h, ub, vb))
    masks.append(np.isin(idx_b, fg_ids).astype(np.uint8))
    gt.fg_masks = np.stack(masks)
    gt.visibility = np.stack(vis)

    for t in range(F - 1):
        for direction, exact in ((0, gt.flows_fwd[t]), (1, gt.flows_bwd[t])):
            rng = np.random.default_rng(
                np.random.SeedSequence((config.seed, direction, t))
            )
            u, v = _corrupt(
                exact.u.astype(np.float64),
                exact.v.astype(np.float64),
                config.noise_sigma,
                config.outlier_fraction,
                rng,
                config.outlier_range,
            )
            noisy = FlowField(w, h, u, v)
            (gt.noisy_fwd if direction == 0 else gt.noisy_bwd).append(noisy)

    if out_dir is not None:
        gt.write(out_dir)
    return gt


def standard_scene(
    seed: int = 0,
    frames: int = 20,
    width: int = 320,
    height: int = 240,
    cam_speed_px: float = 2.0,
    fg_speed_px: float = 4.5,
    fg_fraction: float = 0.15,
    noise_sigma: float = 0.0,
    outlier_fraction: float = 0.0,
    pause: tuple | None = None,
    static_camera: bool = False,
) -> SceneConfig:
    """A ready-made benchmark scene: tiled background, a slowly receding
    and swaying camera, and one foreground patch drifting downward.

    The camera recedes so the background flow is radial (contracting
    toward a focus right of center); a unidirectional background field
    would let wildly wrong epipolar models fit it to far below a pixel.
    ``cam_speed_px`` is the background parallax in px/frame at half-width
    radius and nominal depth, ``fg_speed_px`` the patch's own vertical
    image speed at its starting depth.  ``pause`` freezes the patch for
    the given frame interval.
    """
    focal = 400.0
    z_bg = 8.0
    z_fg = 4.0
    vz = -cam_speed_px * z_bg / (width / 2.0)
    vel = (0.15 * width * vz / focal, 0.0, vz)
    cam = CameraPath(kind="static") if static_camera else CameraPath(
        kind="translate", velocity=vel, sway_amplitude=0.018
    )

    # camera centres over time (mirrors _camera_sequence)
    centers = np.zeros((frames, 3))
    if not static_camera:
        v = np.asarray(vel)
        for t in range(frames):
            sway = cam.sway_amplitude * math.sin(2.0 * math.pi * t / cam.sway_period)
            centers[t] = t * v + sway * np.asarray(cam.sway_axis)

    side_px = math.sqrt(fg_fraction * width * height)
    half_world = side_px / 2.0 * z_fg / focal
    vyw = fg_speed_px * z_fg / focal
    offsets = np.zeros(frames)
    for t in range(1, frames):
        moving = not (pause is not None and pause[0] <= t - 1 < pause[1])
        offsets[t] = offsets[t - 1] + (vyw if moving else 0.0)

    cx_pp, cy_pp = (width - 1) / 2.0, (height - 1) / 2.0

    def fits(axw: float, ayw: float, margin: float = 3.0) -> bool:
        for t in range(frames):
            rel = np.array([axw, ayw + offsets[t], z_fg]) - centers[t]
            if rel[2] <= 0.1:
                return False
            half_img = focal * half_world / rel[2]
            ix = focal * rel[0] / rel[2] + cx_pp
            iy = focal * rel[1] / rel[2] + cy_pp
            if ix - half_img < margin or ix + half_img > width - 1 - margin:
                return False
            if iy - half_img < margin or iy + half_img > height - 1 - margin:
                return False
        return True

    axw = (0.38 * width - cx_pp) * z_fg / focal
    placed = None
    for ay_px in np.arange(side_px / 2.0 + 4.0, height - side_px / 2.0, 1.0):
        ayw = (ay_px - cy_pp) * z_fg / focal
        if fits(axw, ayw):
            placed = ayw
            break
    if placed is None:
        raise ConfigError(
            "foreground patch cannot stay in frame; reduce fg_fraction, "
            "fg_speed_px, or frames"
        )

    return SceneConfig(
        frames=frames,
        width=width,
        height=height,
        focal_px=focal,
        camera=cam,
        background=BackgroundConfig(kind="tiles", depth=z_bg),
        foreground=[
            ForegroundPatch(
                center=(axw, placed, z_fg),
                half_size=(half_world, half_world),
                motion=PatchMotion(velocity=(0.0, vyw, 0.0), pause=pause),
            )
        ],
        noise_sigma=noise_sigma,
        outlier_fraction=outlier_fraction,
        seed=seed,
    )


def large_foreground_scene(seed: int = 0, frames: int = 12, **kwargs) -> SceneConfig:
    """``standard_scene`` variant whose patch covers roughly a third of the
    frame at its starting depth.  The big patch leaves little travel room,
    so the preset moves it slower and keeps the sequence short."""
    kwargs.setdefault("fg_fraction", 0.35)
    kwargs.setdefault("fg_speed_px", 3.0)
    return standard_scene(seed=seed, frames=frames, **kwargs)
