"""Scene generator oracles: exact flow, masks, rigidity and corruption.

The custom scene used below puts a 0.5 x 0.4 world-unit patch at
(0.4, 0.1, 5.0) in front of a plane at depth 9, seen by a 240 px camera
with principal point (79.5, 59.5).  At frame 0 the camera sits at the
origin, so the patch center projects to

    (79.5 + 240 * 0.4 / 5, 59.5 + 240 * 0.1 / 5) = (98.7, 64.3)

with an image half-size of 240 * (0.5, 0.4) / 5 = (24.0, 19.2) px.
"""

import json

import numpy as np
import pytest

from epimotion import synth
from epimotion.errors import ArgError, ConfigError, DegenerateError
from epimotion.geometry import triplet_distances
from epimotion.synth import (
    BackgroundConfig,
    CameraPath,
    ForegroundPatch,
    PatchMotion,
    SceneConfig,
    generate,
    large_foreground_scene,
    standard_scene,
)


def _patch_scene(**overrides):
    kwargs = dict(
        frames=7,
        width=160,
        height=120,
        focal_px=240.0,
        camera=CameraPath(kind="translate", start=(0, 0, 0), velocity=(0.02, 0.004, 0.01)),
        background=BackgroundConfig(kind="plane", depth=9.0),
        foreground=[
            ForegroundPatch(
                center=(0.4, 0.1, 5.0),
                half_size=(0.5, 0.4),
                motion=PatchMotion(velocity=(0.03, 0.01, 0.0)),
            )
        ],
        seed=3,
    )
    kwargs.update(overrides)
    return SceneConfig(**kwargs)


# -- exact fields -------------------------------------------------------------


def test_fully_static_scene_has_exactly_zero_flow():
    cfg = standard_scene(frames=5, width=96, height=72, static_camera=True, fg_speed_px=0.0)
    gt = generate(cfg)
    for f in (*gt.flows_fwd, *gt.flows_bwd, *gt.noisy_fwd, *gt.noisy_bwd):
        assert (f.u == 0.0).all() and (f.v == 0.0).all()
    assert (gt.visibility == 1).all()


def test_forward_flow_equals_track_deltas():
    gt = generate(_patch_scene())
    h, w = 120, 160
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    for t in range(3):
        tr = gt.true_tracks(t, 2)
        np.testing.assert_allclose(gt.flows_fwd[t].u, tr[1, :, :, 0] - xs, atol=1e-4)
        np.testing.assert_allclose(gt.flows_fwd[t].v, tr[1, :, :, 1] - ys, atol=1e-4)


def test_background_tracks_satisfy_true_geometry():
    gt = generate(_patch_scene())
    geom = gt.true_triplet_geometry(0)
    tracks = gt.true_tracks(0, 3)
    bg = gt.fg_masks[0] == 0

    def homog(p):
        return np.column_stack([p, np.ones(len(p))])

    x1 = homog(tracks[0][bg])
    x2 = homog(tracks[1][bg])
    x3 = homog(tracks[2][bg])
    d = triplet_distances(geom, x1, x2, x3)
    assert d.max() < 1e-6


def test_foreground_tracks_violate_true_geometry():
    gt = generate(_patch_scene())
    geom = gt.true_triplet_geometry(0)
    tracks = gt.true_tracks(0, 3)
    fg = gt.fg_masks[0] == 1

    def homog(p):
        return np.column_stack([p, np.ones(len(p))])

    d = triplet_distances(geom, homog(tracks[0][fg]), homog(tracks[1][fg]), homog(tracks[2][fg]))
    assert np.median(d) > 0.5


# -- masks and visibility ------------------------------------------------------


def test_patch_mask_matches_hand_projection():
    gt = generate(_patch_scene())
    m = gt.fg_masks[0]
    assert m.sum() == pytest.approx(48 * 38.4, rel=0.08)
    ys, xs = np.nonzero(m)
    assert xs.mean() == pytest.approx(98.7, abs=1.5)
    assert ys.mean() == pytest.approx(64.3, abs=1.5)
    np.testing.assert_array_equal(gt.foreground_mask(0), m)


def test_moving_patch_occludes_background():
    gt = generate(_patch_scene())
    assert gt.visibility.shape == (6, 120, 160)
    assert gt.visibility.min() == 0  # the leading edge buries pixels
    assert gt.visibility.mean() > 0.9


def test_mask_series_follows_the_patch():
    gt = generate(_patch_scene())
    first = np.nonzero(gt.fg_masks[0])[1].mean()
    last = np.nonzero(gt.fg_masks[-1])[1].mean()
    assert last > first  # patch drifts right in this scene


# -- corruption ----------------------------------------------------------------


def test_noise_statistics():
    gt = generate(_patch_scene(noise_sigma=0.5, seed=9))
    delta = gt.noisy_fwd[0].u.astype(np.float64) - gt.flows_fwd[0].u.astype(np.float64)
    assert abs(delta.mean()) < 0.02
    assert delta.std() == pytest.approx(0.5, abs=0.03)


def test_outliers_replace_a_seeded_fraction():
    gt = generate(_patch_scene(outlier_fraction=0.25, seed=9))
    clean = gt.flows_fwd[0]
    noisy = gt.noisy_fwd[0]
    changed = (noisy.u != clean.u) | (noisy.v != clean.v)
    assert changed.mean() == pytest.approx(0.25, abs=0.02)
    assert np.abs(noisy.u[changed]).max() <= 20.0
    assert np.abs(noisy.v[changed]).max() <= 20.0


def test_corruption_is_reproducible():
    a = generate(_patch_scene(noise_sigma=0.3, outlier_fraction=0.1))
    b = generate(_patch_scene(noise_sigma=0.3, outlier_fraction=0.1))
    for fa, fb in zip(a.noisy_fwd + a.noisy_bwd, b.noisy_fwd + b.noisy_bwd):
        np.testing.assert_array_equal(fa.u, fb.u)
        np.testing.assert_array_equal(fa.v, fb.v)


def test_different_seeds_differ():
    a = generate(_patch_scene(noise_sigma=0.3, seed=1))
    b = generate(_patch_scene(noise_sigma=0.3, seed=2))
    assert (a.noisy_fwd[0].u != b.noisy_fwd[0].u).any()


# -- presets -------------------------------------------------------------------


def test_standard_scene_camera_recedes():
    cfg = standard_scene(frames=6, width=96, height=72)
    assert cfg.camera.kind == "translate"
    assert cfg.camera.velocity[2] < 0  # receding: negative z velocity
    gt = generate(cfg)
    assert gt.fg_masks[0].any()


def test_standard_scene_static_flag():
    cfg = standard_scene(frames=5, width=96, height=72, static_camera=True)
    assert cfg.camera.kind == "static"


def test_standard_scene_pause_is_wired_through():
    # static camera, so during the pause nothing at all moves and the
    # patch mask freezes in place
    cfg = standard_scene(
        frames=10, width=96, height=72, pause=(6, 10), static_camera=True
    )
    assert cfg.foreground[0].motion.pause == (6, 10)
    gt = generate(cfg)
    assert (gt.fg_masks[0] != gt.fg_masks[5]).any()  # moving before the pause
    np.testing.assert_array_equal(gt.fg_masks[7], gt.fg_masks[9])


def test_standard_scene_unplaceable_patch_raises():
    with pytest.raises(ConfigError):
        standard_scene(frames=20, width=96, height=72, fg_fraction=0.9)


def test_large_foreground_fraction():
    gt = generate(large_foreground_scene(frames=8, width=160, height=120))
    frac = gt.fg_masks[0].mean()
    assert 0.30 <= frac <= 0.45


# -- configuration validation ----------------------------------------------------


@pytest.mark.parametrize(
    "overrides",
    [
        {"frames": 2},
        {"width": 4},
        {"focal_px": 0.0},
        {"noise_sigma": -0.1},
        {"outlier_fraction": 1.5},
        {"background": BackgroundConfig(kind="plane", depth=-1.0)},
        {"background": BackgroundConfig(kind="checker")},
        {"camera": CameraPath(kind="warp")},
        {"camera": CameraPath(kind="translate", velocity=(0, 0, 0))},
        {"camera": CameraPath(kind="orbit", orbit_radius=0.0)},
        {
            "foreground": [
                ForegroundPatch(
                    center=(0, 0, -2.0),
                    half_size=(0.2, 0.2),
                    motion=PatchMotion(velocity=(0, 0, 0)),
                )
            ]
        },
        {
            "foreground": [
                ForegroundPatch(
                    center=(0.4, 0.1, 5.0),
                    half_size=(0.2, 0.2),
                    motion=PatchMotion(velocity=(0, 0, 0), pause=(5, 99)),
                )
            ]
        },
    ],
)
def test_invalid_configs_raise(overrides):
    cfg = _patch_scene(**overrides)
    with pytest.raises(ConfigError):
        generate(cfg)


def test_track_window_bounds_checked():
    gt = generate(_patch_scene())
    with pytest.raises(ArgError):
        gt.true_tracks(5, 10)


def test_static_fundamental_query_raises():
    cfg = standard_scene(frames=5, width=96, height=72, static_camera=True)
    gt = generate(cfg)
    with pytest.raises(DegenerateError):
        gt.true_fundamentals(0, 1)


# -- on-disk layout ---------------------------------------------------------------


def test_write_produces_the_full_tree(tmp_path):
    gt = generate(_patch_scene(), out_dir=tmp_path / "scene")
    root = tmp_path / "scene"
    assert len(list((root / "flow_fwd").glob("*.flo"))) == 6
    assert len(list((root / "flow_bwd").glob("*.flo"))) == 6
    assert len(list((root / "masks").glob("*.png"))) == 7
    assert len(list((root / "visibility").glob("*.png"))) == 6
    doc = json.loads((root / "cameras.json").read_text())
    assert len(doc["cameras"]) == 7
    assert len(doc["K"]) == 9
    # pairs (t, t+1) and (t, t+2): (F-1) + (F-2) entries
    assert len(doc["fundamentals"]) == 11


def test_write_twice_is_byte_identical(tmp_path):
    cfg = _patch_scene(noise_sigma=0.2, outlier_fraction=0.05)
    generate(cfg, out_dir=tmp_path / "a")
    generate(_patch_scene(noise_sigma=0.2, outlier_fraction=0.05), out_dir=tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
