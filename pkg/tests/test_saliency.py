"""Trajectory scoring, ED rasters, motion images and thresholding.

The hand fixture is a 2x2 image over 3 frames where nothing moves, scored
against the symmetric matrix

    S = [[0,0,0],
         [0,0,1],
         [0,1,0]]

used for all three pairs.  For a repeated point (x, y):  l = S (x,y,1) =
(0, 1, y), so each directed distance is |y + y| = 2y and the six-way sum
is 12y.  Pixels in the top row (y = 0) therefore score 0, bottom-row
pixels (y = 1) score 12, and a two-frame trajectory at (0, 1) falls back
to half its two-way pair distance: (2 + 2) / 2 = 2.
"""

import json

import numpy as np
import pytest

from epimotion.errors import ArgError
from epimotion.flow_io import FlowField, read_mask, read_pfm
from epimotion.geometry import TripletGeometry
from epimotion.saliency import (
    default_tau,
    ed_maps,
    export_training_set,
    input_dropout,
    motion_images,
    normalize_ed,
    threshold_saliency,
    trajectory_ed,
)
from epimotion.trajectories import TrajectorySet

S = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]])


def _geom():
    return TripletGeometry(S.copy(), S.copy(), S.copy())


def _set_with_short_trajectories(respawn_length):
    """Four seeds on a 2x2 grid; the seed at (0, 1) dies after frame 1 and
    its pixel is re-owned by a fresh trajectory of the given length (1: a
    final-frame respawn that stays undefined; 2: a last-pair fallback)."""
    start = [0, 0, 0, 0, 3 - respawn_length]
    length = [3, 3, 2, 3, respawn_length]
    points = np.array(
        [[0, 0]] * 3  # id 0 stays at (0, 0)
        + [[1, 0]] * 3  # id 1 stays at (1, 0)
        + [[0, 1]] * 2  # id 2: two frames at (0, 1)
        + [[1, 1]] * 3  # id 3 stays at (1, 1)
        + [[0, 1]] * respawn_length,  # id 4 re-owns (0, 1)
        dtype=np.float64,
    )
    assignment = np.array(
        [
            [[0, 1], [2, 3]],
            [[0, 1], [2, 3]],
            [[0, 1], [4, 3]],
        ],
        dtype=np.int32,
    )
    ts = TrajectorySet(
        frame_count=3,
        height=2,
        width=2,
        start=np.array(start, np.int32),
        length=np.array(length, np.int32),
        points=points,
        assignment=assignment,
    )
    ts.validate()
    return ts


# -- trajectory scores ---------------------------------------------------------


def test_hand_scores_with_pair_fallbacks():
    ts = _set_with_short_trajectories(respawn_length=2)
    ted = trajectory_ed(ts, [_geom()])
    # y = 0 rows score 0; (1,1) scores 12; both two-frame trajectories at
    # (0,1) fall back to (2 + 2) / 2 = 2 -- id 2 through the first pair
    # (F21), id 4 through the final pair (F32).
    np.testing.assert_allclose(ted.values, [0.0, 0.0, 2.0, 12.0, 2.0])
    assert ted.defined.all()


def test_single_point_trajectory_is_undefined():
    ts = _set_with_short_trajectories(respawn_length=1)
    ted = trajectory_ed(ts, [_geom()])
    np.testing.assert_allclose(ted.values, [0.0, 0.0, 2.0, 12.0, 0.0])
    np.testing.assert_array_equal(ted.defined, [True, True, True, True, False])


def test_geometry_count_is_checked():
    ts = _set_with_short_trajectories(respawn_length=1)
    with pytest.raises(ArgError):
        trajectory_ed(ts, [_geom(), _geom()])


# -- rasters ---------------------------------------------------------------------


def test_ed_maps_paint_owner_scores():
    ts = _set_with_short_trajectories(respawn_length=2)
    maps = ed_maps(ts, trajectory_ed(ts, [_geom()]))
    assert maps.shape == (3, 2, 2)
    np.testing.assert_allclose(maps[0], [[0.0, 0.0], [2.0, 12.0]])
    np.testing.assert_allclose(maps[1], [[0.0, 0.0], [2.0, 12.0]])
    np.testing.assert_allclose(maps[2], [[0.0, 0.0], [2.0, 12.0]])


def test_ed_maps_median_fill_undefined_pixel():
    ts = _set_with_short_trajectories(respawn_length=1)
    maps = ed_maps(ts, trajectory_ed(ts, [_geom()]))
    # frame 2: pixel (1,0) has no score; its defined neighbours carry
    # {0, 0, 12}, whose median 0 fills the hole
    np.testing.assert_allclose(maps[2], [[0.0, 0.0], [0.0, 12.0]])


def test_all_undefined_fills_with_zero():
    ts = _set_with_short_trajectories(respawn_length=1)
    ted = trajectory_ed(ts, [_geom()])
    ted.defined[:] = False
    maps = ed_maps(ts, ted)
    np.testing.assert_array_equal(maps, 0.0)


def test_default_tau_is_five_medians():
    maps = np.array([[[0.0, 1.0], [2.0, 3.0]]])
    assert default_tau(maps) == 7.5  # median 1.5 * 5


# -- normalization and motion images ----------------------------------------------


def test_normalize_ed_clamps_at_percentile():
    maps = np.arange(101, dtype=np.float64).reshape(101, 1, 1)
    out = normalize_ed(maps)  # 99th percentile of 0..100 is 99
    assert out[99, 0, 0] == 1.0
    assert out[100, 0, 0] == 1.0  # clamped
    assert out[98, 0, 0] == pytest.approx(98.0 / 99.0)
    assert out[0, 0, 0] == 0.0


def test_normalize_ed_degenerate_percentile_binarizes():
    maps = np.zeros((1, 10, 100))
    maps[0, 0, :3] = 4.0  # three spikes, well under 1% of 1000 pixels
    out = normalize_ed(maps)
    np.testing.assert_array_equal(out, (maps > 0).astype(np.float64))


def test_normalize_ed_validates_percentile():
    with pytest.raises(ArgError):
        normalize_ed(np.zeros((1, 2, 2)), percentile=0.0)
    with pytest.raises(ArgError):
        normalize_ed(np.zeros((1, 2, 2)), percentile=101.0)


def test_motion_images_stack_and_reuse_last_flow():
    h, w = 3, 4
    flows = [
        FlowField(w, h, np.full((h, w), t + 1.0, np.float32), np.zeros((h, w), np.float32))
        for t in range(2)
    ]
    maps = np.stack([np.full((h, w), 0.1 * t) for t in range(3)])
    imgs = motion_images(flows, maps)
    assert len(imgs) == 3
    for img in imgs:
        assert img.shape == (h, w, 3)
        assert img.dtype == np.float32
    np.testing.assert_array_equal(imgs[0][:, :, 0], 1.0)
    np.testing.assert_array_equal(imgs[1][:, :, 0], 2.0)
    np.testing.assert_array_equal(imgs[2][:, :, 0], 2.0)  # reused
    np.testing.assert_allclose(imgs[2][:, :, 2], 0.2, rtol=1e-6)
    with pytest.raises(ArgError):
        motion_images(flows[:1], maps)


def test_input_dropout_modes():
    rng = np.random.default_rng(0)
    img = np.dstack([np.ones((2, 2)), np.full((2, 2), 2.0), np.full((2, 2), 0.7)]).astype(
        np.float32
    )
    z = input_dropout(img, "zero", rng)
    np.testing.assert_array_equal(z[:, :, 2], 0.0)
    np.testing.assert_array_equal(z[:, :, :2], img[:, :, :2])  # u, v untouched
    n1 = input_dropout(img, "noise", np.random.default_rng(5))
    n2 = input_dropout(img, "noise", np.random.default_rng(5))
    np.testing.assert_array_equal(n1, n2)
    assert ((0 <= n1[:, :, 2]) & (n1[:, :, 2] < 1)).all()
    with pytest.raises(ArgError):
        input_dropout(img, "blur", rng)
    with pytest.raises(ArgError):
        input_dropout(img[:, :, :2], "zero", rng)


# -- training-set export -----------------------------------------------------------


def _imgs_and_masks(n, h=4, w=5):
    rng = np.random.default_rng(42)
    imgs = [rng.random((h, w, 3)).astype(np.float32) for _ in range(n)]
    masks = [(rng.random((h, w)) > 0.5).astype(np.uint8) for _ in range(n)]
    return imgs, masks


def test_export_counts_and_modes(tmp_path):
    imgs, masks = _imgs_and_masks(5)
    manifest = export_training_set(imgs, masks, tmp_path, dropout_fraction=0.4, seed=1)
    # ceil(0.4 * 5) = 2 perturbed frames: first half zero, rest noise
    modes = [e["dropout"] for e in manifest["frames"] if e["dropout"]]
    assert sorted(modes) == ["noise", "zero"]
    assert len(manifest["frames"]) == 5
    assert len(list(tmp_path.glob("*.pfm"))) == 5
    assert len(list(tmp_path.glob("*.png"))) == 5
    disk = json.loads((tmp_path / "manifest.json").read_text())
    assert disk == manifest


def test_export_zero_mode_blanks_the_stored_channel(tmp_path):
    imgs, masks = _imgs_and_masks(2)
    manifest = export_training_set(imgs, masks, tmp_path, dropout_fraction=0.5, seed=0)
    zeroed = [e for e in manifest["frames"] if e["dropout"] == "zero"]
    assert len(zeroed) == 1
    stored = read_pfm(tmp_path / zeroed[0]["file"])
    np.testing.assert_array_equal(stored[:, :, 2], 0.0)
    t = zeroed[0]["index"]
    np.testing.assert_array_equal(stored[:, :, :2], imgs[t][:, :, :2])


def test_export_without_dropout_or_masks(tmp_path):
    imgs, _ = _imgs_and_masks(3)
    manifest = export_training_set(imgs, None, tmp_path, dropout_fraction=0.0)
    assert all(e["dropout"] is None for e in manifest["frames"])
    assert not list(tmp_path.glob("*.png"))
    for t in range(3):
        np.testing.assert_array_equal(read_pfm(tmp_path / f"{t:06d}.pfm"), imgs[t])


def test_export_is_deterministic(tmp_path):
    imgs, masks = _imgs_and_masks(6)
    a, b = tmp_path / "a", tmp_path / "b"
    export_training_set(imgs, masks, a, dropout_fraction=0.5, seed=3)
    export_training_set(imgs, masks, b, dropout_fraction=0.5, seed=3)
    for p in sorted(a.iterdir()):
        assert p.read_bytes() == (b / p.name).read_bytes()


def test_export_validation(tmp_path):
    imgs, masks = _imgs_and_masks(3)
    with pytest.raises(ArgError):
        export_training_set([], None, tmp_path)
    with pytest.raises(ArgError):
        export_training_set(imgs, masks[:2], tmp_path)
    with pytest.raises(ArgError):
        export_training_set(imgs, masks, tmp_path, dropout_fraction=1.5)


def test_export_masks_binarized_on_disk(tmp_path):
    imgs, masks = _imgs_and_masks(2)
    export_training_set(imgs, masks, tmp_path)
    np.testing.assert_array_equal(read_mask(tmp_path / "000000.png"), masks[0])


# -- thresholding ------------------------------------------------------------------


def test_threshold_hand_case():
    out = threshold_saliency(np.array([[0.0, 1.0], [10.0, 10.0]]), tau=5.0)
    assert out.dtype == np.uint8
    np.testing.assert_array_equal(out, [[0, 0], [1, 1]])


def test_threshold_is_strictly_greater():
    np.testing.assert_array_equal(threshold_saliency(np.array([[5.0]]), tau=5.0), [[0]])


def test_threshold_small_regions_removed():
    ed = np.zeros((6, 6))
    ed[1:3, 1:3] = 10.0  # 4-px square: kept
    ed[4, 4:6] = 10.0  # 2-px domino: dropped
    out = threshold_saliency(ed, tau=5.0, min_region_px=3)
    want = np.zeros((6, 6), np.uint8)
    want[1:3, 1:3] = 1
    np.testing.assert_array_equal(out, want)


def test_threshold_closing_fills_pinholes():
    ed = np.zeros((5, 5))
    ed[1:4, 1:4] = 10.0
    ed[2, 2] = 0.0  # one-pixel hole
    out = threshold_saliency(ed, tau=5.0)
    want = np.zeros((5, 5), np.uint8)
    want[1:4, 1:4] = 1  # hole closed
    np.testing.assert_array_equal(out, want)


def test_threshold_validation():
    with pytest.raises(ArgError):
        threshold_saliency(np.zeros((2, 2)), tau=-1.0)
    with pytest.raises(ArgError):
        threshold_saliency(np.zeros((2, 2)), tau=1.0, min_region_px=0)


def test_threshold_monotone_in_tau():
    rng = np.random.default_rng(11)
    ed = rng.random((12, 12)) * 10.0
    lo = threshold_saliency(ed, tau=2.0)
    hi = threshold_saliency(ed, tau=6.0)
    # raising tau can only shrink the mask (closing preserves inclusion)
    assert not (hi.astype(bool) & ~lo.astype(bool)).any()
