"""Region/boundary metric identities and sequence evaluation."""

import numpy as np
import pytest

from epimotion.errors import ArgError
from epimotion.flow_io import write_mask
from epimotion.metrics import EvalReport, boundary_f, evaluate_sequence, iou, region_stats


def _box(h, w, y0, y1, x0, x1):
    m = np.zeros((h, w), dtype=np.uint8)
    m[y0:y1, x0:x1] = 1
    return m


# -- iou ------------------------------------------------------------------------


def test_iou_identical_masks():
    m = _box(8, 8, 2, 5, 2, 5)
    assert iou(m, m) == 1.0


def test_iou_hand_counted_two_of_six():
    # pred covers cells {0,1,2,3}, gt covers {2,3,4,5}: intersection 2,
    # union 6
    pred = np.array([[1, 1, 1, 1, 0, 0]], dtype=np.uint8)
    gt = np.array([[0, 0, 1, 1, 1, 1]], dtype=np.uint8)
    assert iou(pred, gt) == pytest.approx(2.0 / 6.0, abs=1e-9)


def test_iou_disjoint_is_zero():
    assert iou(_box(6, 6, 0, 2, 0, 2), _box(6, 6, 4, 6, 4, 6)) == 0.0


def test_iou_both_empty_is_one():
    z = np.zeros((4, 4), dtype=np.uint8)
    assert iou(z, z) == 1.0


def test_iou_semi_empty():
    z = np.zeros((4, 4), dtype=np.uint8)
    assert iou(z, _box(4, 4, 0, 2, 0, 2)) == 0.0


def test_iou_is_symmetric():
    rng = np.random.default_rng(0)
    a = (rng.random((9, 9)) > 0.6).astype(np.uint8)
    b = (rng.random((9, 9)) > 0.6).astype(np.uint8)
    assert iou(a, b) == iou(b, a)


def test_iou_shape_mismatch():
    with pytest.raises(ArgError):
        iou(np.zeros((2, 2)), np.zeros((3, 3)))


# -- summaries --------------------------------------------------------------------


def test_region_stats_flat_series():
    mean, recall, decay = region_stats([0.8, 0.8, 0.8, 0.8])
    assert (mean, recall, decay) == (pytest.approx(0.8), 1.0, pytest.approx(0.0))


def test_region_stats_two_frames():
    # quarters collapse to single frames: decay = 1.0 - 0.0
    mean, recall, decay = region_stats([1.0, 0.0])
    assert mean == 0.5
    assert recall == 0.5  # only the first frame clears 0.5
    assert decay == 1.0


def test_region_stats_recall_is_strict():
    assert region_stats([0.5, 0.5])[1] == 0.0


def test_region_stats_declining_series():
    mean, recall, decay = region_stats([0.9, 0.7, 0.5, 0.3])
    assert mean == pytest.approx(0.6)
    assert recall == 0.5
    assert decay == pytest.approx(0.9 - 0.3)


def test_region_stats_five_frames_split():
    # array_split gives chunks [a,b],[c],[d],[e]: decay = mean(1,2) - 5
    _, _, decay = region_stats([1.0, 2.0, 3.0, 4.0, 5.0])
    assert decay == pytest.approx(1.5 - 5.0)


def test_region_stats_empty_raises():
    with pytest.raises(ArgError):
        region_stats([])


# -- boundary F ---------------------------------------------------------------------


def test_boundary_identical():
    assert boundary_f(_box(20, 20, 5, 12, 6, 14), _box(20, 20, 5, 12, 6, 14)) == 1.0


def test_boundary_within_tolerance():
    # one-pixel shift with radius 2: every boundary pixel is matched
    assert boundary_f(_box(20, 20, 5, 12, 6, 14), _box(20, 20, 6, 13, 6, 14), radius=2) == 1.0


def test_boundary_far_apart_scores_zero():
    assert boundary_f(_box(30, 30, 2, 6, 2, 6), _box(30, 30, 20, 26, 20, 26), radius=2) == 0.0


def test_boundary_empty_cases():
    z = np.zeros((10, 10), dtype=np.uint8)
    assert boundary_f(z, z) == 1.0
    assert boundary_f(z, _box(10, 10, 2, 5, 2, 5)) == 0.0
    assert boundary_f(_box(10, 10, 2, 5, 2, 5), z) == 0.0


def test_boundary_default_radius_scales_with_diagonal():
    # 500x500: radius = ceil(0.008 * 707.1) = 6, so a 3 px shift matches
    a = _box(500, 500, 100, 200, 100, 200)
    b = _box(500, 500, 103, 203, 100, 200)
    assert boundary_f(a, b) == 1.0
    # 40x40: radius = ceil(0.008 * 56.6) = 1, the same shift misses
    a = _box(40, 40, 10, 20, 10, 20)
    b = _box(40, 40, 13, 23, 10, 20)
    assert boundary_f(a, b) < 1.0


def test_boundary_validation():
    with pytest.raises(ArgError):
        boundary_f(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ArgError):
        boundary_f(np.zeros((9, 9)), np.zeros((9, 9)), radius=0)


# -- sequence evaluation ---------------------------------------------------------------


def _write_masks(d, masks):
    d.mkdir(parents=True, exist_ok=True)
    for t, m in enumerate(masks):
        write_mask(d / f"{t:06d}.png", m)


def test_gt_against_itself_is_perfect(tmp_path):
    masks = [_box(16, 16, 2 + t, 9 + t, 3, 10) for t in range(5)]
    _write_masks(tmp_path / "pred", masks)
    _write_masks(tmp_path / "gt", masks)
    report = evaluate_sequence(tmp_path / "pred", tmp_path / "gt")
    assert report.frames == [f"{t:06d}.png" for t in range(1, 5)]  # first skipped
    assert report.j == [1.0] * 4
    assert report.f == [1.0] * 4
    s = report.summary()
    assert s["j_mean"] == 1.0 and s["f_mean"] == 1.0
    assert s["j_decay"] == 0.0 and s["f_decay"] == 0.0
    assert s["j_recall"] == 1.0


def test_count_mismatch_raises(tmp_path):
    masks = [_box(8, 8, 1, 4, 1, 4)] * 3
    _write_masks(tmp_path / "pred", masks[:2])
    _write_masks(tmp_path / "gt", masks)
    with pytest.raises(ArgError):
        evaluate_sequence(tmp_path / "pred", tmp_path / "gt")


def test_empty_prediction_dir_raises(tmp_path):
    (tmp_path / "pred").mkdir()
    _write_masks(tmp_path / "gt", [_box(8, 8, 1, 4, 1, 4)])
    with pytest.raises(ArgError):
        evaluate_sequence(tmp_path / "pred", tmp_path / "gt")


def test_single_frame_raises(tmp_path):
    _write_masks(tmp_path / "pred", [_box(8, 8, 1, 4, 1, 4)])
    _write_masks(tmp_path / "gt", [_box(8, 8, 1, 4, 1, 4)])
    with pytest.raises(ArgError):
        evaluate_sequence(tmp_path / "pred", tmp_path / "gt")


def test_report_serialization():
    report = EvalReport(frames=["a.png", "b.png"], j=[1.0, 0.5], f=[1.0, 1.0])
    import json

    doc = json.loads(report.to_json())
    assert doc["summary"]["j_mean"] == 0.75
    table = report.to_table()
    assert "J" in table and "F" in table and "decay" in table
