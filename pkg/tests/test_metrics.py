import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afnoseg.errors import InputError
from afnoseg.metrics import (MetricReport, boundary_voxels, dsc, dsc_reference,
                             evaluate, hd95, hd95_reference, nearest_rank)


def _blob(rng, shape=(8, 8, 8), p=0.2):
    return rng.random(shape) < p


def test_dsc_identical_masks():
    m = np.zeros((4, 4, 4), bool)
    m[1:3, 1:3, 1:3] = True
    assert dsc(m, m) == 1.0


def test_dsc_disjoint_masks():
    a = np.zeros((4, 4, 4), bool)
    b = np.zeros((4, 4, 4), bool)
    a[0, 0, 0] = True
    b[3, 3, 3] = True
    assert dsc(a, b) == 0.0


def test_dsc_counted_case():
    # |G| = 4, |P| = 2, overlap 2 -> 2*2/(4+2)
    g = np.zeros((4, 4, 4), bool)
    p = np.zeros((4, 4, 4), bool)
    g[0, 0, :4] = True
    p[0, 0, :2] = True
    assert dsc(g, p) == pytest.approx(2 * 2 / 6)


def test_dsc_both_empty_is_one():
    z = np.zeros((3, 3, 3), bool)
    assert dsc(z, z) == 1.0


def test_dsc_symmetry_and_reference(rng):
    for _ in range(25):
        a, b = _blob(rng), _blob(rng)
        assert dsc(a, b) == dsc(b, a)
        assert dsc(a, b) == dsc_reference(a, b)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_dsc_monotone_degradation(seed):
    rng = np.random.default_rng(seed)
    g = _blob(rng, (6, 6, 6), 0.3)
    p = g.copy()
    overlap = np.argwhere(g & p)
    if len(overlap) == 0:
        return
    before = dsc(g, p)
    idx = tuple(overlap[rng.integers(len(overlap))])
    p[idx] = False
    assert dsc(g, p) <= before


def test_hd95_identical_masks_zero(rng):
    m = _blob(rng, (6, 6, 6), 0.3)
    if not m.any():
        m[2, 2, 2] = True
    assert hd95(m, m) == 0.0


def test_hd95_two_voxels_three_apart():
    a = np.zeros((8, 8, 8), bool)
    b = np.zeros((8, 8, 8), bool)
    a[2, 4, 4] = True
    b[5, 4, 4] = True
    assert hd95(a, b) == pytest.approx(3.0)


def test_hd95_empty_mask_is_undefined(rng):
    a = _blob(rng)
    assert hd95(a, np.zeros_like(a)) is None
    assert hd95(np.zeros_like(a), a) is None


def test_hd95_symmetry(rng):
    for _ in range(10):
        a, b = _blob(rng), _blob(rng)
        if not a.any() or not b.any():
            continue
        assert hd95(a, b) == hd95(b, a)


def test_hd95_matches_bruteforce_exactly(rng):
    for _ in range(30):
        a, b = _blob(rng, (6, 6, 6), 0.25), _blob(rng, (6, 6, 6), 0.25)
        if not a.any() or not b.any():
            continue
        assert hd95(a, b) == hd95_reference(a, b)


def test_hd95_anisotropic_spacing_matches_bruteforce(rng):
    spacing = (2.0, 1.0, 0.5)
    for _ in range(10):
        a, b = _blob(rng, (5, 5, 5), 0.3), _blob(rng, (5, 5, 5), 0.3)
        if not a.any() or not b.any():
            continue
        assert hd95(a, b, spacing) == hd95_reference(a, b, spacing)


def test_boundary_definition_six_connectivity():
    m = np.zeros((5, 5, 5), bool)
    m[1:4, 1:4, 1:4] = True
    boundary = {tuple(v) for v in boundary_voxels(m)}
    assert (2, 2, 2) not in boundary  # fully interior
    assert (1, 2, 2) in boundary
    # a voxel at the grid edge is boundary (outside counts as background)
    edge = np.zeros((2, 2, 2), bool)
    edge[:] = True
    assert len(boundary_voxels(edge)) == 8


def test_nearest_rank_avoids_float_rounding():
    # 0.95 * 20 is 19.000000000000004 in floats; the integer rank must be 19
    assert nearest_rank(20) == 19
    assert nearest_rank(1) == 1
    assert nearest_rank(100) == 95
    assert nearest_rank(101) == 96


def test_evaluate_identical_masks(rng):
    mask = rng.integers(0, 3, (6, 6, 6)).astype(np.uint8)
    mask[0, 0, 0], mask[0, 0, 1] = 1, 2
    report = evaluate(mask, mask, 3)
    assert report.mean_dsc == 1.0
    assert all(v == 1.0 for v in report.per_class_dsc.values())
    assert all(v == 0.0 for v in report.per_class_hd95.values())
    assert report.mean_hd95 == 0.0


def test_evaluate_all_background_prediction(rng):
    truth = np.zeros((5, 5, 5), np.uint8)
    truth[2, 2, 2] = 1
    pred = np.zeros_like(truth)
    report = evaluate(pred, truth, 2)
    assert report.per_class_dsc[1] == 0.0
    assert report.per_class_hd95[1] is None
    assert report.hd95_undefined == 1
    assert report.mean_hd95 is None


def test_evaluate_mean_is_arithmetic_mean_of_classes(rng):
    pred = rng.integers(0, 4, (6, 6, 6)).astype(np.uint8)
    truth = rng.integers(0, 4, (6, 6, 6)).astype(np.uint8)
    report = evaluate(pred, truth, 4)
    per_class = [dsc(truth == c, pred == c) for c in (1, 2, 3)]
    assert report.mean_dsc == pytest.approx(float(np.mean(per_class)))
    assert 0 not in report.per_class_dsc  # background excluded


def test_evaluate_rejects_out_of_range_labels():
    with pytest.raises(InputError, match="labels"):
        evaluate(np.full((2, 2, 2), 7, np.uint8), np.zeros((2, 2, 2), np.uint8), 3)


def test_report_serialization_roundtrips_none(rng):
    truth = np.zeros((4, 4, 4), np.uint8)
    truth[1, 1, 1] = 1
    report = evaluate(np.zeros_like(truth), truth, 2)
    d = report.to_dict()
    assert d["per_class_hd95"]["1"] is None
    assert isinstance(report, MetricReport)
