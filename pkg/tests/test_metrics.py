import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import band_brute, fscore_brute, miou_brute
from semdiff.metrics import (
    boundary_fscore,
    boundary_mask,
    confusion_matrix,
    evaluate_pair,
    mean_defined,
    miou,
)


def split4():
    gt = np.zeros((4, 4), dtype=int)
    gt[:, 2:] = 1
    return gt


def test_hand_case_confusion_and_miou():
    gt = np.array([[0, 1], [1, 1]])
    pred = np.array([[0, 0], [1, 1]])
    cm = confusion_matrix(pred, gt, 2)
    np.testing.assert_array_equal(cm, [[1, 0], [1, 2]])
    assert miou(cm) == pytest.approx(7 / 12, abs=1e-15)


def test_perfect_prediction():
    gt = np.random.default_rng(0).integers(0, 3, size=(6, 6))
    r = evaluate_pair(gt, gt, 3)
    assert r == {"miou": 1.0, "f1px": 1.0, "f3px": 1.0}


def test_split_band_sizes():
    gt = split4()
    assert boundary_mask(gt, 1).sum() == 8
    assert boundary_mask(gt, 1)[:, 1:3].all()
    assert boundary_mask(gt, 3).sum() == 16


def test_shifted_boundary_fscore():
    gt = split4()
    pred = np.zeros((4, 4), dtype=int)
    pred[:, 3:] = 1
    # class 0: precision 1/2, recall 1; class 1: nothing right
    assert boundary_fscore(pred, gt, 1) == pytest.approx(1 / 3, abs=1e-15)
    assert boundary_fscore(pred, gt, 1) == fscore_brute(pred.tolist(), gt.tolist(), 1)


def test_empty_cases_return_none():
    uniform = np.zeros((5, 5), dtype=int)
    assert boundary_fscore(uniform, uniform, 1) is None
    assert miou(np.zeros((3, 3), dtype=int)) is None
    assert mean_defined([None, None]) is None
    assert mean_defined([None, 0.5, 1.0]) == 0.75


def test_input_validation():
    with pytest.raises(ValueError):
        confusion_matrix(np.zeros((2, 2), dtype=int), np.zeros((2, 3), dtype=int), 2)
    with pytest.raises(ValueError):
        confusion_matrix(np.full((2, 2), 3), np.zeros((2, 2), dtype=int), 2)
    with pytest.raises(ValueError):
        confusion_matrix(np.zeros((2, 2)), np.zeros((2, 2), dtype=int), 2)
    with pytest.raises(ValueError):
        boundary_mask(split4(), 2)


def test_masked_confusion_counts():
    gt = split4()
    pred = np.zeros_like(gt)
    band = boundary_mask(gt, 1)
    cm = confusion_matrix(pred, gt, 2, mask=band)
    assert cm.sum() == band.sum()


label_maps = st.integers(2, 4).flatmap(
    lambda n: st.tuples(
        st.just(n),
        st.lists(st.integers(0, n - 1), min_size=64, max_size=64),
        st.lists(st.integers(0, n - 1), min_size=64, max_size=64),
    )
)


@settings(max_examples=50, deadline=None)
@given(label_maps)
def test_class_permutation_invariance(case):
    n, p, g = case
    pred, gt = np.array(p).reshape(8, 8), np.array(g).reshape(8, 8)
    perm = np.random.default_rng(n).permutation(n)
    a = evaluate_pair(pred, gt, n)
    b = evaluate_pair(perm[pred], perm[gt], n)
    for key in a:
        assert a[key] == pytest.approx(b[key], abs=1e-12) if a[key] is not None else b[key] is None


@settings(max_examples=50, deadline=None)
@given(label_maps)
def test_band_nesting(case):
    _, _, g = case
    gt = np.array(g).reshape(8, 8)
    b1, b3 = boundary_mask(gt, 1), boundary_mask(gt, 3)
    assert not (b1 & ~b3).any()


def test_thousand_random_maps_match_brute_force():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(rng.integers(1, 5))
        # blocky maps so bands are neither empty nor everything
        gt = np.kron(rng.integers(0, n, size=(4, 4)), np.ones((2, 2), dtype=int))
        pred = np.where(rng.random((8, 8)) < 0.3, rng.integers(0, n, size=(8, 8)), gt)
        cm = confusion_matrix(pred, gt, n)
        assert miou(cm) == miou_brute(pred.tolist(), gt.tolist(), n)
        for width in (1, 3):
            mask = boundary_mask(gt, width)
            assert {tuple(ij) for ij in np.argwhere(mask)} == band_brute(gt.tolist(), width)
            assert boundary_fscore(pred, gt, width) == fscore_brute(pred.tolist(), gt.tolist(), width)
