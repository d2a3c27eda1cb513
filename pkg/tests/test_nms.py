import numpy as np
import pytest

from driftcheck.errors import InvalidConfigError, ShapeError
from driftcheck.nms import nms, pre_nms_sort, visit_order

A = (10.0, 10.0, 50.0, 50.0)
B = (20.0, 10.0, 60.0, 50.0)
C = (30.0, 10.0, 70.0, 50.0)


def _boxes(*boxes):
    return np.array(boxes, dtype=np.float64)


def test_suppresses_overlapping_lower_score():
    boxes = _boxes((0, 0, 10, 10), (1, 1, 11, 11), (50, 50, 60, 60))
    scores = np.array([0.9, 0.8, 0.7])
    assert nms(boxes, scores, 0.5) == [0, 2]


def test_equal_iou_is_not_suppressed():
    # IoU 恰好 0.5：严格大于才抑制
    boxes = _boxes((0, 0, 3, 1), (1, 0, 4, 1))
    assert nms(boxes, np.array([1.0, 0.5]), 0.5) == [0, 1]
    assert nms(boxes, np.array([1.0, 0.5]), 0.49) == [0]


def test_tie_visit_order():
    boxes = _boxes(A, B, C)
    scores = np.array([10.0, 10.0, 9.0])
    assert visit_order(boxes, scores, "stable") == [0, 1, 2]
    assert visit_order(boxes, scores, "unstable") == [1, 0, 2]


def test_tie_changes_kept_set():
    boxes = _boxes(A, B, C)
    scores = np.array([10.0, 10.0, 9.0])
    assert nms(boxes, scores, 0.5, "stable") == [0, 2]
    assert nms(boxes, scores, 0.5, "unstable") == [1]


def test_pre_sorted_breaks_ties_by_coordinates():
    boxes = _boxes(B, A, C)
    scores = np.array([10.0, 10.0, 9.0])
    assert pre_nms_sort(boxes, scores) == [1, 0, 2]
    assert nms(boxes, scores, 0.5, "stable", pre_sorted=True) == [1, 2]
    assert nms(boxes, scores, 0.5, "unstable", pre_sorted=True) == [1, 2]


def test_pre_sorted_full_key_ties_still_reverse():
    boxes = _boxes(A, A, C)
    scores = np.array([10.0, 10.0, 9.0])
    assert visit_order(boxes, scores, "unstable", pre_sorted=True) == [1, 0, 2]


def test_empty_input():
    assert nms(np.zeros((0, 4)), np.zeros(0), 0.5) == []


def test_invalid_policy_and_threshold():
    boxes = _boxes(A)
    with pytest.raises(InvalidConfigError):
        visit_order(boxes, np.array([1.0]), "random")
    with pytest.raises(InvalidConfigError):
        nms(boxes, np.array([1.0]), 1.5)


def test_malformed_candidates():
    with pytest.raises(ShapeError):
        nms(np.zeros((2, 3)), np.zeros(2), 0.5)
    with pytest.raises(ShapeError):
        nms(_boxes(A), np.zeros(2), 0.5)
    with pytest.raises(ShapeError):
        nms(_boxes((5, 5, 1, 1)), np.zeros(1), 0.5)


def _random_candidates(seed, n=40):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0.0, 80.0, size=(n, 2))
    wh = rng.uniform(1.0, 20.0, size=(n, 2))
    scores = rng.permutation(n) / n
    return np.hstack([xy, xy + wh]), scores


def _keys(boxes, scores, order):
    return [(scores[i], boxes[i, 0], boxes[i, 1]) for i in order]


@pytest.mark.parametrize("seed", range(5))
def test_pre_nms_sort_is_permutation_invariant(seed):
    boxes, scores = _random_candidates(seed)
    order = pre_nms_sort(boxes, scores)
    assert sorted(order) == list(range(len(scores)))

    perm = np.random.default_rng(seed + 100).permutation(len(scores))
    shuffled = pre_nms_sort(boxes[perm], scores[perm])
    assert _keys(boxes[perm], scores[perm], shuffled) == _keys(boxes, scores, order)


@pytest.mark.parametrize("policy", ["stable", "unstable"])
def test_pre_sorted_nms_is_permutation_invariant(policy):
    boxes, scores = _random_candidates(7)
    # 分数离散成 4 档，制造大量分数平局，坐标仍各不相同
    scores = np.floor(scores * 4) / 4
    kept = {tuple(boxes[i]) for i in nms(boxes, scores, 0.3, policy, pre_sorted=True)}
    for s in range(3):
        perm = np.random.default_rng(s).permutation(len(scores))
        kept_perm = nms(boxes[perm], scores[perm], 0.3, policy, pre_sorted=True)
        assert {tuple(boxes[perm][i]) for i in kept_perm} == kept
