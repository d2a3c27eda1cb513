import numpy as np
import pytest

from driftcheck.errors import InvalidConfigError, ShapeError
from driftcheck.metrics import detection_f1, detection_f1_rows, iou, miou, topk_agreement


def test_iou():
    assert iou((0, 0, 2, 2), (1, 0, 3, 2)) == pytest.approx(1 / 3)
    assert iou((0, 0, 1, 1), (0, 0, 1, 1)) == 1.0
    assert iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
    assert iou((1, 1, 1, 1), (1, 1, 1, 1)) == 0.0


def test_topk_identical():
    logits = np.array([0.1, 0.5, 0.2, 0.9, 0.3])
    assert topk_agreement(logits, logits, k=3) == (True, 1.0)


def test_topk_partial_agreement():
    ref = np.array([5.0, 4.0, 3.0, 2.0, 1.0])
    tgt = np.array([1.0, 4.0, 3.0, 2.0, 5.0])
    top1, frac = topk_agreement(ref, tgt, k=2)
    assert top1 is False
    assert frac == 0.5


def test_topk_k_out_of_range():
    v = np.zeros(4)
    with pytest.raises(InvalidConfigError):
        topk_agreement(v, v, k=5)
    with pytest.raises(ShapeError):
        topk_agreement(v, np.zeros(3), k=1)


def test_miou_skips_absent_classes():
    ref = np.array([0, 0, 1, 1])
    tgt = np.array([0, 1, 1, 1])
    assert miou(ref, tgt, num_classes=3) == pytest.approx((0.5 + 2 / 3) / 2)


def test_miou_empty_masks():
    assert miou(np.array([]), np.array([]), num_classes=2) == 1.0


def test_miou_rejects_out_of_range_labels():
    with pytest.raises(InvalidConfigError):
        miou(np.array([0, 3]), np.array([0, 1]), num_classes=2)


def test_detection_f1_cases():
    boxes = np.array([[0, 0, 10, 10], [20, 20, 30, 30]], dtype=np.float64)
    scores = np.array([0.9, 0.8])
    assert detection_f1(boxes, scores, boxes, scores) == 1.0
    assert detection_f1(boxes[:0], scores[:0], boxes[:0], scores[:0]) == 1.0
    assert detection_f1(boxes, scores, boxes[:0], scores[:0]) == 0.0
    assert detection_f1(boxes, scores, boxes[:1], scores[:1]) == pytest.approx(2 / 3)


def test_detection_match_at_exact_threshold():
    ref = np.array([[0, 0, 2, 2]], dtype=np.float64)
    tgt = np.array([[0, 0, 2, 1]], dtype=np.float64)
    one = np.ones(1)
    assert detection_f1(ref, one, tgt, one, match_iou=0.5) == 1.0
    assert detection_f1(ref, one, tgt, one, match_iou=0.51) == 0.0


def test_detection_f1_rows():
    rows = np.array([[0, 0, 10, 10, 0.9], [50, 50, 60, 60, 0.4]])
    assert detection_f1_rows(rows, rows[::-1]) == 1.0
    assert detection_f1_rows(rows, np.zeros((0, 5))) == 0.0


def _random_boxes(rng, n):
    xy = rng.uniform(0.0, 50.0, size=(n, 2))
    return np.hstack([xy, xy + rng.uniform(1.0, 30.0, size=(n, 2))])


def test_iou_symmetric_and_bounded():
    rng = np.random.default_rng(3)
    a, b = _random_boxes(rng, 200), _random_boxes(rng, 200)
    for box_a, box_b in zip(a, b):
        value = iou(box_a, box_b)
        assert value == iou(box_b, box_a)
        assert 0.0 <= value <= 1.0
        assert iou(box_a, box_a) == 1.0
    assert 0.0 < max(iou(x, y) for x, y in zip(a, b)) < 1.0


def test_detection_f1_is_permutation_invariant():
    rng = np.random.default_rng(9)
    ref_boxes = _random_boxes(rng, 12)
    ref_scores = rng.permutation(12) / 12
    tgt_boxes = ref_boxes + rng.normal(0.0, 1.5, size=ref_boxes.shape)
    tgt_boxes[:, 2:] = np.maximum(tgt_boxes[:, 2:], tgt_boxes[:, :2])
    tgt_scores = ref_scores.copy()
    base = detection_f1(ref_boxes, ref_scores, tgt_boxes[:10], tgt_scores[:10])
    for s in range(3):
        p, q = np.random.default_rng(s).permutation(12), np.random.default_rng(s + 10).permutation(10)
        shuffled = detection_f1(ref_boxes[p], ref_scores[p], tgt_boxes[:10][q], tgt_scores[:10][q])
        assert shuffled == base
