import numpy as np

from driftcheck.graph import Node, OpKind
from driftcheck.kernels import conv2d, evaluate_node, linear, nms_detections, softmax
from driftcheck.tensor import reduce_pairwise, reduce_sequential


def _x(*shape):
    return np.arange(np.prod(shape), dtype=np.float32).reshape(shape)


def test_conv2d_identity_kernel():
    x = _x(1, 1, 3, 3)
    w = np.zeros((1, 1, 3, 3), dtype=np.float32)
    w[0, 0, 1, 1] = 1.0
    out = conv2d(x, w, np.array([0.5], dtype=np.float32), stride=1, padding=1, reduce=reduce_sequential)
    assert out.shape == (1, 1, 3, 3)
    np.testing.assert_array_equal(out, x + 0.5)


def test_conv2d_stride():
    x = np.ones((1, 2, 4, 4), dtype=np.float32)
    w = np.ones((3, 2, 2, 2), dtype=np.float32)
    out = conv2d(x, w, np.zeros(3, dtype=np.float32), stride=2, padding=0, reduce=reduce_pairwise)
    assert out.shape == (1, 3, 2, 2)
    assert np.all(out == 8.0)


def test_linear():
    x = np.array([[1.0, 2.0]], dtype=np.float32)
    w = np.array([[1.0, 1.0], [2.0, -1.0]], dtype=np.float32)
    out = linear(x, w, np.array([0.0, 1.0], dtype=np.float32), reduce_sequential)
    np.testing.assert_array_equal(out, [[3.0, 1.0]])


def test_softmax_rows_sum_to_one():
    out = softmax(np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]], dtype=np.float32), axis=1, reduce=reduce_sequential)
    np.testing.assert_allclose(out.sum(axis=1), [1.0, 1.0], rtol=1e-6)
    np.testing.assert_allclose(out[1], [1 / 3] * 3, rtol=1e-6)


def _node(op, n_inputs=1, **attrs):
    return Node(id="n", op=op, inputs=tuple(f"i{k}" for k in range(n_inputs)), output="n", attrs=attrs)


def test_pooling_and_argmax():
    x = _x(1, 2, 4, 4)
    pooled = evaluate_node(_node(OpKind.MaxPool2d, kernel=2, stride=2), [x], reduce_sequential)
    np.testing.assert_array_equal(pooled[0, 0], [[5.0, 7.0], [13.0, 15.0]])
    gap = evaluate_node(_node(OpKind.GlobalAvgPool), [x], reduce_sequential)
    assert gap.shape == (1, 2, 1, 1)
    assert gap[0, 0, 0, 0] == 7.5
    # 平局取通道下标最小者
    tie = np.zeros((1, 3, 1, 2), dtype=np.float32)
    tie[0, 2, 0, 1] = 1.0
    np.testing.assert_array_equal(evaluate_node(_node(OpKind.ArgmaxChannel), [tie], reduce_sequential), [[[[0.0, 2.0]]]])


def test_shape_ops():
    a, b = _x(1, 2, 2, 2), _x(1, 1, 2, 2)
    assert evaluate_node(_node(OpKind.Concat, 2, axis=1), [a, b], reduce_sequential).shape == (1, 3, 2, 2)
    assert evaluate_node(_node(OpKind.Flatten), [a], reduce_sequential).shape == (1, 8)
    resized = evaluate_node(_node(OpKind.BilinearResize, out_h=4, out_w=4), [a], reduce_sequential)
    assert resized.shape == (1, 2, 4, 4)
    scaled = evaluate_node(
        _node(OpKind.BatchNormAffine, 3),
        [a, np.array([2.0, 0.0], dtype=np.float32), np.array([1.0, 1.0], dtype=np.float32)],
        reduce_sequential,
    )
    np.testing.assert_array_equal(scaled[0, 0], a[0, 0] * 2 + 1)
    np.testing.assert_array_equal(scaled[0, 1], np.ones((2, 2)))


def test_nms_detections_canonicalises_boxes():
    boxes = np.array([[[10.0, 10.0, 0.0, 0.0], [50.0, 50.0, 60.0, 60.0]]], dtype=np.float32).reshape(1, 8)
    scores = np.array([[0.4, 0.9]], dtype=np.float32)
    rows = nms_detections(boxes, scores, 0.5, "stable", False)
    expected = np.array([[50, 50, 60, 60, 0.9], [0, 0, 10, 10, 0.4]], dtype=np.float32)
    np.testing.assert_array_equal(rows, expected)
