import numpy as np
import pytest

from driftcheck.backends import BackendSpec, execute
from driftcheck.errors import InvalidConfigError, ShapeError, UnsupportedOpError
from driftcheck.tensor import DiffStats, Tensor, ToleranceSpec
from driftcheck.verify import (
    Divergence,
    FailureCategory,
    TaskMetrics,
    TaskThresholds,
    Tier1Result,
    build_report,
    classify_failure,
    decide_status,
    fixed_shape_outputs,
    nms_outputs,
    tier1_compare,
    tier2_localize,
    tier3_task,
)

TOL = ToleranceSpec(atol=1e-5, rtol=0.0)
STATS = DiffStats(max_abs_diff=0.0, mae=0.0, p95_abs_diff=0.0, ref_inf_norm=1.0, numel=1)


def _t(*values):
    return Tensor.of(list(values))


def test_tier1_worst_case_over_outputs():
    stats, passed = tier1_compare([_t(1.0, 2.0), _t(3.0)], [_t(1.0, 2.0), _t(3.5)], TOL)
    assert not passed
    assert stats.max_abs_diff == 0.5
    assert stats.numel == 3


def test_tier1_output_count_mismatch():
    with pytest.raises(ShapeError):
        tier1_compare([_t(1.0)], [], TOL)


def test_tier2_first_divergent_node():
    ref = {"a": _t(1.0), "b": _t(2.0), "c": _t(3.0)}
    tgt = {"a": _t(1.0), "b": _t(2.1), "c": _t(9.0)}
    div = tier2_localize(ref, tgt, TOL)
    assert div.node_id == "b"
    assert div.node_index == 1
    assert div.max_abs_diff == pytest.approx(0.1, rel=1e-5)
    assert tier2_localize(ref, dict(ref), TOL) is None


def test_tier2_shape_change_diverges():
    div = tier2_localize({"nms": _t(1.0, 2.0)}, {"nms": _t(1.0)}, TOL)
    assert div == Divergence("nms", 0, None)


def test_output_partition(detector, classifier):
    assert nms_outputs(detector) == ["detections"]
    assert fixed_shape_outputs(detector) == ["candidate_boxes", "candidate_scores"]
    assert fixed_shape_outputs(classifier) == ["probs", "fc"]


def test_tier3_classification(classifier, image):
    out = execute(classifier, {"input": image}, BackendSpec.reference()).outputs
    metrics = tier3_task(classifier, [out], [out])
    assert metrics.passed
    assert metrics.top1_match is True
    assert metrics.topk_agreement == 1.0


def test_tier3_segmentation(segmenter, image):
    out = execute(segmenter, {"input": image}, BackendSpec.reference()).outputs
    flipped = dict(out)
    mask = out["mask"].array.copy()
    mask[0, 0, 0, 0] = (mask[0, 0, 0, 0] + 1) % 4
    flipped["mask"] = Tensor(mask)
    assert tier3_task(segmenter, [out], [out]).miou == 1.0
    metrics = tier3_task(segmenter, [out], [flipped], TaskThresholds(miou=1.0))
    assert metrics.miou < 1.0
    assert not metrics.passed


def test_tier3_detection_tie(tie_detector, image):
    ref = execute(tie_detector, {"input": image}, BackendSpec.reference()).outputs
    tgt = execute(
        tie_detector,
        {"input": image},
        BackendSpec.optimized(reduction_order="sequential", nms_order="unstable"),
    ).outputs
    metrics = tier3_task(tie_detector, [ref], [tgt])
    assert metrics.task == "detection"
    # B 与 A 的 IoU 为 0.6，仍能匹配；只有 C 落单
    assert metrics.detection_f1 == pytest.approx(2 * 14 / 29)
    assert not metrics.passed


def test_task_thresholds_validation():
    with pytest.raises(InvalidConfigError) as info:
        TaskThresholds(miou=1.5)
    assert info.value.key == "verification.task_thresholds.miou"
    with pytest.raises(InvalidConfigError):
        TaskThresholds(topk=0)


def test_decide_status():
    ok = Tier1Result(STATS, True, "eq1")
    bad = Tier1Result(STATS, False, "eq1")
    failed_task = TaskMetrics(task="classification", passed=False)
    assert decide_status(ok, None, None) == "PASS"
    assert decide_status(ok, failed_task, None) == "FAIL"
    assert decide_status(bad, None, None) == "FAIL"
    assert decide_status(None, None, None) == "ERROR"
    assert decide_status(ok, None, RuntimeError("x")) == "ERROR"


def test_classify_errors_first():
    assert classify_failure("ERROR", error=UnsupportedOpError("Nms")) is FailureCategory.UNSUPPORTED_OP
    assert classify_failure("ERROR", error=ValueError("boom")) is FailureCategory.RUNTIME_ERROR
    assert classify_failure("PASS") is FailureCategory.NONE


def test_classify_fallback_node():
    div = Divergence("gap", 5, 0.1)
    assert classify_failure("FAIL", tier2=div, fallback_nodes={"gap"}) is FailureCategory.UNSUPPORTED_OP
    assert classify_failure("FAIL", tier2=div, fallback_nodes={"fc"}) is FailureCategory.NUMERIC_DRIFT


def test_classify_fallback_without_trace_localizes_on_demand():
    calls = []

    def localize():
        calls.append(1)
        return Divergence("gap", 5, 0.1)

    assert classify_failure("FAIL", fallback_nodes={"gap"}, localize=localize) is FailureCategory.UNSUPPORTED_OP
    assert classify_failure("FAIL", fallback_nodes={"fc"}, localize=localize) is FailureCategory.NUMERIC_DRIFT
    assert len(calls) == 2
    # 没有回退或已有 Tier-2 结果时不补做定位
    assert classify_failure("FAIL", localize=localize) is FailureCategory.NUMERIC_DRIFT
    div = Divergence("fc", 7, 0.1)
    assert classify_failure("FAIL", tier2=div, fallback_nodes={"gap"}, localize=localize) is FailureCategory.NUMERIC_DRIFT
    assert classify_failure("PASS", fallback_nodes={"gap"}, localize=localize) is FailureCategory.NONE
    assert len(calls) == 2


def test_classify_tiebreak_uses_sort_retry():
    failed = TaskMetrics(task="detection", passed=False, detection_f1=0.9)
    assert classify_failure("FAIL", tier3=failed, sort_retry=lambda: True) is FailureCategory.ORDER_TIEBREAK
    assert classify_failure("FAIL", tier3=failed, sort_retry=lambda: False) is FailureCategory.NUMERIC_DRIFT


def test_sort_retry_only_for_detection():
    calls = []

    def retry():
        calls.append(1)
        return True

    failed = TaskMetrics(task="classification", passed=False)
    assert classify_failure("FAIL", tier3=failed, sort_retry=retry) is FailureCategory.NUMERIC_DRIFT
    assert calls == []


def test_build_report():
    report = build_report(tier1=Tier1Result(STATS, True, "eq1"))
    assert report.status == "PASS"
    assert report.taxonomy is FailureCategory.NONE
    err = build_report(error=np.linalg.LinAlgError("x"))
    assert err.status == "ERROR"
    assert err.taxonomy is FailureCategory.RUNTIME_ERROR
