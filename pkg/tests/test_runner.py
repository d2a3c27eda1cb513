import json

import numpy as np
import pytest

from driftcheck.errors import InvalidConfigError
from driftcheck.runcfg import SyntheticInput, load_config
from driftcheck.runner import (
    SuiteSummary,
    SweepPlan,
    backend_for,
    console_line,
    execute_pair,
    prepare_input,
    run_cell,
    run_once,
    run_suite,
)
from driftcheck.tensor import ToleranceSpec
from tests.helpers import CONFIGS_DIR


def _config(name):
    return load_config(CONFIGS_DIR / name)


def _cell(name, atols):
    cfg = _config(name)
    tols = [ToleranceSpec(a, cfg.verification.tol.rtol) for a in atols]
    return run_cell(cfg, backend_for(cfg, "reference", "ref"), backend_for(cfg, "optimized", "tgt"), tols)


@pytest.mark.parametrize(
    "kwargs, key",
    [
        ({"target": "gpu"}, "--target"),
        ({"atol_grid": ()}, "--sweep-atol"),
        ({"atol_grid": (1e-5, 1e-6)}, "--sweep-atol"),
        ({"atol_grid": (-1.0,)}, "--sweep-atol"),
        ({"rtol": -1.0}, "--rtol"),
        ({"seed": -1}, "--seed"),
        ({"jobs": 0}, "--jobs"),
    ],
)
def test_plan_validation(kwargs, key):
    with pytest.raises(InvalidConfigError) as info:
        SweepPlan(**kwargs)
    assert info.value.key == key


def test_plan_pairs():
    assert SweepPlan().pairs("optimized") == [("reference", "optimized")]
    assert SweepPlan(target="reference").pairs("optimized") == [("reference", "reference")]
    grid = SweepPlan(all_pairs=True).pairs("optimized")
    assert grid == [
        ("reference", "reference"),
        ("reference", "optimized"),
        ("optimized", "reference"),
        ("optimized", "optimized"),
    ]
    assert SweepPlan(all_pairs=True).pairs("reference") == [("reference", "reference")]


def test_suite_summary():
    s = SuiteSummary(total=3, passed=3)
    assert s.ok
    assert not SuiteSummary(total=2, passed=1, errored=1).ok


def test_prepare_input_adds_batch_axis(write_config):
    cfg = load_config(write_config(options={"normalize": False, "resize_multiple": 16}))
    x = prepare_input(cfg, SyntheticInput(shape=(3, 20, 20), seed=1))
    assert x.shape == (1, 3, 16, 16)
    assert x.array.dtype == np.float32


def test_prepare_input_normalizes(write_config):
    cfg = load_config(write_config(means=[0.5, 0.5, 0.5], stds=[0.5, 0.5, 0.5]))
    x = prepare_input(cfg, SyntheticInput(shape=(1, 3, 32, 32), seed=1))
    assert x.array.min() >= -1.0
    assert x.array.max() < 1.0
    assert x.array.min() < 0.0


def test_self_pair_is_bitwise(write_config):
    cfg = load_config(write_config())
    rec = run_once(cfg, backend_for(cfg, "reference", "ref"), backend_for(cfg, "reference", "tgt"), ToleranceSpec(0.0, 0.0))
    assert rec.status == "PASS"
    assert rec.max_abs_diff == 0.0
    assert rec.backend_pair == "reference->reference"


def test_cancellation_probe_flips():
    low, high = _cell("cancellation_probe.yaml", [1e-4, 1e-3])
    assert (low.status, low.taxonomy) == ("FAIL", "NUMERIC_DRIFT")
    assert high.status == "PASS"
    assert low.max_abs_diff == pytest.approx(2.0**-11)
    assert low.model == "cancellation_probe"
    assert low.task == "classification"


def test_tie_fixture_classified():
    (rec,) = _cell("detector_tie.yaml", [1e-5])
    assert rec.status == "FAIL"
    assert rec.taxonomy == "ORDER_TIEBREAK"
    assert rec.max_abs_diff == 0.0
    (sorted_rec,) = _cell("detector_tie_sorted.yaml", [1e-5])
    assert sorted_rec.status == "PASS"
    assert sorted_rec.detection_f1 == 1.0


def test_unsupported_op():
    (rec,) = _cell("classifier_unsupported_op.yaml", [1e-5])
    assert rec.status == "ERROR"
    assert rec.taxonomy == "UNSUPPORTED_OP"
    assert rec.error_message.startswith("UnsupportedOpError: ")
    assert rec.max_abs_diff is None
    (fallback,) = _cell("classifier_unsupported_fallback.yaml", [1e-5])
    assert fallback.status == "PASS"



def test_captured_traces_rerun_when_not_collected(write_config):
    cfg = load_config(
        write_config(
            options={"repeats": 1, "precision": "reduced"},
            mitigations={"eager_fallback_ops": ["GlobalAvgPool"]},
        )
    )
    assert not cfg.verification.capture_activations
    execution = execute_pair(cfg, cfg.reference_spec(), cfg.target_spec(), cfg.seed)
    assert execution.fallback_nodes == ["gap"]
    assert execution.ref_traces[0].activations is None
    (pair,) = execution.captured_traces()
    assert all(list(trace.activations) == [n.id for n in execution.model.nodes] for trace in pair)
    assert pair[1].outputs["probs"].bitwise_equal(execution.tgt_traces[0].outputs["probs"])
    assert execution.captured_traces() is execution.captured_traces()


def test_missing_input_is_error(write_config):
    cfg = load_config(write_config(inputs=["missing.drft"]))
    records = run_cell(cfg, cfg.reference_spec(), cfg.target_spec(), [ToleranceSpec(1e-5), ToleranceSpec(1e-3)])
    assert [r.status for r in records] == ["ERROR", "ERROR"]
    assert all(r.taxonomy == "RUNTIME_ERROR" for r in records)


def test_console_line():
    (rec,) = _cell("classifier_unsupported_op.yaml", [1e-5])
    line = console_line(rec)
    assert line.startswith("[ERROR] classifier_unsupported_op.yaml (atol=1e-05, rtol=1e-05) -> UnsupportedOpError")
    assert "[reference->optimized]" in console_line(rec, show_pair=True)


def test_run_suite_writes_in_plan_order(tmp_path, write_config, capsys):
    good = write_config("a.yaml")
    bad = write_config("b.yaml", options={"repeats": 0})
    out = tmp_path / "results.jsonl"
    plan = SweepPlan(config_paths=(good, bad), atol_grid=(1e-6, 1e-3), out_path=out, jobs=2)
    summary, records = run_suite(plan)

    assert summary.total == 4
    assert summary.errored == 2
    assert not summary.ok
    assert [(r.config.endswith("a.yaml"), r.atol) for r in records] == [
        (True, 1e-6),
        (True, 1e-3),
        (False, 1e-6),
        (False, 1e-3),
    ]
    assert records[2].model == "unknown"
    assert records[2].error_message.startswith("InvalidConfigError: ")

    lines = out.read_text(encoding="utf-8").splitlines()
    assert [json.loads(line)["atol"] for line in lines] == [1e-6, 1e-3, 1e-6, 1e-3]
    printed = capsys.readouterr().out
    assert "=== Summary ===" in printed
    assert "Total: 4  Passed: " in printed
    assert "Errored: 2" in printed


def test_run_suite_empty(capsys):
    summary, records = run_suite(SweepPlan(pattern="nothing/*.yaml"))
    assert summary.ok
    assert records == []
    assert "No configs matched: nothing/*.yaml" in capsys.readouterr().out
