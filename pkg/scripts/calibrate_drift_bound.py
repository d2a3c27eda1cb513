#!/usr/bin/env python
"""
重新标定 tests/fixtures/drift_bound.json。

对 classifier 的每个 seed，分别求 reference（顺序累加）和 optimized（成对累加，全精度）
与 F64 累加 oracle 的最大偏差；两者之和是 |reference − optimized| 的上界。
bound = SAFETY_FACTOR × 所有 seed 上该上界的最大值，向上取一位有效数字。
比较覆盖 classifier 的全部输出（probs 与 fc）。

用法：python scripts/calibrate_drift_bound.py [--seeds 100] [--write]
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Dict

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

from driftcheck.backends import BackendSpec, execute  # noqa: E402
from driftcheck.builders import build_synthetic_classifier  # noqa: E402
from driftcheck.graph import GraphModel  # noqa: E402
from driftcheck.kernels import evaluate_node  # noqa: E402
from driftcheck.seeding import SplitMix64  # noqa: E402
from driftcheck.tensor import Tensor  # noqa: E402

FIXTURE = ROOT / "tests" / "fixtures" / "drift_bound.json"
INPUT_SHAPE = (1, 3, 32, 32)
SAFETY_FACTOR = 10.0


def classifier_input(seed: int) -> Tensor:
    values = SplitMix64(seed).fork("input").uniform(int(np.prod(INPUT_SHAPE)))
    return Tensor(values.astype(np.float32).reshape(INPUT_SHAPE))


def _f64_reduce(x, axis: int = -1, dtype=None) -> np.ndarray:
    return np.sum(np.asarray(x, dtype=np.float64), axis=axis)


def oracle_outputs(model: GraphModel, x: Tensor) -> Dict[str, np.ndarray]:
    env = {name: t.array.astype(np.float32) for name, t in model.initializers.items()}
    env[model.input_names[0]] = x.array.astype(np.float32)
    for node in model.nodes:
        env[node.output] = evaluate_node(node, [env[n] for n in node.inputs], _f64_reduce)
    return {name: env[name].astype(np.float64) for name in model.outputs}


def _max_dev(outputs: Dict[str, Tensor], oracle: Dict[str, np.ndarray]) -> float:
    return max(float(np.max(np.abs(outputs[n].array.astype(np.float64) - oracle[n]))) for n in oracle)


def _round_up_1sig(x: float) -> float:
    if x <= 0:
        return 0.0
    exp = math.floor(math.log10(x))
    return math.ceil(x / 10**exp) * 10**exp


def calibrate(seeds: int) -> dict:
    ref_spec = BackendSpec.reference()
    tgt_spec = BackendSpec.optimized(precision="full", reduction_order="pairwise", fuse_conv_relu=False, nms_order="stable")
    worst = 0.0
    for seed in range(seeds):
        model = build_synthetic_classifier(seed, INPUT_SHAPE)
        x = classifier_input(seed)
        oracle = oracle_outputs(model, x)
        ref = execute(model, {"input": x}, ref_spec).outputs
        tgt = execute(model, {"input": x}, tgt_spec).outputs
        worst = max(worst, _max_dev(ref, oracle) + _max_dev(tgt, oracle))
    bound = _round_up_1sig(SAFETY_FACTOR * worst)
    return {
        "model": "classifier",
        "input_shape": list(INPUT_SHAPE),
        "seeds": seeds,
        "safety_factor": SAFETY_FACTOR,
        "observed_oracle_bound": worst,
        "bound": bound,
        "derivation": "scripts/calibrate_drift_bound.py",
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--seeds", type=int, default=100)
    parser.add_argument("--write", action="store_true", help=f"overwrite {FIXTURE.relative_to(ROOT)}")
    args = parser.parse_args()
    result = calibrate(args.seeds)
    text = json.dumps(result, indent=2) + "\n"
    if args.write:
        FIXTURE.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
