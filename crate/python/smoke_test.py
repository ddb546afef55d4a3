"""Smoke test for the sparsekit_py extension module.

Build the extension first, then run this script:

    cargo build -p sparsekit-py --release
    python3 python/smoke_test.py

The compiled library is looked up at $SPARSEKIT_PY_LIB or
target/release/libsparsekit_py.so and copied into a temp dir as
sparsekit_py.so so it can be imported without installing a wheel.
"""

import importlib
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "crates" / "core" / "fixtures"


def load_module():
    lib = Path(os.environ.get("SPARSEKIT_PY_LIB", ROOT / "target" / "release" / "libsparsekit_py.so"))
    if not lib.exists():
        sys.exit(f"extension not found at {lib}; run `cargo build -p sparsekit-py --release`")
    tmp = tempfile.mkdtemp(prefix="sparsekit_py_")
    shutil.copy(lib, Path(tmp) / "sparsekit_py.so")
    sys.path.insert(0, tmp)
    return importlib.import_module("sparsekit_py"), tmp


def main():
    sk, tmp = load_module()

    m = sk.Model([("fc", "fc", [2, 2], [0.5, -0.3, 2.0, 0.0])])
    plan = sk.plan_flat(m, 0.25)
    assert plan.method == "flat"
    assert abs(plan.thresholds[0] - 0.575) < 1e-6, plan.thresholds
    out = sk.apply_plan(m, plan)
    assert out.layer("fc")[2] == [0.0, 0.0, 2.0, 0.0]
    assert sk.sparsity_report(out).model_sparsity == 0.75

    assert abs(sk.compression_factor(0.73) - 3.7037) < 1e-3
    assert math.isinf(sk.compression_factor(1.0))
    try:
        sk.plan_flat(m, 1.5)
    except ValueError:
        pass
    else:
        raise AssertionError("delta 1.5 accepted")

    model = sk.Model.read(str(FIXTURES / "lenet.spwt"))
    manifest = sk.Manifest.read(str(FIXTURES / "lenet.arch.json"))
    data = sk.Dataset.read(str(FIXTURES / "lenet.spds"))
    assert model.layer_names == ["conv1", "conv2", "fc1", "fc2"]

    base = sk.evaluate(model, manifest, data)
    half = sk.apply_plan(model, sk.plan_relative(model, 0.5))
    report = sk.sparsity_report(half)
    assert abs(report.model_sparsity - 0.5) < 0.01
    plan = sk.Plan.from_json(sk.plan_triangular(model, 0.1, 0.2, "interpolated").to_json())
    assert len(plan.thresholds) == 4

    empty = sk.apply_plan(model, sk.plan_relative(model, 1.0))
    assert sk.evaluate(empty, manifest, data) == data.class_frequency(0)

    points, best = sk.sweep(model, manifest, data, "relative", "0:1:0.25")
    assert len(points) == 5 and best is not None
    assert points[0][3] == 1.0

    path = Path(tmp) / "half.spwt"
    half.write(str(path))
    assert sk.Model.read(str(path)) == half

    print(f"baseline accuracy {base:.4f}; relative 0.5 -> s_m {report.model_sparsity:.3f}, "
          f"accuracy {sk.evaluate(half, manifest, data):.4f}")
    print("smoke test passed")


if __name__ == "__main__":
    main()
