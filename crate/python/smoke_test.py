"""Smoke test for the adma_py extension module.

Build first:

    cargo build -p adma-py --release

then run `python3 python/smoke_test.py` from the repository root. The script
copies target/{release,debug}/libadma_py.so to a temporary directory as
adma_py.so and imports it from there. Pass a path to use another build.
"""
import importlib
import json
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def locate(argv):
    if len(argv) > 1:
        return argv[1]
    for profile in ("release", "debug"):
        for name in ("libadma_py.so", "libadma_py.dylib"):
            path = os.path.join(ROOT, "target", profile, name)
            if os.path.exists(path):
                return path
    sys.exit("no libadma_py build found; run `cargo build -p adma-py --release` first")


def load(path):
    staging = tempfile.mkdtemp(prefix="adma_py_")
    shutil.copy(path, os.path.join(staging, "adma_py.so"))
    sys.path.insert(0, staging)
    return importlib.import_module("adma_py")


def main(argv):
    m = load(locate(argv))
    e = math.e

    assert m.adma_value([1.0], [1.0], 0.26) == 0.0
    assert abs(m.adma_value([0.0], [1.0], 0.26) - (e - 1)) < 1e-12
    assert abs(m.adma_value([0.5], [1.0], 1.0) - (e - math.exp(0.5))) < 1e-12
    g = m.adma_grad([0.5, 0.5], [1.0, 0.0], 1.0)
    assert abs(g[0] + math.exp(0.5)) < 1e-12 and g[1] == 0.0
    assert 1.0 <= m.amplification_factor(0.3, 0.26) <= e

    value, grad = m.loss_value_and_grad("cce", [0.25, 0.75], [0.0, 1.0])
    assert abs(value + math.log(0.75)) < 1e-12
    assert abs(grad[1] + 1 / 0.75) < 1e-12

    loss = m.Loss("adma(0.26)")
    assert repr(loss) == "Loss('adma(0.26)')"
    assert loss.value([1.0, 0.0], [1.0, 0.0]) == 0.0

    rows = m.curve_sweep(["adma(0.5)", "cce"], 0.0, 1.0, 3)
    assert [p for p, _ in rows] == [0.0, 0.5, 1.0]
    assert rows[-1][1] == [0.0, 0.0]

    assert m.convexity_probe(0.3)["is_convex"]
    probe = m.convexity_probe(0.7)
    assert not probe["is_convex"] and 0.25 < probe["first_violation"] < 0.35

    best_a, deviation = m.best_cce_emulation([0.05, 0.26, 0.5])
    assert best_a in (0.05, 0.26, 0.5) and deviation >= 0.0
    profile = m.weighting_profile(0.26)
    assert profile[0][1] > profile[-1][1]

    model = m.Model.mlp(4, [8], 3, seed=1)
    assert model.param_count == 4 * 8 + 8 + 8 * 3 + 3
    probs = model.predict([[0.1, 0.2, 0.3, 0.4], [1.0, 0.0, 0.0, 1.0]])
    assert all(abs(sum(r) - 1.0) < 1e-12 for r in probs)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.ckpt")
        model.save(path)
        again = m.Model.load(path)
        assert again.predict([[0.1, 0.2, 0.3, 0.4]]) == probs[:1]

    config = m.default_config().replace("epochs = 200", "epochs = 30")
    report = json.loads(m.train(config))
    assert len(report["records"]) == 30
    assert report["summary"]["final_val_acc"] > 0.5

    max_err, passed = m.gradcheck(0, 2)
    assert passed, max_err

    try:
        m.Loss("hinge3")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown loss accepted")

    print("adma_py smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
