"""Smoke test for the certfed_py extension module.

Build and install first:  pip install --no-build-isolation -e crates/python
(or `maturin develop -m crates/python/Cargo.toml`).
"""

import math
import os
import sys
import tempfile

import certfed_py as cf


def check(cond, msg):
    if not cond:
        print("FAIL:", msg)
        sys.exit(1)
    print("ok  ", msg)


def main():
    z = cf.Zonotope([0.25, 0.25], [[0.25, 0.0], [0.0, 0.25]])
    out = z.affine([2.0, 1.0, 1.0, -1.0], [0.0, 0.0]).relu()
    lo, hi = out.bounds()
    check(out.num_symbols == 3, "ReLU adds one symbol for the crossing neuron")
    check(all(math.isclose(a, b, abs_tol=1e-12) for a, b in zip(out.rows()[1], [0.125, -0.125, 0.125])),
          "crossing row matches the hand computation")
    check(math.isclose(hi[0], 1.5) and math.isclose(lo[1], -0.25), "bounds")

    data = cf.Dataset.synth(3, [1, 6, 6], 40, 0.6, seed=2)
    check(len(data) == 120 and data.sample_shape == [1, 6, 6], "synthetic dataset shape")
    train_set, test_set = data.range(0, 90), data.range(90, 120)

    model = cf.Model.preset("desk_mlp", [1, 6, 6], 3, seed=1)
    model = cf.train(model, train_set, learning_rate=0.1, epochs=5, seed=1)
    acc = cf.accuracy(model, test_set)
    check(acc > 0.8, f"clean accuracy {acc:.3f}")

    x, y = test_set.x(0), test_set.y(0)
    v = cf.certify(model, x, y, 0.0)
    check(v["certified"] == (v["predicted_label"] == y), "eps=0 certifies exactly the correct points")
    cert_acc, loss = cf.certified_stats(model, test_set, 0.02)
    check(0.0 <= cert_acc <= acc, f"certified accuracy {cert_acc:.3f} <= clean accuracy")

    adv = cf.pgd_attack(model, x, y, 0.05, steps=10, seed=3)
    check(max(abs(a - b) for a, b in zip(adv, x)) <= 0.05 + 1e-12, "PGD stays in the ball")

    agg = cf.median_aggregate([[0.0, 1.0], [1.0, 2.0], [2.0, 3.0], [1e9, -1e9], [1e9, -1e9]])
    check(0.0 <= agg[0] <= 2.0 and 1.0 <= agg[1] <= 3.0, f"median stays within honest range {agg}")
    p = cf.hypergeometric_tail(500, 175, 5, 3)
    check(abs(p - 0.234231) < 1e-5, f"quorum tail probability {p:.4f}")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.cfm")
        model.save(path)
        check(cf.Model.load(path).hash == model.hash, "save/load round trip")

    try:
        model.predict([0.0])
    except ValueError:
        check(True, "wrong input length raises ValueError")
    else:
        check(False, "wrong input length raises ValueError")
    print("smoke test passed")


if __name__ == "__main__":
    main()
