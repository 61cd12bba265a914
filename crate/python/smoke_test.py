#!/usr/bin/env python3
"""Smoke test for the psnn_py extension module.

Expects `cargo build -p psnn-py` to have produced target/debug/libpsnn_py.so
(release also works). Copies the library into a temp directory under the
import name psnn_py.so, imports it, checks the closed-form oracle against
plain-Python arithmetic, and runs a miniature end-to-end pipeline.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def import_module():
    candidates = [
        ROOT / "target" / "debug" / "libpsnn_py.so",
        ROOT / "target" / "release" / "libpsnn_py.so",
    ]
    src = next((p for p in candidates if p.exists()), None)
    if src is None:
        sys.exit("build the extension first: cargo build -p psnn-py")
    tmp = Path(tempfile.mkdtemp(prefix="psnn-py-"))
    shutil.copy2(src, tmp / "psnn_py.so")
    sys.path.insert(0, str(tmp))
    import psnn_py

    return psnn_py


def residual(theta, point):
    f, k = theta
    u, v = point
    return (-u * v * v + f * (1.0 - u), u * v * v - (f + k) * v)


def check_oracle(m):
    assert m.parameter_box() == [(0.0, 0.3), (0.0, 0.08)]
    assert m.domain_box() == [(0.0, 1.0), (0.0, 1.0)]

    theta = [0.1, 0.05]
    sols = m.solutions(theta)
    assert len(sols) == 2, sols
    for s in sols:
        g1, g2 = residual(theta, s)
        assert abs(g1) < 1e-12 and abs(g2) < 1e-12, (s, g1, g2)
    assert sols[0][0] < sols[1][0]

    f, k = theta
    disc = f * f - 4.0 * f * (f + k) ** 2
    energy = f * math.sqrt(disc) + f * f - 2.0 * (f + k) ** 3
    expect = ["stable", "unstable"] if energy > 0.0 else ["unstable", "unstable"]
    assert m.stability(theta) == expect

    assert m.region(theta) == "two-solutions"
    assert m.region([0.02, 0.06]) == "no-solution"
    assert m.solutions([0.02, 0.06]) == []
    assert m.stability([0.02, 0.06]) == []

    peak = m.target_field(sols[0], theta)
    assert 1.0 <= peak <= 2.0, peak
    far = m.target_field([0.99, 0.99], theta)
    assert far < 0.5, far
    assert m.target_field([0.5, 0.5], [0.02, 0.06]) == 0.0

    assert m.relative_set_distance(sols, sols) == 0.0
    assert m.relative_set_distance(sols, list(reversed(sols))) == 0.0
    d = m.relative_set_distance([[0.0, 0.0]], [[0.1, 0.0]])
    assert abs(d - 0.1 / math.sqrt(2.0)) < 1e-12, d
    print("oracle checks passed")


def check_errors(m):
    try:
        m.Pipeline(train_count=0)
    except ValueError:
        pass
    else:
        raise AssertionError("train_count=0 should raise ValueError")

    p = m.Pipeline()
    try:
        p.locate([0.1, 0.05])
    except RuntimeError:
        pass
    else:
        raise AssertionError("locate before train should raise RuntimeError")
    print("error mapping checks passed")


def check_pipeline(m):
    p = m.Pipeline(
        train_count=200,
        search_count=30,
        test_count=40,
        n_random=60,
        inner_dim=6,
        pnn_depth=2,
        pnn_width=20,
        snn_depth=2,
        snn_width=16,
        grid=61,
    )
    n = p.generate()
    assert n == 270, n

    report = p.train(epochs=150)
    print(
        "trained: solution mse %.4g, stability mse %.4g"
        % (report["solution_test_mse"], report["stability_test_mse"])
    )
    assert report["solution_test_mse"] < 0.05, report

    cut = p.calibrate_cut()
    assert 0.0 < cut < 1.0
    assert p.l_cut == cut
    print("calibrated cut: %.2f" % cut)

    theta = [0.1, 0.05]
    r = p.locate(theta)
    assert set(r) == {"centers", "labels", "silhouette", "n_collected"}
    assert len(r["labels"]) == len(r["centers"])
    for c in r["centers"]:
        assert 0.0 <= c[0] <= 1.0 and 0.0 <= c[1] <= 1.0
    truth = m.solutions(theta)
    if len(r["centers"]) == len(truth):
        d = m.relative_set_distance(r["centers"], truth)
        print("located %d centers, distance %.4f" % (len(truth), d))
        assert d < 0.15, d
    else:
        print(
            "warning: tiny model found %d centers (true %d); "
            "structural checks only" % (len(r["centers"]), len(truth))
        )

    score = p.score_test()
    assert score["n"] == 40
    assert 0.0 <= score["wrong_count"] <= 1.0
    print(
        "test split: wrong count %.2f, distance %.4f"
        % (score["wrong_count"], score["distance"])
    )


def main():
    m = import_module()
    check_oracle(m)
    check_errors(m)
    check_pipeline(m)
    print("smoke test passed")


if __name__ == "__main__":
    main()
