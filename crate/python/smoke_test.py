"""Quick end-to-end check of the semkd_py extension module.

Build and install it first:

    pip install maturin
    maturin develop --release -m crates/py/Cargo.toml
"""

import math
import pathlib
import sys

import semkd_py as semkd

ROOT = pathlib.Path(__file__).resolve().parent.parent


def main() -> int:
    table = semkd.SemanticTable.parse("a 1 1\nb 1 2\nc 5 1\nd 5 2.5\nn 4.6 1.4\n", 2)
    sc = semkd.cluster_base_classes(table, ["a", "b", "c", "d"], 2, seed=0)
    groups = dict(sc.assignment)
    assert groups["a"] == groups["b"] != groups["c"] == groups["d"]
    assert sc.assign(table, "n") == groups["c"]
    print(f"superclasses: {groups}, novel 'n' -> {sc.assign(table, 'n')}")

    d = [[0.1, 0.9, 1.4]]
    z = sum(math.exp(-x) for x in d[0])
    assert abs(semkd.classification_loss(d, [0]) + math.log(math.exp(-0.1) / z)) < 1e-12
    print(f"classification loss: {semkd.classification_loss(d, [0]):.6f}")

    err = semkd.check_gradients(0)
    assert err < 1e-4
    print(f"gradient check max relative error: {err:.2e}")

    cfg = (ROOT / "crates/core/fixtures/tiny.toml").read_text()
    report = semkd.run_experiment(cfg)
    for s in report["sessions"]:
        print(f"session {s['session']}: joint {100 * s['joint_acc']:.2f}%")
    assert len(report["sessions"]) == 5
    print("ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
