"""Smoke test for the jumpctl extension module.

Build and install first:

    pip install maturin
    maturin develop --release -m crates/py/Cargo.toml

then run ``python python/smoke_test.py``.
"""

import math
import os
import tempfile

import jumpctl


def main():
    model = jumpctl.SurplusModel()
    assert model.lam == 2.0 and model.tau == 0.5 and model.a_max == 2.0
    assert abs(model.effective_sigma() - math.sqrt(0.2**2 + 2.0 * 0.25)) < 1e-12

    g = model.transform()
    assert g.breakpoints == [-1.0, 1.0]
    assert g.alphas == [-0.5, -0.5]
    assert abs(g.c - 0.3) < 1e-12
    for x in (-3.0, -1.0, 0.2, 0.95, 4.0):
        assert abs(g.inverse(g(x)) - x) < 1e-10
        assert g.prime(x) > 0.0

    b = model.mollified_drift(64)
    assert b.n == 64
    assert abs(abs(b(3.0)) - 1.0) < 1e-12 and b(0.0) == 0.0

    bundle = model.simulate("sign", 1.0, 0.01, 200, 7)
    assert len(bundle) == 200
    times, states = bundle.path(0)
    assert len(times) == len(states) and times[0] == 0.0 and abs(times[-1] - 1.0) < 1e-12
    again = model.simulate("sign", 1.0, 0.01, 200, 7)
    assert bundle.terminals() == again.terminals()

    with tempfile.TemporaryDirectory() as tmp:
        dump = os.path.join(tmp, "bundle.bin")
        bundle.dump(dump)
        loaded = jumpctl.PathBundle.load(dump)
        assert loaded.terminals() == bundle.terminals()
        assert loaded.config_hash() == bundle.config_hash()
        csv = os.path.join(tmp, "bundle.csv")
        bundle.to_csv(csv)
        with open(csv) as f:
            assert f.readline().strip() == "path_id,t,x,a,dB,jump_z"

    rows = model.sweep("T", [0.5, 2.0], ["linear", "threshold", "sign"], 2.0, 0.01, 2000, 3)
    assert len(rows) == 6
    at_two = {policy: mean for value, policy, mean, se, n in rows if value == 2.0}
    assert at_two["sign"] < at_two["linear"] < at_two["threshold"]

    mean, se, n = model.terminal_second_moment("sign", 2.0, 0.01, 2000, 3)
    assert n == 2000 and abs(mean - at_two["sign"]) < 1e-12

    assert abs(jumpctl.beta_half(1) - 2.0) < 1e-15
    mc, se, analytic = jumpctl.last_jump_gap_moment(4.0, 1, 100_000, seed=1)
    assert analytic == 1.0 and abs(mc - analytic) < 5 * se

    try:
        jumpctl.SurplusModel(a_max=-1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative a_max accepted")

    print("jumpctl", jumpctl.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
