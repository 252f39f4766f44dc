"""Smoke test for the mflq_py extension.

Build and install first, e.g.

    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/mflq_py-*.whl

then run `python python/smoke_test.py` or `pytest python/smoke_test.py`.
"""

import json

import mflq_py
from mflq_py import MflqError, NumericalError, Problem


def test_scalar_classic_value():
    p = Problem.preset("scalar_classic")
    sol = p.solve()
    assert sol.solvable and sol.regular and sol.feasible
    v = sol.value({"mean": [1.0]})
    assert abs(v["value"] - 0.5) < 1e-8
    assert v["certified"]


def test_example31_is_not_regular():
    p = Problem.preset("example31")
    reg = p.regularity()
    assert not reg["regular"]
    assert "range(Σ)" in reg["failed_conditions"]
    v = p.solve().value({"mean": [-3.0]})
    assert v["value"] == 18.0 and not v["certified"]


def test_report_samples():
    sol = Problem.preset("scalar_classic").solve()
    r = sol.report([0.0, 0.5, 1.0])
    assert len(r["samples"]) == 3
    assert abs(r["samples"][1]["P"][0][0] - 1.0 / 1.5) < 1e-8


def test_json_round_trip_and_simulation():
    p = Problem.preset("random_spd", seed=4)
    q = Problem.from_json(p.to_json())
    assert q.to_json() == p.to_json()
    assert (q.n, q.m) == (2, 2)
    law = q.law
    assert set(law) >= {"mean"}
    a = q.simulate(paths=2000, steps=50, seed=1)
    b = q.simulate(paths=2000, steps=50, seed=1, strategy=q.solve().strategy_json())
    assert a == b
    zero = q.simulate(paths=2000, steps=50, seed=1, strategy="zero")
    value = q.solve().value()["value"]
    # The optimal strategy should not cost more than doing nothing.
    assert a["cost_mean"] <= zero["cost_mean"] + 3 * zero["cost_stderr"]
    assert abs(a["cost_mean"] - value) < 5 * a["cost_stderr"] + 0.05 * (1 + abs(value))


def test_verify_suite():
    r = Problem.preset("scalar_classic").verify(paths=50, controls=5, steps=200)
    assert r["passed"], json.dumps(r, indent=1)


def test_errors():
    try:
        Problem.from_json('{"dims": {"n": 1, "m": 1}}')
    except MflqError:
        pass
    else:
        raise AssertionError("missing horizon accepted")
    escape = {
        "dims": {"n": 1, "m": 1},
        "horizon": {"t": 0, "T": 1, "steps": 100},
        "coefficients": {"B": {"rows": 1, "cols": 1, "data": [1]}},
        "weights": {
            "R": {"rows": 1, "cols": 1, "data": [-1]},
            "G": {"rows": 1, "cols": 1, "data": [10]},
        },
    }
    try:
        Problem.from_json(json.dumps(escape)).solve()
    except NumericalError:
        pass
    else:
        raise AssertionError("finite escape not reported")


if __name__ == "__main__":
    tests = [f for name, f in sorted(globals().items()) if name.startswith("test_")]
    for t in tests:
        t()
        print(f"ok {t.__name__}")
    print(f"{len(tests)} passed ({mflq_py.__name__})")
