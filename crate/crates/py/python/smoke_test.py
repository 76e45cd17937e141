"""Smoke test for the reservoir_design extension module.

Build and install first, e.g. ``pip install --no-build-isolation -e crates/py``,
then run ``python crates/py/python/smoke_test.py``.
"""

import math
import random

import reservoir_design as rd


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    assert close(rd.ipw_estimate([1, 0], [3.0, 1.0]), 2.0)

    assert close(rd.packing_radius(100, 2), 100 ** -0.25)
    assert close(rd.packing_radius(100, 2, delta=1.0), 100 ** (-1 / 6))
    cutoff = rd.kk14_cutoff(10**6, 3)
    assert abs(cutoff / 1.168749 - 1) < 1e-3, cutoff

    pairs = {tuple(sorted(p)) for p in rd.bai_optimal_matching([0.3, 0.1, 0.2, 0.4])}
    assert pairs == {(2, 3), (1, 4)}, pairs

    rng = random.Random(7)
    for _ in range(20):
        t = rng.randint(1, 10)
        mu1 = [rng.uniform(-2, 2) for _ in range(t)]
        mu0 = [rng.uniform(-2, 2) for _ in range(t)]
        var1 = [rng.uniform(0, 1) for _ in range(t)]
        var0 = [rng.uniform(0, 1) for _ in range(t)]
        order = rng.sample(range(1, t + 1), t)
        matches = [(order[2 * k], order[2 * k + 1]) for k in range(rng.randint(0, t // 2))]
        formula = rd.conditional_variance(mu1, mu0, var1, var0, matches)
        oracle = rd.exact_variance_oracle(mu1, mu0, var1, var0, matches)
        assert close(formula, oracle, 1e-10), (formula, oracle)

    a = rd.Assigner("packing", 2, seed=3, standardize=False)
    arms = [a.assign([0.5, 0.5]) for _ in range(4)]
    assert a.t == 4 and a.reservoir == []
    assert sorted(tuple(sorted(p)) for p in a.matches) == [(1, 2), (3, 4)]
    assert arms[0] + arms[1] == 1 and arms[2] + arms[3] == 1

    try:
        rd.Assigner("packing", 2).assign([1.0])
    except ValueError:
        pass
    else:
        raise AssertionError("dimension mismatch accepted")

    rows = rd.run_simulation("setting1", ["iid", "packing"], [200], replicates=50, seed=4, workers=1)
    assert len(rows) == 100
    again = rd.run_simulation("setting1", ["iid", "packing"], [200], replicates=50, seed=4, workers=1)
    assert rows == again
    for design in ("iid", "packing"):
        hats = [r["tau_hat"] for r in rows if r["design"] == design]
        mean = sum(hats) / len(hats)
        sd = math.sqrt(sum((h - mean) ** 2 for h in hats) / (len(hats) - 1))
        assert abs(mean - 7 / 6) < 4 * sd / math.sqrt(len(hats)), (design, mean)

    print("smoke test passed")


if __name__ == "__main__":
    main()
