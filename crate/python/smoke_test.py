"""Smoke test for the pyslicebf extension module.

Build and run:
    cargo build --release -p slicebf-py --features extension-module
    cp target/release/libpyslicebf.so python/pyslicebf.so
    python3 python/smoke_test.py
"""

import math
import random

import pyslicebf as sb


def main():
    # n = 2 toy cases: BF = 4/3 when x differs, 8/9 when it agrees
    split = sb.Dataset([0.5, 1.5], ["a", "b"])
    same = sb.Dataset.from_codes([0.5, 1.5], [0, 0], x_levels=2)
    assert abs(math.exp(split.log_bf()) - 4 / 3) < 1e-12
    assert abs(math.exp(same.log_bf()) - 8 / 9) < 1e-12
    assert abs(split.log_bf_bruteforce() - split.log_bf()) < 1e-12

    rng = random.Random(1)
    x = [i % 2 for i in range(200)]
    y = [rng.gauss(0.8 * v, 1.0) for v in x]
    d = sb.Dataset(y, x)
    h = sb.Hyperparams(alpha0=1.0, lambda0=1.0)
    assert d.n == 200 and d.x_levels == 2 and d.z_levels == 1
    p, null = d.permutation_pvalue(permutations=99, seed=3, hyper=h)
    assert len(null) == 99 and p == 0.01, p
    assert d.formula_pvalue() < 1e-3

    z = [rng.randrange(2) for _ in y]
    cond = sb.Dataset(y, x, z)
    assert cond.z_levels == 2 and cond.log_bf() > 0

    a, b = y[0::2], y[1::2]
    for report in (sb.welch_t(a, b), sb.rank_sum(a, b), sb.ks_two_sample(a, b), sb.anderson_darling([a, b])):
        assert 0.0 <= report.p_value < 0.05, report
    assert sb.anova(y, x, z).method == "anova2"

    points, auc = sb.roc([3.0, 1.0], [2.0, 0.0])
    assert auc == 0.75 and points[0] == (0.0, 0.0)
    assert abs(sb.formula_pvalue(1.0, 400, 1.12, 0.6, 0.76) - 0.0209) < 5e-4

    m = {f"m{j}": [rng.randrange(2) for _ in range(300)] for j in range(5)}
    trait = [1.2 * m["m1"][i] + 1.2 * m["m3"][i] + rng.gauss(0, 1) for i in range(300)]
    trace = sb.select(trait, list(m.items()), permutations=99, seed=1)
    assert sorted(trace["final_labels"]) == ["m1", "m3"], trace["final_labels"]

    summary = sb.simulate("s2", seed=4, n=200, reps=50, methods="bf,t")
    assert [s["method"] for s in summary] == ["bf", "t"]

    try:
        sb.Dataset([1.0, 2.0], ["a"])
    except ValueError:
        pass
    else:
        raise AssertionError("length mismatch accepted")
    print("pyslicebf smoke test passed")


if __name__ == "__main__":
    main()
