"""Smoke test for the pymns extension.

Build and run from the repository root:

    cargo build --release -p mns-py --features extension-module
    cp target/release/libpymns.so python/pymns.so
    python3 python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pymns


def main():
    truth, cohort = pymns.simulate(p=12, n_subjects=4, n=80, e_ran=4, seed=3)
    assert cohort.p == 12 and cohort.n_subjects == 4
    assert cohort.n_obs == [80] * 4
    assert len(truth.variable) == 4
    print(cohort)

    grid = pymns.lambda_grid(cohort, alpha=0.25, count=10)
    assert len(grid) == 10 and grid[0] > grid[-1] > 0

    fits = [pymns.fit(cohort, lam, alpha=0.25) for lam in grid]
    assert fits[0].population == [] and fits[0].variance == []
    auc = pymns.roc_auc(12, grid, [f.population for f in fits], truth.population)
    print(f"population AUC {auc:.3f}")
    assert auc > 0.8

    mid = fits[len(fits) // 2]
    for v in range(cohort.p):
        for s, b in zip(mid.sigma(v), zip(*mid.blups(v))):
            if s == 0.0:
                assert all(x == 0.0 for x in b)
    tpr, fpr = pymns.tpr_fpr(12, mid.population, truth.population)
    assert 0.0 <= fpr <= tpr <= 1.0

    fit_or = pymns.fit(cohort, grid[5], rule="or")
    fit_and = pymns.fit(cohort, grid[5], rule="and")
    assert set(fit_and.population) <= set(fit_or.population)

    cv = pymns.cross_validate(cohort, lambdas=grid[::3], folds=3)
    assert len(cv["mse"]) == len(grid[::3])
    assert cv["best_lambda"] == grid[::3][cv["best_index"]]

    pooled = pymns.glasso(cohort, grid[4] / 10, mode="pooled")
    per_subject = pymns.glasso(cohort, 0.1, mode="subject")
    assert len(pooled) == 1 and len(per_subject) == 4

    st = pymns.stability(cohort, b=20, seed=1)
    assert len(st["rho"]) == 12 and all(0.0 <= x <= 1.0 for row in st["rho"] for x in row)

    cc = pymns.clustering_coefficient(4, [(0, 1), (1, 2), (0, 2), (2, 3)])
    assert math.isclose(cc, 7 / 12)

    try:
        pymns.simulate(tau=1.5)
    except ValueError as e:
        print(f"rejected tau=1.5: {e}")
    else:
        raise AssertionError("tau=1.5 accepted")

    print("ok")


if __name__ == "__main__":
    main()
