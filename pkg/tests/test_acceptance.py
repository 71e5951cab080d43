"""Acceptance checks against the published mortality/ICU tables plus the
property suite.  Each test records one PASS/FAIL line (shown in the terminal
summary of a pytest run)."""
import itertools
import time

import numpy as np
import pytest
from scipy import stats

from effectmod import datasets
from effectmod.multiplicity import closed_test, truncated_product_cdf, truncated_product_pvalue, with_truncated_product
from effectmod.pairs import DiscordantSummary, PairRecord, Partition, crosstab, summarize
from effectmod.sensitivity import amplify, gamma_grid_bounds, mcnemar_odds_ratio, mcnemar_upper_pvalue
from effectmod.simulate import SyntheticSpec, simulate_rejections
from effectmod.tree import CovariateSpec, TreeConfig, build_tree

# Published tables (groups 1-5, then the truncated-product column).
N_PAIRS = (10127, 5636, 2943, 2086, 2923)
DEATH_D = (210, 293, 488, 217, 760)
DEATH_OR = (1.41, 1.53, 1.09, 1.28, 1.18)
DEATH_GAMMAS = (1.00, 1.05, 1.10, 1.15, 1.17, 1.20)
DEATH_TABLE = np.array(
    [
        [0.008, 0.000, 0.195, 0.039, 0.013, 0.000],
        [0.019, 0.001, 0.374, 0.080, 0.062, 0.000],
        [0.042, 0.003, 0.576, 0.143, 0.184, 0.012],
        [0.079, 0.010, 0.753, 0.230, 0.386, 0.032],
        [0.099, 0.015, 0.809, 0.270, 0.479, 0.044],
        [0.135, 0.025, 0.875, 0.335, 0.616, 0.163],
    ]
)
ICU_D = (2675, 2361, 1282, 859, 970)
ICU_OR = (1.63, 2.05, 1.67, 1.70, 1.88)
ICU_GAMMAS = (1.0, 1.5, 1.6, 1.7, 1.8, 1.9)
ICU_TABLE = np.array(
    [
        [0.000, 0.000, 0.000, 0.000, 0.000, 0.000],
        [0.017, 0.000, 0.037, 0.040, 0.000, 0.000],
        [0.312, 0.000, 0.254, 0.203, 0.009, 0.000],
        [0.849, 0.000, 0.651, 0.511, 0.074, 0.000],
        [0.993, 0.002, 0.916, 0.798, 0.276, 0.049],
        [1.000, 0.047, 0.989, 0.945, 0.582, 0.235],
    ]
)
GROUP2 = np.array([[23, 72, 105], [60, 744, 1493], [56, 726, 2357]])


def recover_splits(d_counts, odds, gammas, table):
    """Integer search over (T, D - T): keep splits whose odds ratio rounds to
    the published one, then take the one closest to the published P-values
    (scipy binomial survival function as the tail)."""
    out = []
    for g, (d, orr) in enumerate(zip(d_counts, odds)):
        cands = [t for t in range(1, d) if round(t / (d - t), 2) == orr]
        err = {
            t: max(abs(stats.binom.sf(t - 1, d, gm / (1 + gm)) - table[j, g]) for j, gm in enumerate(gammas))
            for t in cands
        }
        ranked = sorted(err, key=err.get)
        assert err[ranked[0]] <= 0.0005, (g + 1, err[ranked[0]])
        assert len(ranked) == 1 or err[ranked[1]] > 0.0005, (g + 1, ranked[:2])
        out.append(ranked[0])
    return out


@pytest.fixture(scope="module")
def death_splits():
    return recover_splits(DEATH_D, DEATH_OR, DEATH_GAMMAS, DEATH_TABLE)


@pytest.fixture(scope="module")
def icu_splits():
    return recover_splits(ICU_D, ICU_OR, ICU_GAMMAS, ICU_TABLE)


def summaries_from(splits, d_counts):
    return [DiscordantSummary.from_counts(g + 1, N_PAIRS[g], d, t) for g, (d, t) in enumerate(zip(d_counts, splits))]


def grid_for(splits, d_counts, gammas):
    return with_truncated_product(gamma_grid_bounds(summaries_from(splits, d_counts), gammas), 0.1)


def test_splits_recovered(death_splits, icu_splits):
    # the packaged reconstruction must carry the oracle's splits
    assert death_splits == [datasets.DEATH_COUNTS[g][1] for g in datasets.GROUP_IDS] == [123, 177, 254, 122, 411]
    assert icu_splits == [datasets.ICU_COUNTS[g][1] for g in datasets.GROUP_IDS] == [1659, 1586, 801, 541, 633]
    assert sum(death_splits) == 1087


def test_c1_mortality_bounds(criterion, death_splits):
    t0 = time.perf_counter()
    grid = grid_for(death_splits, DEATH_D, DEATH_GAMMAS)
    elapsed = time.perf_counter() - t0
    err = np.abs(grid.p_upper.T - DEATH_TABLE[:, :5]).max()
    criterion(1, err <= 0.002 and elapsed < 1.0, f"mortality bounds: max |err| = {err:.5f} (tol 0.002), {elapsed:.3f} s (< 1 s)")


def test_c2_mortality_truncated_product(criterion, death_splits):
    grid = grid_for(death_splits, DEATH_D, DEATH_GAMMAS)
    err = np.abs(grid.combined - DEATH_TABLE[:, 5]).max()
    p1 = grid.combined[0]
    criterion(2, err <= 0.002 and p1 <= 1e-5, f"truncated product: max |err| = {err:.5f} (tol 0.002); Gamma=1 value {p1:.3g} (<= 1e-5)")


def test_c3_intersection_34(criterion, death_splits):
    grid = grid_for(death_splits, DEATH_D, DEATH_GAMMAS)
    p = truncated_product_pvalue(grid.p_upper[[2, 3], 0], 0.1)
    criterion(3, abs(p - 0.080) <= 0.001, f"H_{{3,4}} at Gamma=1: {p:.4f} (0.080 +/- 0.001)")


def test_c4_closed_testing_narrative(criterion, death_splits):
    s = summaries_from(death_splits, DEATH_D)

    def ct(gamma):
        col = gamma_grid_bounds(s, [gamma]).p_upper[:, 0]
        return closed_test(dict(zip((1, 2, 3, 4, 5), col)), 0.05, 0.1)

    r = {g: ct(g) for g in (1.00, 1.05, 1.10, 1.17, 1.18)}
    checks = [
        r[1.00].rejected_groups == [1, 2, 5],
        r[1.05].rejected_groups == [1, 2],
        r[1.10].rejected_groups == [2],
        r[1.17].rejected_groups == [] and r[1.17].is_rejected((1, 2)),
        abs(r[1.17].global_pvalue - 0.044) <= 0.002,
        r[1.18].rejected_subsets == [],
    ]
    detail = (
        f"rejected {r[1.00].rejected_groups}/{r[1.05].rejected_groups}/{r[1.10].rejected_groups} at 1/1.05/1.1; "
        f"1.17: H{{1,2}} rejected={r[1.17].is_rejected((1, 2))}, global p={r[1.17].global_pvalue:.4f}; "
        f"1.18: {len(r[1.18].rejected_subsets)} rejections"
    )
    criterion(4, all(checks), detail)


def test_c5_pooled_mcnemar(criterion, death_splits):
    p = mcnemar_upper_pvalue(sum(DEATH_D), sum(death_splits), 1.15).p_upper
    criterion(5, abs(p - 0.063) <= 0.002, f"pooled (1968, {sum(death_splits)}) at Gamma=1.15: {p:.4f} (0.063 +/- 0.002)")


def test_c6_amplification(criterion):
    a, b = amplify(1.17, 2.0), amplify(1.5, 4.0)
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(1000):
        g = 1 + 5 * rng.random()
        lam = g + 0.01 + 20 * rng.random()
        worst = max(worst, abs(amplify(g, amplify(g, lam)) - lam) / lam)
    ok = abs(a - 1.61) <= 0.005 and abs(b - 2.00) <= 0.005 and worst <= 1e-9
    criterion(6, ok, f"Delta(1.17, 2.0) = {a:.4f}; Delta(1.5, 4.0) = {b:.4f}; round-trip rel err {worst:.1e}")


def test_c7_icu_bounds_and_rejections(criterion, icu_splits):
    grid = grid_for(icu_splits, ICU_D, ICU_GAMMAS)
    err = np.abs(grid.p_upper.T - ICU_TABLE[:, :5]).max()
    rej = {}
    for j, g in enumerate(ICU_GAMMAS):
        rej[g] = closed_test(dict(zip((1, 2, 3, 4, 5), grid.p_upper[:, j])), 0.05, 0.1).rejected_groups
    ok = err <= 0.003 and rej[1.5] == [1, 2, 3, 4, 5] and all(rej[g] == [2] for g in (1.6, 1.7, 1.8))
    criterion(7, ok, f"ICU bounds: max |err| = {err:.5f} (tol 0.003); rejected at 1.5: {rej[1.5]}, 1.6-1.8: {rej[1.6]}/{rej[1.7]}/{rej[1.8]}")


def test_c8_group2_crosstab(criterion):
    # member categories: Dead, Alive with ICU, Alive without ICU
    member = [{"death": 1, "icu": 1}, {"death": 0, "icu": 1}, {"death": 0, "icu": 0}]
    pairs = []
    for r, c in itertools.product(range(3), range(3)):
        for k in range(GROUP2[r, c]):
            yt, yc = member[c], member[r]
            pairs.append(PairRecord(f"t4-{r}{c}-{k}", {}, {o: (yt[o], yc[o]) for o in ("death", "icu")}))
    tab = crosstab(pairs, datasets.COMPOSITE_AXIS)
    (s,), _ = summarize(pairs, Partition.single(pairs), "death")
    orr = mcnemar_odds_ratio(s)
    got = (
        s.n_discordant,
        s.n_control_only,
        f"{orr:.2f}",
        f"{100 * s.event_rate_treated:.1f}",
        f"{100 * s.event_rate_control:.1f}",
        tuple(int(v) for v in tab.col_totals),
        int(tab.total),
    )
    want = (293, 177, "1.53", "2.5", "3.5", (139, 1542, 3955), 5636)
    criterion(8, got == want and tab.discordance(["Dead"]) == (293, 177), f"D, T, OR, rates, column totals, total = {got}")


def test_c9_property_suite(criterion):
    results = {}
    rng = np.random.default_rng(9)

    # monotone in Gamma
    ok = True
    for _ in range(500):
        d = int(rng.integers(1, 5000))
        t = int(rng.integers(0, d + 1))
        gs = np.sort(1 + 4 * rng.random(4))
        ps = [mcnemar_upper_pvalue(d, t, g).p_upper for g in gs]
        ok &= all(a <= b + 1e-15 for a, b in zip(ps, ps[1:]))
    results["monotone"] = ok

    # sign-blind tree
    n = 400
    cov = [{"a": str(rng.integers(0, 2)), "b": f"L{rng.integers(0, 4)}"} for _ in range(n)]
    disc = rng.random(n) < np.array([0.05 + 0.3 * (c["a"] == "1") for c in cov])
    pairs = [PairRecord(f"s{i}", cov[i], {"y": ((0, 1) if disc[i] else (0, 0))}) for i in range(n)]
    specs = [CovariateSpec("a"), CovariateSpec("b", "categorical", ("L0", "L1", "L2", "L3"))]
    cfg = TreeConfig(min_split=20, min_leaf=10, cp=0.0, max_depth=3)
    ref = build_tree(pairs, specs, "y", cfg).to_json()
    results["sign-blind"] = all(
        build_tree([p.swapped() if f else p for p, f in zip(pairs, rng.random(n) < 0.5)], specs, "y", cfg).to_json() == ref
        for _ in range(1000)
    )

    # categorical optimality, m <= 12
    ok = True
    shallow = TreeConfig(min_split=2, min_leaf=1, cp=0.0, max_depth=1)
    for m in (3, 6, 9, 12):
        levels = [f"L{k}" for k in range(m)]
        lv = np.array(levels)[np.r_[np.arange(m), rng.integers(0, m, 30 * m)]]
        rate = dict(zip(levels, 0.5 * rng.random(m)))
        y = (rng.random(len(lv)) < np.array([rate[v] for v in lv])).astype(float)
        ps = [PairRecord(f"c{i}", {"x": v}, {"y": (0, int(yy))}) for i, (v, yy) in enumerate(zip(lv, y))]
        tree = build_tree(ps, [CovariateSpec("x", "categorical", tuple(levels))], "y", shallow)

        def sse(v):
            return float(((v - v.mean()) ** 2).sum()) if len(v) else 0.0

        best = max(
            sse(y) - sse(y[np.isin(lv, sub)]) - sse(y[~np.isin(lv, sub)])
            for mask in range(1, 2 ** (m - 1))
            for sub in [[levels[k] for k in range(m) if mask >> k & 1]]
        )
        got = 0.0 if tree.root.is_leaf else tree.root.split.improvement
        ok &= abs(got - best) <= 1e-9 * max(1.0, best)
    results["categorical optimal"] = ok

    # closed form vs Monte Carlo
    ok = True
    for L, tau in itertools.product((2, 3, 5), (0.05, 0.1, 1.0)):
        u = rng.random((1_000_000, L))
        lw = np.where(u <= tau, np.log(u), 0.0).sum(axis=1)
        cut = np.quantile(lw[lw < 0], 0.5)
        emp = np.mean(lw <= cut)
        ok &= abs(truncated_product_cdf(cut, L, tau) - emp) <= 3 * np.sqrt(emp * (1 - emp) / 1e6)
    results["closed form vs MC"] = ok

    # FWER under the global null: 2000 simulated data sets, five null groups
    spec = SyntheticSpec.from_dict(
        {"groups": [{"n_pairs": 400, "p_control": 0.1, "p_treated": 0.1}] * 5, "seed": 90}
    )
    fwer = simulate_rejections(spec, 2000)["fwer"]
    results[f"FWER {fwer:.4f}"] = fwer <= 0.06

    # exact tail vs direct summation
    import mpmath

    worst = 0.0
    for _ in range(60):
        d = int(rng.integers(1, 1001))
        t = int(rng.integers(0, d + 1))
        g = float(1 + 3 * rng.random())
        with mpmath.workdps(40):
            p = mpmath.mpf(g) / (1 + g)
            ref = float(mpmath.fsum(mpmath.binomial(d, k) * p**k * (1 - p) ** (d - k) for k in range(t, d + 1)))
        worst = max(worst, abs(mcnemar_upper_pvalue(d, t, g).p_upper - ref))
    results[f"tail err {worst:.1e}"] = worst <= 1e-12

    detail = "; ".join(f"{k}: {'ok' if v else 'FAILED'}" for k, v in results.items())
    criterion(9, all(results.values()), detail)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
