from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridmine.apriori import (AprioriError, PassTrace, Site, apriori_gen, apriori_local, candidate_ratio,
                              centralized, classical_baseline, global_topdown, local_threshold,
                              maximal_itemsets, mine_sites, support_counts)
from gridmine.data import gen_baskets
from gridmine.sim import Transport


def brute_frequent(db, min_support, max_size):
    items = sorted(set().union(*db)) if db else []
    out = {}
    for r in range(1, max_size + 1):
        for its in combinations(items, r):
            c = sum(1 for t in db if set(its) <= t)
            if c >= min_support:
                out[its] = c
    return out


def make_sites(db, m, k, s_g):
    sites = [Site(f"site{i}", db[i::m]) for i in range(m)]
    mine_sites(sites, k, s_g)
    return sites


def random_instance(rng, max_tx=200, max_items=20):
    n = int(rng.integers(10, max_tx + 1))
    n_items = int(rng.integers(4, max_items + 1))
    pats = [sorted(rng.choice(n_items, size=int(rng.integers(2, min(6, n_items) + 1)), replace=False).tolist())
            for _ in range(int(rng.integers(1, 4)))]
    db = gen_baskets(n, n_items, pats, float(rng.uniform(0.1, 0.5)), float(rng.uniform(0.02, 0.2)),
                     int(rng.integers(0, 10**6)))
    return db


def test_single_transaction():
    t = apriori_local([frozenset({1, 2})], 1)
    assert t.counts == {(1,): 1, (2,): 1, (1, 2): 1}


def test_unattainable_support():
    assert apriori_local([frozenset({1, 2})] * 3, 4).counts == {}
    assert apriori_local([], 1).counts == {}
    with pytest.raises(AprioriError):
        apriori_local([frozenset({1})], 0)


def test_against_brute_force():
    db = gen_baskets(100, 10, [[0, 1, 2, 3], [4, 5]], 0.4, 0.1, seed=3)
    got = apriori_local(db, 10, 5).counts
    assert got == brute_frequent(db, 10, 5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_against_brute_force_random(seed):
    db = random_instance(np.random.default_rng(seed), 60, 9)
    s = max(1, len(db) // 8)
    assert apriori_local(db, s).counts == brute_frequent(db, s, 9)


def test_apriori_gen_prunes():
    prev = [(1, 2), (1, 3), (2, 3), (1, 4)]
    assert apriori_gen(prev, 3) == [(1, 2, 3)]


def test_maximal_examples():
    assert maximal_itemsets([(1,), (2,), (1, 2)]) == {(1, 2)}
    assert maximal_itemsets([(1,), (2,), (3,)]) == {(1,), (2,), (3,)}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_maximal_brute_force(seed):
    db = random_instance(np.random.default_rng(seed), 80, 10)
    table = apriori_local(db, max(1, len(db) // 10))
    freq = table.frequent()
    want = {a for a in freq if not any(set(a) < set(b) for b in freq)}
    assert maximal_itemsets(table) == want


def test_local_threshold():
    assert local_threshold(10, 50, 100) == 5
    assert local_threshold(10, 33, 100) == 4
    assert local_threshold(1, 1, 100) == 1


def test_single_site_one_pass():
    db = gen_baskets(80, 8, [[0, 1, 2]], 0.4, 0.1, seed=1)
    sites = make_sites(db, 1, 3, 12)
    got, trace = global_topdown(sites, 3, 12)
    assert got == set(apriori_local(db, 12, 3).counts)
    assert trace.n_passes == 1


def test_benign_two_sites_two_passes():
    # identical halves: every locally frequent itemset is globally frequent
    half = gen_baskets(60, 8, [[0, 1, 2, 3]], 0.5, 0.05, seed=2)
    db = [t for pair in zip(half, half) for t in pair]
    sites = make_sites(db, 2, 4, 30)
    got, trace = global_topdown(sites, 4, 30)
    assert got == centralized(db, 4, 30)
    assert any(len(i) == 4 for i in got)
    assert trace.n_passes == 2
    base, btrace = classical_baseline(sites, 4, 30)
    assert base == got
    assert btrace.n_passes == 4


def test_four_sites_match_centralized():
    db = gen_baskets(400, 15, [[0, 1, 2], [3, 4, 5, 6], [7, 8]], 0.3, 0.05, seed=4)
    sites = make_sites(db, 4, 4, 40)
    assert global_topdown(sites, 4, 40)[0] == centralized(db, 4, 40)


def test_k5_baseline_five_passes():
    db = gen_baskets(200, 10, [[0, 1, 2, 3, 4]], 0.6, 0.02, seed=5)
    sites = make_sites(db, 2, 5, 60)
    got, trace = global_topdown(sites, 5, 60)
    base, btrace = classical_baseline(sites, 5, 60)
    assert (0, 1, 2, 3, 4) in got
    assert btrace.n_passes == 5
    assert trace.n_passes <= 2
    assert base == got


def test_errors():
    db = [frozenset({1, 2})] * 4
    sites = make_sites(db, 2, 2, 2)
    with pytest.raises(AprioriError):
        global_topdown(sites, 0, 2)
    with pytest.raises(AprioriError):
        global_topdown(sites, 2, 0)
    with pytest.raises(AprioriError):
        global_topdown([Site("raw", db)], 2, 2)
    with pytest.raises(AprioriError):
        global_topdown([], 2, 2)
    bad = Site("bad", [frozenset({-1})])
    bad.mine(1, 2)
    with pytest.raises(AprioriError):
        global_topdown([bad], 2, 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([2, 3, 4]), st.integers(1, 5))
def test_exact_and_pass_bound(seed, m, k):
    rng = np.random.default_rng(seed)
    db = random_instance(rng)
    s_g = max(1, int(len(db) * rng.uniform(0.05, 0.3)))
    sites = make_sites(db, m, k, s_g)
    got, trace = global_topdown(sites, k, s_g)
    for s in sites:
        s.reset_counters()
    base, btrace = classical_baseline(sites, k, s_g)
    want = centralized(db, k, s_g)
    assert got == want == base
    assert trace.n_passes <= btrace.n_passes
    # downward closed and really frequent
    for its in got:
        assert support_counts(db, [its])[its] >= s_g
        for r in range(1, len(its)):
            assert all(sub in got for sub in combinations(its, r))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_monotone_thresholds(seed):
    rng = np.random.default_rng(seed)
    db = random_instance(rng)
    lo = max(1, len(db) // 10)
    a = global_topdown(make_sites(db, 3, 4, lo), 4, lo)[0]
    b = global_topdown(make_sites(db, 3, 4, lo * 2), 4, lo * 2)[0]
    assert b <= a


def test_baseline_levels_match_apriori_candidates():
    db = gen_baskets(300, 12, [[0, 1, 2, 3], [4, 5, 6]], 0.35, 0.05, seed=8)
    sites = make_sites(db, 3, 4, 45)
    _, btrace = classical_baseline(sites, 4, 45)
    table = apriori_local(db, 45, 4)
    assert [len(p["broadcast"]) for p in btrace.passes] == table.candidates


def test_pass_trace_json_shape():
    db = gen_baskets(100, 8, [[0, 1, 2]], 0.4, 0.05, seed=9)
    sites = make_sites(db, 2, 3, 15)
    t = Transport()
    _, trace = global_topdown(sites, 3, 15, transport=t, coordinator="root")
    doc = trace.to_json()
    assert [p["pass"] for p in doc] == list(range(1, trace.n_passes + 1))
    assert {r["site"] for r in doc[0]["replies"]} == {"site0", "site1"}
    assert {r.round for r in t.trace.records} == set(range(1, trace.n_passes + 1))
    assert all(r.src == "root" or r.dst == "root" for r in t.trace.records)


def test_candidate_ratio_identical_and_zero():
    a = PassTrace(candidates={"s0": 10, "s1": 6})
    assert candidate_ratio(a, a) == 1.0
    with pytest.raises(AprioriError):
        candidate_ratio(a, PassTrace(candidates={"s0": 0}))


def test_candidate_ratio_hand_count():
    # site0: {1,2} x2, site1: {1,2} x2; threshold 4 globally, 2 locally
    db = [frozenset({1, 2})] * 4
    sites = make_sites(db, 2, 2, 4)
    got, ta = global_topdown(sites, 2, 4)
    assert got == {(1,), (2,), (1, 2)}
    # each site counts 2 singletons + 1 pair locally, nothing remote
    assert ta.candidates == {"site0": 3, "site1": 3}
    for s in sites:
        s.reset_counters()
    _, tb = classical_baseline(sites, 2, 4)
    # level 1: {1},{2}; level 2: {1,2}
    assert tb.candidates == {"site0": 3, "site1": 3}
    assert candidate_ratio(ta, tb) == 1.0


def skewed_sites(seed, m):
    pats = [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9, 10, 11], [12, 13, 14, 15]]
    return [Site(f"site{i}", gen_baskets(250, 20, [pats[i], [16, 17]], 0.5, 0.03, seed * 10 + i))
            for i in range(m)]


def test_candidate_ratio_sanity_band():
    # sites holding different planted patterns, the setting where skipping
    # intermediate levels pays; the band applies to the suite average
    ratios = []
    for seed in range(10):
        for m in (2, 3, 4):
            sites = skewed_sites(seed, m)
            n = sum(len(s.db) for s in sites)
            s_g = int(0.12 * n)
            mine_sites(sites, 4, s_g)
            _, ta = global_topdown(sites, 4, s_g)
            for s in sites:
                s.reset_counters()
            _, tb = classical_baseline(sites, 4, s_g)
            ratios.append(candidate_ratio(ta, tb))
    assert 0.5 <= sum(ratios) / len(ratios) <= 1.0
    assert min(ratios) >= 0.5
