"""Distributed frequent-itemset mining: local Apriori plus top-down global collection.

Itemsets are sorted tuples of integer item ids. Support thresholds are absolute
transaction counts.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

Itemset = tuple[int, ...]
TransactionDB = list[frozenset[int]]


class AprioriError(ValueError):
    pass


def support_counts(db: Sequence[frozenset[int]], itemsets: Iterable[Itemset]) -> dict[Itemset, int]:
    """Count each itemset by a full scan of ``db``."""
    wanted = [(its, frozenset(its)) for its in itemsets]
    counts = dict.fromkeys((its for its, _ in wanted), 0)
    for t in db:
        for its, fs in wanted:
            if fs <= t:
                counts[its] += 1
    return counts


def apriori_gen(prev: Iterable[Itemset], size: int) -> list[Itemset]:
    """Join frequent (size-1)-itemsets sharing a prefix, then prune by subsets."""
    prev = sorted(set(prev))
    known = set(prev)
    out = []
    for i, a in enumerate(prev):
        for b in prev[i + 1:]:
            if a[:-1] != b[:-1]:
                break
            cand = a + (b[-1],)
            if all(sub in known for sub in combinations(cand, size - 1)):
                out.append(cand)
    return out


@dataclass
class ItemsetTable:
    """One site's locally frequent itemsets with exact counts.

    ``candidates`` lists per level how many itemsets had their support counted.
    """

    counts: dict[Itemset, int]
    min_support: int
    n_transactions: int
    candidates: list[int] = field(default_factory=list)

    def frequent(self) -> set[Itemset]:
        return set(self.counts)

    def level(self, size: int) -> dict[Itemset, int]:
        return {i: c for i, c in self.counts.items() if len(i) == size}


def apriori_local(db: Sequence[frozenset[int]], min_support: int, max_size: int | None = None) -> ItemsetTable:
    """Level-wise Apriori; returns every itemset with support >= ``min_support``."""
    if min_support < 1:
        raise AprioriError("min_support must be >= 1")
    table = ItemsetTable({}, min_support, len(db))
    if not db:
        return table
    singles = Counter(i for t in db for i in t)
    table.candidates.append(len(singles))
    level = {(i,): c for i, c in sorted(singles.items()) if c >= min_support}
    size = 1
    while level:
        table.counts.update(level)
        if max_size is not None and size >= max_size:
            break
        size += 1
        cands = apriori_gen(level, size)
        if not cands:
            break
        table.candidates.append(len(cands))
        level = {i: c for i, c in support_counts(db, cands).items() if c >= min_support}
    return table


def maximal_itemsets(table: ItemsetTable | Iterable[Itemset]) -> set[Itemset]:
    """Frequent itemsets with no frequent proper superset."""
    freq = table.frequent() if isinstance(table, ItemsetTable) else set(table)
    out = set()
    for its in freq:
        if not any(sub in freq for sub in _one_item_extensions(its, freq)):
            out.add(its)
    return out


def _one_item_extensions(its: Itemset, freq: set[Itemset]):
    # every frequent proper superset has a frequent superset one item larger (downward closure)
    size = len(its) + 1
    base = set(its)
    for other in freq:
        if len(other) == size and base.issubset(other):
            yield other


def local_threshold(global_support: int, n_site: int, n_total: int) -> int:
    """Per-site threshold whose pigeonhole guarantees no globally frequent itemset is missed."""
    if n_total == 0:
        return 1
    return max(1, math.ceil(global_support * n_site / n_total))


class Site:
    """A data site: raw transactions plus its local mining table.

    ``count`` answers remote support requests; itemsets not already counted
    during local mining are recounted from the raw transactions and tallied as
    extra candidates.
    """

    def __init__(self, name: str | int, db: Sequence[frozenset[int]]):
        self.name = str(name)
        self.db = list(db)
        self.table: ItemsetTable | None = None
        self.counted: set[Itemset] = set()
        self.remote_candidates = 0

    @property
    def items(self) -> set[int]:
        return set().union(*self.db) if self.db else set()

    def mine(self, min_support: int, max_size: int) -> ItemsetTable:
        self.table = apriori_local(self.db, min_support, max_size)
        self.counted = set(self.table.counts)
        return self.table

    @property
    def local_candidates(self) -> int:
        return sum(self.table.candidates) if self.table else 0

    def count(self, itemsets: Iterable[Itemset]) -> dict[Itemset, int]:
        itemsets = list(itemsets)
        known = self.table.counts if self.table else {}
        missing = [i for i in itemsets if i not in known]
        fresh = support_counts(self.db, missing)
        self.remote_candidates += sum(1 for i in missing if i not in self.counted)
        self.counted.update(missing)
        return {i: known[i] if i in known else fresh[i] for i in itemsets}

    def item_counts(self) -> dict[Itemset, int]:
        return {(i,): c for i, c in sorted(Counter(i for t in self.db for i in t).items())}

    def reset_counters(self) -> None:
        self.counted = set(self.table.counts) if self.table else set()
        self.remote_candidates = 0


@dataclass
class PassTrace:
    passes: list[dict] = field(default_factory=list)
    candidates: dict[str, int] = field(default_factory=dict)

    @property
    def n_passes(self) -> int:
        return len(self.passes)

    @property
    def total_candidates(self) -> int:
        return sum(self.candidates.values())

    def record(self, broadcast: Iterable[Itemset], replies: dict[str, int]) -> None:
        self.passes.append({"pass": len(self.passes) + 1,
                            "broadcast": [list(i) for i in sorted(broadcast, key=lambda x: (len(x), x))],
                            "replies": [{"site": s, "counted": n} for s, n in replies.items()]})

    def to_json(self) -> list[dict]:
        return self.passes


def _prepare(sites: Sequence[Site], k: int, min_support_global: int) -> None:
    if k < 1:
        raise AprioriError("requested size k must be >= 1")
    if min_support_global < 1:
        raise AprioriError("global support threshold must be >= 1")
    if not sites:
        raise AprioriError("no sites")
    for s in sites:
        if s.table is None:
            raise AprioriError(f"site {s.name} has not run its local mining phase")
        for its in s.table.counts:
            if any(not isinstance(i, int) or i < 0 for i in its):
                raise AprioriError(f"site {s.name} uses invalid item ids")


def mine_sites(sites: Sequence[Site], k: int, min_support_global: int) -> None:
    """Local mining phase with proportional per-site thresholds."""
    n_total = sum(len(s.db) for s in sites)
    for s in sites:
        s.mine(local_threshold(min_support_global, len(s.db), n_total), k)
        s.reset_counters()


def _closure(frequent: Iterable[Itemset]) -> set[Itemset]:
    out: set[Itemset] = set()
    for its in frequent:
        if its in out:
            continue
        for r in range(1, len(its) + 1):
            out.update(combinations(its, r))
    return out


def _send(transport, coordinator: str, site: Site, kind: str, payload, rnd: int, up: bool) -> None:
    if transport is None:
        return
    if up:
        transport.send(site.name, coordinator, kind, payload, round=rnd)
    else:
        transport.send(coordinator, site.name, kind, payload, round=rnd)


def global_topdown(sites: Sequence[Site], k: int, min_support_global: int,
                   transport=None, coordinator: str = "coordinator") -> tuple[set[Itemset], PassTrace]:
    """Top-down global collection over sites that finished local mining.

    Pass 1 gathers every site's maximal locally frequent itemsets (size <= k)
    and its item counts. Pass 2 broadcasts the union, together with the pairs
    drawn from those itemsets, and gathers their support counts from every site.
    Itemsets failing the global test form F; if some subset of F is still
    undecided and all of its pairs are globally frequent, a third pass collects
    those. The result is the downward closure of what was found frequent.

    Anything containing a globally infrequent item is settled without counting.
    A lone site is its own coordinator and finishes after pass 1.
    """
    _prepare(sites, k, min_support_global)
    trace = PassTrace()
    counts: dict[Itemset, int] = {}

    replies = {}
    maxima: set[Itemset] = set()
    for s in sites:
        mine = sorted((i for i in maximal_itemsets(s.table) if len(i) <= k), key=lambda x: (len(x), x))
        items = s.item_counts()
        _send(transport, coordinator, s, "request", {"want": "maximal+items", "k": k}, 1, up=False)
        _send(transport, coordinator, s, "maximal",
              {"maximal": [list(i) for i in mine], "items": [[i[0], c] for i, c in items.items()]},
              1, up=True)
        replies[s.name] = len(mine) + len(items)
        maxima.update(mine)
        for i, c in items.items():
            counts[i] = counts.get(i, 0) + c
    trace.record([], replies)

    freq_items = {i[0] for i, c in counts.items() if c >= min_support_global}
    maxima = {i for i in maxima if len(i) > 1}
    if len(sites) == 1:
        # local threshold equals the global one, so every local maximum is globally frequent
        frequent = set(maxima) | {(i,) for i in freq_items}
        trace.candidates = {s.name: s.local_candidates + s.remote_candidates for s in sites}
        return {i for i in _closure(frequent) if len(i) <= k}, trace

    def admissible(its: Itemset) -> bool:
        return set(its) <= freq_items

    def collect(request: list[Itemset], rnd: int) -> None:
        replies = {}
        for s in sites:
            _send(transport, coordinator, s, "count_request", [list(i) for i in request], rnd, up=False)
            got = s.count(request)
            _send(transport, coordinator, s, "counts", [[list(i), c] for i, c in got.items()], rnd, up=True)
            replies[s.name] = len(got)
            for i, c in got.items():
                counts[i] = counts.get(i, 0) + c
        trace.record(request, replies)

    pairs = {p for m in maxima for p in combinations(m, 2)}
    round2 = sorted({i for i in maxima | pairs if admissible(i)}, key=lambda x: (len(x), x))
    if round2:
        collect(round2, 2)
    frequent = {i for i in round2 if counts[i] >= min_support_global}
    frequent |= {(i,) for i in freq_items}
    closure = _closure(frequent)
    failed = {i for i in maxima if i not in closure}
    infrequent_pairs = {p for p in pairs if p not in closure}
    need = set()
    for f in failed:
        for r in range(3, len(f)):
            for sub in combinations(f, r):
                if sub in closure or sub in counts:
                    continue
                if any(p in infrequent_pairs for p in combinations(sub, 2)):
                    continue
                need.add(sub)
    if need:
        request = sorted(need, key=lambda x: (len(x), x))
        collect(request, 3)
        frequent |= {i for i in request if counts[i] >= min_support_global}
    trace.candidates = {s.name: s.local_candidates + s.remote_candidates for s in sites}
    return {i for i in _closure(frequent) if len(i) <= k}, trace


def classical_baseline(sites: Sequence[Site], k: int, min_support_global: int,
                       transport=None, coordinator: str = "coordinator") -> tuple[set[Itemset], PassTrace]:
    """Level-wise global exchange: one counting pass per itemset size up to ``k``.

    Each level's candidates come from the previous level's globally frequent
    itemsets, so every site counts the same globally pruned candidate set.
    """
    _prepare(sites, k, min_support_global)
    trace = PassTrace()
    per_site = {s.name: 0 for s in sites}
    items = sorted(set().union(*(s.items for s in sites)))
    cands: list[Itemset] = [(i,) for i in items]
    result: set[Itemset] = set()
    size = 1
    while cands and size <= k:
        totals = dict.fromkeys(cands, 0)
        replies = {}
        for s in sites:
            _send(transport, coordinator, s, "count_request", [list(i) for i in cands], size, up=False)
            got = support_counts(s.db, cands)
            _send(transport, coordinator, s, "counts", [[list(i), c] for i, c in got.items()], size, up=True)
            per_site[s.name] += len(cands)
            replies[s.name] = len(cands)
            for i, c in got.items():
                totals[i] += c
        trace.record(cands, replies)
        level = {i for i, c in totals.items() if c >= min_support_global}
        result |= level
        size += 1
        cands = apriori_gen(level, size)
    trace.candidates = per_site
    return result, trace


def centralized(db: Sequence[frozenset[int]], k: int, min_support: int) -> set[Itemset]:
    return set(apriori_local(db, min_support, k).counts)


def candidate_ratio(run_a: PassTrace, run_b: PassTrace) -> float:
    denom = run_b.total_candidates
    if denom == 0:
        raise AprioriError("baseline run counted no candidates")
    return run_a.total_candidates / denom
