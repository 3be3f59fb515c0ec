"""Variance-based distributed clustering.

Sites over-cluster their data into subclusters and ship only (center, size,
SSE). The aggregation node merges subclusters greedily while the SSE of a union
stays under a limit, then moves border subclusters between neighbouring global
clusters when that lowers the total SSE.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import Dataset

Ref = tuple[int, int]  # (site, local_id)


@dataclass(frozen=True)
class SubclusterStat:
    """Sufficient statistics of one subcluster; ``variance`` is its SSE."""

    center: np.ndarray
    size: int
    variance: float
    site: int = 0
    local_id: int = 0

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("subcluster size must be >= 1")
        if self.variance < 0:
            raise ValueError("subcluster SSE must be >= 0")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))

    @property
    def ref(self) -> Ref:
        return (self.site, self.local_id)

    @property
    def dim(self) -> int:
        return int(self.center.size)

    @classmethod
    def of_points(cls, points: np.ndarray, site: int = 0, local_id: int = 0) -> "SubclusterStat":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        c = pts.mean(axis=0)
        sse = float(((pts - c) ** 2).sum())
        return cls(c, len(pts), sse, site, local_id)

    def to_json(self) -> dict:
        return {"site": self.site, "local_id": self.local_id, "size": self.size,
                "center": self.center.tolist(), "variance": self.variance}

    @classmethod
    def from_json(cls, doc: dict) -> "SubclusterStat":
        return cls(np.asarray(doc["center"], float), int(doc["size"]), float(doc["variance"]),
                   int(doc["site"]), int(doc["local_id"]))


def union_stat(a: SubclusterStat, b: SubclusterStat) -> SubclusterStat:
    """Pooled statistics of the union of two disjoint point sets."""
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    n = a.size + b.size
    center = (a.size * a.center + b.size * b.center) / n
    gap = a.center - b.center
    sse = a.variance + b.variance + (a.size * b.size / n) * float(gap @ gap)
    site, lid = min(a.ref, b.ref)
    return SubclusterStat(center, n, sse, site, lid)


def pooled(stats: Iterable[SubclusterStat]) -> SubclusterStat:
    it = iter(stats)
    acc = next(it)
    for s in it:
        acc = union_stat(acc, s)
    return acc


def to_jsonl(stats: Sequence[SubclusterStat]) -> str:
    return "".join(json.dumps(s.to_json(), sort_keys=True) + "\n" for s in stats)


def from_jsonl(text: str) -> list[SubclusterStat]:
    return [SubclusterStat.from_json(json.loads(line)) for line in text.splitlines() if line.strip()]


# ---------------------------------------------------------------- local phase

def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d = _sq_dists(x, np.asarray(centers)).min(axis=1)
        total = d.sum()
        if total == 0:
            centers.append(x[rng.integers(len(x))])
        else:
            centers.append(x[rng.choice(len(x), p=d / total)])
    return np.asarray(centers)


def _fill_empty(x: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Give every empty cluster the point farthest from its current center."""
    labels = labels.copy()
    while True:
        sizes = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(sizes == 0)
        if not len(empty):
            return labels
        centers = np.vstack([x[labels == j].mean(axis=0) if sizes[j] else x[0] for j in range(k)])
        d = ((x - centers[labels]) ** 2).sum(axis=1)
        d[sizes[labels] <= 1] = -1  # never empty another cluster
        labels[int(np.argmax(d))] = empty[0]


def kmeans(x: np.ndarray, k: int, seed: int = 0, max_iter: int = 100) -> np.ndarray:
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(x, k, rng)
    labels = np.full(len(x), -1)
    for _ in range(max_iter):
        new = _fill_empty(x, _sq_dists(x, centers).argmin(axis=1), k)
        if np.array_equal(new, labels):
            break
        labels = new
        centers = np.vstack([x[labels == j].mean(axis=0) for j in range(k)])
    return labels


def kharmonic(x: np.ndarray, k: int, seed: int = 0, p: float = 3.5,
              max_iter: int = 100, tol: float = 1e-10) -> np.ndarray:
    """K-harmonic-means center updates followed by a hard nearest-center split."""
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(x, k, rng)
    for _ in range(max_iter):
        d = np.sqrt(_sq_dists(x, centers))
        d = np.maximum(d, 1e-12)
        q = d ** (-p - 2)
        memb = q / q.sum(axis=1, keepdims=True)
        weight = q.sum(axis=1) / (d ** -p).sum(axis=1) ** 2
        coef = memb * weight[:, None]
        new = (coef.T @ x) / coef.sum(axis=0)[:, None]
        shift = float(np.abs(new - centers).max())
        centers = new
        if shift < tol:
            break
    return _fill_empty(x, _sq_dists(x, centers).argmin(axis=1), k)


LOCAL_ALGOS: dict[str, Callable[..., np.ndarray]] = {"kmeans": kmeans, "kharmonic": kharmonic}


def local_subclusters(ds: Dataset | np.ndarray, k: int, algo: str = "kmeans",
                      site: int = 0, seed: int = 0) -> list[SubclusterStat]:
    """Over-cluster one site's data into ``k`` subclusters and summarise them."""
    x = ds.points if isinstance(ds, Dataset) else np.atleast_2d(np.asarray(ds, dtype=float))
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(x):
        raise ValueError(f"k={k} exceeds the {len(x)} points available")
    if algo not in LOCAL_ALGOS:
        raise ValueError(f"unknown local algorithm {algo!r}")
    labels = LOCAL_ALGOS[algo](x, k, seed=seed)
    return [SubclusterStat.of_points(x[labels == j], site, j) for j in range(k)]


# ---------------------------------------------------------- aggregation phase

def spread(stat: SubclusterStat, criterion: str = "mean") -> float:
    """Variance figure the merge limit is compared against.

    ``"mean"`` is SSE per point, ``"sse"`` the raw SSE.
    """
    if criterion == "mean":
        return stat.variance / stat.size
    if criterion == "sse":
        return stat.variance
    raise ValueError(f"unknown criterion {criterion!r}")


@dataclass
class VarianceConfig:
    var_limit: float
    border_fraction: float = 0.2
    max_rounds: int = 20
    criterion: str = "mean"

    def __post_init__(self):
        if not self.var_limit > 0:
            raise ValueError("var_limit must be positive")
        if self.criterion not in ("mean", "sse"):
            raise ValueError(f"unknown criterion {self.criterion!r}")

    @classmethod
    def relative(cls, stats: Sequence[SubclusterStat], factor: float = 2.0, **kw) -> "VarianceConfig":
        """Limit set to ``factor`` times the largest individual subcluster variance."""
        crit = kw.get("criterion", "mean")
        return cls(factor * max(spread(s, crit) for s in stats), **kw)

    def b_for(self, member_count: int) -> int:
        if member_count <= 1:
            return 0
        return min(member_count - 1, math.ceil(self.border_fraction * member_count))


@dataclass
class GlobalLabeling:
    """Subcluster -> global cluster; ``merges`` holds the accepted union SSEs in order."""

    label_of: dict[Ref, int]
    merges: list[float] = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return len(set(self.label_of.values()))

    def groups(self) -> dict[int, list[Ref]]:
        out: dict[int, list[Ref]] = {}
        for ref in sorted(self.label_of):
            out.setdefault(self.label_of[ref], []).append(ref)
        return out

    def to_json(self) -> dict:
        return {"labels": [{"site": s, "local_id": l, "global": g}
                           for (s, l), g in sorted(self.label_of.items())],
                "merges": self.merges}


def _dense(groups: Iterable[Iterable[Ref]]) -> dict[Ref, int]:
    ordered = sorted((sorted(g) for g in groups if g), key=lambda g: g[0])
    return {ref: gid for gid, g in enumerate(ordered) for ref in g}


def global_merge(stats: Sequence[SubclusterStat], cfg: VarianceConfig | float,
                 criterion: str = "mean") -> GlobalLabeling:
    """Greedy agglomeration under the union variance limit.

    Repeatedly joins the two current global clusters whose union has the
    smallest variance, as long as it is within ``var_limit``. Stale heap entries
    are skipped by version stamps; ties go to the lexicographically smaller refs.
    """
    if isinstance(cfg, VarianceConfig):
        limit, criterion = cfg.var_limit, cfg.criterion
    else:
        limit = float(cfg)
    if not stats:
        raise ValueError("no subclusters to merge")
    cur: dict[Ref, SubclusterStat] = {}
    members: dict[Ref, list[Ref]] = {}
    for s in stats:
        cur[s.ref] = s
        members[s.ref] = [s.ref]
    heap: list = []

    def push(a: Ref, b: Ref) -> None:
        a, b = min(a, b), max(a, b)
        u = spread(union_stat(cur[a], cur[b]), criterion)
        if u <= limit:
            heapq.heappush(heap, (u, a, b, len(members[a]), len(members[b])))

    keys = sorted(cur)
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            push(a, b)
    accepted = []
    while heap:
        u, a, b, na, nb = heapq.heappop(heap)
        if a not in cur or b not in cur or len(members[a]) != na or len(members[b]) != nb:
            continue
        merged = union_stat(cur[a], cur[b])
        del cur[b]
        cur[a] = merged
        members[a] = members[a] + members.pop(b)
        accepted.append(u)
        for other in sorted(cur):
            if other != a:
                push(a, other)
    return GlobalLabeling(_dense(members.values()), accepted)


def total_sse(labeling: GlobalLabeling, stats: Sequence[SubclusterStat]) -> float:
    by_ref = {s.ref: s for s in stats}
    return sum(pooled(by_ref[r] for r in refs).variance for refs in labeling.groups().values())


def border_candidates(labeling: GlobalLabeling, stats: Sequence[SubclusterStat],
                      b_rule: VarianceConfig | Callable[[int], int] | int) -> list[Ref]:
    """The ``b`` member subclusters farthest from each global cluster's pooled center."""
    if isinstance(b_rule, VarianceConfig):
        rule = b_rule.b_for
    elif callable(b_rule):
        rule = b_rule
    else:
        rule = lambda n, b=int(b_rule): 0 if n <= 1 else min(b, n - 1)  # noqa: E731
    by_ref = {s.ref: s for s in stats}
    out: list[Ref] = []
    for gid, refs in sorted(labeling.groups().items()):
        if len(refs) <= 1:
            continue
        center = pooled(by_ref[r] for r in refs).center
        ranked = sorted(refs, key=lambda r: (-float(np.linalg.norm(by_ref[r].center - center)), r))
        out.extend(ranked[:rule(len(refs))])
    return out


def _move_gain(src: list[SubclusterStat], dst: list[SubclusterStat], cand: SubclusterStat) -> float:
    """SSE change of moving ``cand`` from ``src`` (which contains it) to ``dst``."""
    rest = [s for s in src if s.ref != cand.ref]
    before = pooled(src).variance + pooled(dst).variance
    after = pooled(rest).variance + union_stat(pooled(dst), cand).variance
    return after - before


def perturbation(labeling: GlobalLabeling, stats: Sequence[SubclusterStat],
                 cfg: VarianceConfig) -> GlobalLabeling:
    """Move border subclusters to neighbouring global clusters when SSE drops.

    Each round recomputes the border candidates; a candidate tries the other
    global clusters closest first and takes the first strictly improving move.
    Stops at a fixed point or after ``cfg.max_rounds`` rounds.
    """
    by_ref = {s.ref: s for s in stats}
    label = dict(labeling.label_of)
    for _ in range(cfg.max_rounds):
        moved = False
        current = GlobalLabeling(label)
        for ref in border_candidates(current, stats, cfg):
            groups = GlobalLabeling(label).groups()
            src = groups[label[ref]]
            if len(src) <= 1:
                continue
            cand = by_ref[ref]
            others = []
            for gid, refs in groups.items():
                if gid == label[ref]:
                    continue
                c = pooled(by_ref[r] for r in refs).center
                others.append((float(np.linalg.norm(cand.center - c)), gid))
            for _, gid in sorted(others):
                gain = _move_gain([by_ref[r] for r in src], [by_ref[r] for r in groups[gid]], cand)
                if gain < -1e-12 * max(1.0, total_sse(GlobalLabeling(label), stats)):
                    label[ref] = gid
                    moved = True
                    break
        if not moved:
            break
    groups: dict[int, list[Ref]] = {}
    for ref, gid in label.items():
        groups.setdefault(gid, []).append(ref)
    return GlobalLabeling(_dense(groups.values()), list(labeling.merges))


def sweep_var_limit(stats: Sequence[SubclusterStat], limits: Sequence[float],
                    criterion: str = "mean") -> list[tuple[float, int, float]]:
    """Cluster count and total SSE of :func:`global_merge` across ascending limits."""
    if not len(limits):
        raise ValueError("no limits to sweep")
    if list(limits) != sorted(limits):
        raise ValueError("limits must be sorted ascending")
    rows = []
    for lim in limits:
        lab = global_merge(stats, lim, criterion)
        rows.append((float(lim), lab.n_clusters, total_sse(lab, stats)))
    return rows


def widest_plateau(rows: Sequence[tuple[float, int, float]]) -> int:
    """Cluster count holding over the widest log-range of limits in a sweep."""
    best, span = rows[0][1], -1.0
    start = 0
    for i in range(1, len(rows) + 1):
        if i == len(rows) or rows[i][1] != rows[start][1]:
            lo, hi = rows[start][0], rows[i - 1][0]
            width = math.log(hi / lo) if lo > 0 else 0.0
            if width > span:
                best, span = rows[start][1], width
            start = i
    return best


def gather_cost(stats: Sequence[SubclusterStat]) -> dict[str, int]:
    """Scalars shipped to the aggregator: raw (d + 2 per subcluster) and the 3d envelope."""
    raw = sum(s.dim + 2 for s in stats)
    envelope = sum(3 * s.dim for s in stats)
    return {"raw_scalars": raw, "envelope_units": envelope, "subclusters": len(stats)}
