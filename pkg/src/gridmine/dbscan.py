"""Per-site DBSCAN and the compact local density model shipped to merge sites."""

from __future__ import annotations

import itertools
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, pairwise_to

NOISE = -1


class GridIndex:
    """Uniform grid with cell side ``eps`` for fixed-radius neighbour queries.

    Both supported metrics bound every coordinate delta by the radius, so only
    the 3**d surrounding cells have to be scanned.
    """

    def __init__(self, points: np.ndarray, eps: float, metric: str = "euclidean"):
        self.points = points
        self.eps = eps
        self.metric = metric
        self.cells: dict[tuple, list[int]] = defaultdict(list)
        keys = np.floor(points / eps).astype(np.int64) if len(points) else np.zeros((0, 1), int)
        self.keys = [tuple(k) for k in keys.tolist()]
        for i, k in enumerate(self.keys):
            self.cells[k].append(i)
        dim = points.shape[1] if points.ndim == 2 else 1
        self.offsets = list(itertools.product((-1, 0, 1), repeat=dim))

    def query(self, i: int) -> np.ndarray:
        """Positions of all points within ``eps`` of point ``i`` (itself included)."""
        key = self.keys[i]
        cand = []
        for off in self.offsets:
            cell = self.cells.get(tuple(k + o for k, o in zip(key, off)))
            if cell:
                cand.extend(cell)
        cand = np.asarray(sorted(cand), dtype=np.int64)
        d = pairwise_to(self.points[cand], self.points[i], self.metric)
        return cand[d <= self.eps]


def neighbourhoods(points: np.ndarray, eps: float, metric: str = "euclidean") -> list[np.ndarray]:
    if len(points) == 0:
        return []
    if points.shape[1] <= 6:
        index = GridIndex(points, eps, metric)
        return [index.query(i) for i in range(len(points))]
    # 3**d cells stop paying off in high dimension
    return [np.flatnonzero(pairwise_to(points, p, metric) <= eps) for p in points]


@dataclass
class Labeling:
    """DBSCAN output keyed by point id."""

    cluster_of: dict[int, int]
    core_flag: dict[int, bool]

    @property
    def n_clusters(self) -> int:
        labels = [c for c in self.cluster_of.values() if c != NOISE]
        return max(labels) + 1 if labels else 0

    def noise_ids(self) -> list[int]:
        return [pid for pid, c in self.cluster_of.items() if c == NOISE]

    def members(self, cluster: int) -> list[int]:
        return [pid for pid, c in self.cluster_of.items() if c == cluster]

    def partition(self) -> set[frozenset[int]]:
        groups: dict[int, set[int]] = defaultdict(set)
        for pid, c in self.cluster_of.items():
            if c != NOISE:
                groups[c].add(pid)
        return {frozenset(g) for g in groups.values()}


def dbscan(ds: Dataset, eps: float, minpts: int, metric: str = "euclidean") -> Labeling:
    """Classic DBSCAN; the eps-neighbourhood counts the query point itself.

    Clusters are grown from unvisited core points in ascending position order, so
    ids are dense and deterministic. A border point reachable from two clusters
    stays with the first one that reaches it.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if minpts < 1:
        raise ValueError("minpts must be >= 1")
    n = len(ds)
    nbrs = neighbourhoods(ds.points, eps, metric)
    core = np.array([len(nb) >= minpts for nb in nbrs], dtype=bool)
    label = np.full(n, NOISE, dtype=np.int64)
    next_id = 0
    for start in range(n):
        if not core[start] or label[start] != NOISE:
            continue
        label[start] = next_id
        queue = deque([start])
        while queue:
            p = queue.popleft()
            if not core[p]:
                continue
            for q in nbrs[p]:
                if label[q] == NOISE:
                    label[q] = next_id
                    queue.append(q)
        next_id += 1
    ids = ds.ids.tolist()
    return Labeling({pid: int(label[i]) for i, pid in enumerate(ids)},
                    {pid: bool(core[i]) for i, pid in enumerate(ids)})


@dataclass
class RepresentativePair:
    """An absolute core point and the furthest core point within eps of it."""

    s: int
    c: int
    s_coords: np.ndarray
    c_coords: np.ndarray

    def endpoints(self) -> list[np.ndarray]:
        if self.s == self.c:
            return [self.s_coords]
        return [self.s_coords, self.c_coords]


def absolute_core_set(labeling: Labeling, ds: Dataset, eps: float,
                      metric: str = "euclidean") -> dict[int, list[RepresentativePair]]:
    """Greedy eps-separated cover of each cluster's core points.

    Cores are scanned in ascending id order and a core becomes absolute when no
    already-chosen absolute core of its cluster lies within eps. Every skipped
    core is therefore within eps of its blocker (coverage) and chosen ones are
    pairwise more than eps apart (separation).
    """
    pos = {pid: i for i, pid in enumerate(ds.ids.tolist())}
    cores: dict[int, list[int]] = defaultdict(list)
    for pid in sorted(labeling.cluster_of):
        if labeling.core_flag[pid]:
            cores[labeling.cluster_of[pid]].append(pid)
    out: dict[int, list[RepresentativePair]] = {}
    for cid in range(labeling.n_clusters):
        members = cores.get(cid)
        if not members:
            raise ValueError(f"cluster {cid} has no core points")
        coords = ds.points[[pos[p] for p in members]]
        chosen: list[int] = []
        for j in range(len(members)):
            if chosen:
                d = pairwise_to(coords[chosen], coords[j], metric)
                if np.any(d <= eps):
                    continue
            chosen.append(j)
        pairs = []
        for j in chosen:
            d = pairwise_to(coords, coords[j], metric)
            within = np.flatnonzero(d <= eps)
            # members are id-sorted, so argmax's first hit is the lowest id on ties
            far = int(within[np.argmax(d[within])])
            pairs.append(RepresentativePair(members[j], members[far],
                                            coords[j].copy(), coords[far].copy()))
        out[cid] = pairs
    return out


@dataclass
class ModelCluster:
    """One cluster of a density model: representative pairs plus absorbed points."""

    pairs: list[RepresentativePair]
    absorbed: list[np.ndarray] = field(default_factory=list)
    provenance: list[tuple[int, int]] = field(default_factory=list)

    def endpoints(self) -> list[np.ndarray]:
        return [e for p in self.pairs for e in p.endpoints()]


@dataclass
class DensityModel:
    """Representatives, local eps and noise of a (sub-)site.

    A freshly built local model has empty ``absorbed`` sets and one provenance
    entry per cluster; merged models fill both in.
    """

    eps: float
    minpts: int
    clusters: list[ModelCluster]
    noise: list[np.ndarray]
    dim: int
    merged: bool = False

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def point_count(self) -> int:
        """Coordinates carried by the model (pair endpoints, absorbed and noise)."""
        return sum(len(c.endpoints()) + len(c.absorbed) for c in self.clusters) + len(self.noise)

    def to_json(self) -> dict:
        clusters = []
        for i, c in enumerate(self.clusters):
            rec = {"id": i, "pairs": [{"s": p.s_coords.tolist(), "c": p.c_coords.tolist()}
                                      for p in c.pairs]}
            if self.merged:
                rec["absorbed"] = [a.tolist() for a in c.absorbed]
                rec["provenance"] = [list(p) for p in c.provenance]
            clusters.append(rec)
        return {"eps": self.eps, "minpts": self.minpts, "dim": self.dim,
                "clusters": clusters, "noise": [n.tolist() for n in self.noise]}

    @classmethod
    def from_json(cls, doc: dict) -> "DensityModel":
        clusters = []
        for rec in doc["clusters"]:
            pairs = []
            for p in rec["pairs"]:
                s, c = np.asarray(p["s"], float), np.asarray(p["c"], float)
                # point ids do not travel; equal coords mark a self-covering pair
                same = bool(np.array_equal(s, c))
                pairs.append(RepresentativePair(0, 0 if same else 1, s, c))
            clusters.append(ModelCluster(
                pairs,
                [np.asarray(a, float) for a in rec.get("absorbed", [])],
                [tuple(p) for p in rec.get("provenance", [])]))
        noise = [np.asarray(n, float) for n in doc["noise"]]
        dim = doc.get("dim")
        if dim is None:
            sample = noise[:1] or [p.s_coords for c in clusters for p in c.pairs][:1]
            dim = len(sample[0]) if sample else 1
        return cls(float(doc["eps"]), int(doc["minpts"]), clusters, noise, int(dim),
                   merged="absorbed" in (doc["clusters"][0] if doc["clusters"] else {}))


def build_local_model(ds: Dataset, eps: float, minpts: int, metric: str = "euclidean",
                      site: int = 0) -> DensityModel:
    """DBSCAN the site's data and keep only representative pairs and noise."""
    labeling = dbscan(ds, eps, minpts, metric)
    reps = absolute_core_set(labeling, ds, eps, metric)
    pos = {pid: i for i, pid in enumerate(ds.ids.tolist())}
    clusters = [ModelCluster(reps[cid], [], [(site, cid)]) for cid in range(labeling.n_clusters)]
    noise = [ds.points[pos[pid]].copy() for pid in labeling.noise_ids()]
    return DensityModel(float(eps), int(minpts), clusters, noise, ds.dim)


def model_pairs_count(model: DensityModel) -> int:
    return sum(len(c.pairs) for c in model.clusters)


def compression_ratio(model: DensityModel, n_points: int) -> float:
    """Representative endpoints per input point, a rough stand-in for mu."""
    if n_points == 0:
        return math.nan
    return sum(len(c.endpoints()) for c in model.clusters) / n_points
