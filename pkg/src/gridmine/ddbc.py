"""Hierarchical merging of density models into sub-global and global models."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dbscan import NOISE, DensityModel, ModelCluster, RepresentativePair
from .topology import Topology
from .unionfind import UnionFind


class MergeError(ValueError):
    pass


@dataclass
class MergeConfig:
    """Merge parameters.

    ``theta`` is the disaggregating threshold on ``|E_x - E_y|``; ``None`` means
    ``theta_factor * min(E_x, E_y)``. ``eps_aver_rule`` is ``"mean"``, ``"min"``
    or an explicit float used when the two eps values are too far apart.
    """

    theta: float | None = None
    theta_factor: float = 0.25
    eps_aver_rule: str | float = "mean"
    metric: str = "euclidean"

    def __post_init__(self):
        if self.theta is not None and self.theta < 0:
            raise MergeError("theta must be >= 0")

    def theta_for(self, ex: float, ey: float) -> float:
        return self.theta if self.theta is not None else self.theta_factor * min(ex, ey)

    def eps_aver(self, ex: float, ey: float) -> float:
        rule = self.eps_aver_rule
        if rule == "mean":
            return (ex + ey) / 2.0
        if rule == "min":
            return min(ex, ey)
        return float(rule)


# a merged model is the same record as a local one, with absorbed/provenance populated
MergedModel = DensityModel


def _dists(a: np.ndarray, b: np.ndarray, metric: str) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    if metric == "manhattan":
        return np.abs(diff).sum(axis=2)
    return np.sqrt((diff ** 2).sum(axis=2))


def _stack(points: Sequence[np.ndarray], dim: int) -> np.ndarray:
    return np.vstack(points) if len(points) else np.zeros((0, dim))


def absorb_noise(cluster_reps: Sequence[RepresentativePair], noise: Sequence[np.ndarray],
                 eps: float, metric: str = "euclidean"):
    """Split ``noise`` into points within eps of some pair endpoint and the rest."""
    if eps <= 0:
        raise MergeError("eps must be positive")
    ends = [e for p in cluster_reps for e in p.endpoints()]
    if not ends or not len(noise):
        return [], list(noise)
    dim = len(ends[0])
    near = (_dists(_stack(noise, dim), _stack(ends, dim), metric) <= eps).any(axis=1)
    absorbed = [n for n, hit in zip(noise, near) if hit]
    remaining = [n for n, hit in zip(noise, near) if not hit]
    return absorbed, remaining


def _extend(clusters: list[ModelCluster], noise: list[np.ndarray], eps: float,
            metric: str, dim: int) -> tuple[list[list[np.ndarray]], list[np.ndarray]]:
    """Apply the noise-absorption test for every cluster at once.

    A point within reach of several clusters goes to the one holding the nearest
    endpoint (lower cluster index on ties), so nothing is duplicated.
    """
    gained: list[list[np.ndarray]] = [[] for _ in clusters]
    if not noise:
        return gained, []
    best = np.full(len(noise), np.inf)
    owner = np.full(len(noise), -1)
    pts = _stack(noise, dim)
    for ci, cl in enumerate(clusters):
        ends = cl.endpoints()
        if not ends:
            continue
        d = _dists(pts, _stack(ends, dim), metric).min(axis=1)
        take = (d <= eps) & (d < best)
        best[take] = d[take]
        owner[take] = ci
    remaining = []
    for n, o in zip(noise, owner.tolist()):
        if o < 0:
            remaining.append(n)
        else:
            gained[o].append(n)
    return gained, remaining


def _witness(a: list[np.ndarray], b: list[np.ndarray], metric: str, dim: int) -> float:
    """Smallest endpoint-to-endpoint distance between two representative sets."""
    if not a or not b:
        return math.inf
    return float(_dists(_stack(a, dim), _stack(b, dim), metric).min())


def _copy_cluster(c: ModelCluster) -> ModelCluster:
    return ModelCluster(list(c.pairs), list(c.absorbed), list(c.provenance))


def merge_pair(left: DensityModel, right: DensityModel, cfg: MergeConfig | None = None) -> DensityModel:
    """Merge two density models at a parent site.

    With ``|E_x - E_y| <= theta`` (direct aggregating) both sides absorb each
    other's noise and whole clusters are joined whenever any pair of their
    representative endpoints lies within ``E = min(E_x, E_y)``; joins are closed
    transitively. Otherwise (disaggregating) only the smaller-eps side absorbs
    noise and individual pairs of the larger-eps side migrate into the nearest
    admissible cluster under ``E_aver``.
    """
    cfg = cfg or MergeConfig()
    if left.dim != right.dim:
        raise MergeError(f"dimension mismatch: {left.dim} vs {right.dim}")
    if left.minpts != right.minpts:
        raise MergeError("local models were built with different minpts")
    metric, dim = cfg.metric, left.dim
    e = min(left.eps, right.eps)
    delta = abs(left.eps - right.eps)
    left_is_x = left.eps <= right.eps
    nl = len(left.clusters)
    clusters = [_copy_cluster(c) for c in left.clusters + right.clusters]
    x_idx = list(range(nl)) if left_is_x else list(range(nl, len(clusters)))
    y_idx = list(range(nl, len(clusters))) if left_is_x else list(range(nl))
    x_noise, y_noise = (left.noise, right.noise) if left_is_x else (right.noise, left.noise)

    gained, y_rest = _extend([clusters[i] for i in x_idx], list(y_noise), e, metric, dim)
    for i, g in zip(x_idx, gained):
        clusters[i].absorbed.extend(g)

    if delta <= cfg.theta_for(left.eps, right.eps):
        gained, x_rest = _extend([clusters[j] for j in y_idx], list(x_noise), e, metric, dim)
        for j, g in zip(y_idx, gained):
            clusters[j].absorbed.extend(g)
        uf = UnionFind(range(len(clusters)))
        for i in x_idx:
            ei = clusters[i].endpoints()
            for j in y_idx:
                if _witness(ei, clusters[j].endpoints(), metric, dim) <= e:
                    uf.union(i, j)
        groups: dict[int, list[int]] = {}
        for i in range(len(clusters)):
            groups.setdefault(uf.find(i), []).append(i)
        merged = []
        for members in sorted(groups.values(), key=min):
            mc = ModelCluster([], [], [])
            for i in members:
                mc.pairs.extend(clusters[i].pairs)
                mc.absorbed.extend(clusters[i].absorbed)
                mc.provenance.extend(clusters[i].provenance)
            merged.append(mc)
        eps_z = e
    else:
        x_rest = list(x_noise)
        eps_z = cfg.eps_aver(left.eps, right.eps)
        x_ends = [clusters[i].endpoints() for i in x_idx]
        for j in y_idx:
            keep, best = [], -1
            for pair in clusters[j].pairs:
                pe = pair.endpoints()
                dist = [_witness(pe, xe, metric, dim) for xe in x_ends]
                best = int(np.argmin(dist)) if dist else -1
                if best >= 0 and dist[best] <= eps_z:
                    target = clusters[x_idx[best]]
                    target.absorbed.extend(pe)
                    for src in clusters[j].provenance:
                        if src not in target.provenance:
                            target.provenance.append(src)
                else:
                    keep.append(pair)
            if not keep:
                # everything migrated; whatever it had absorbed goes along with the last pair
                if clusters[j].absorbed and best >= 0:
                    clusters[x_idx[best]].absorbed.extend(clusters[j].absorbed)
                    clusters[j].absorbed = []
            clusters[j].pairs = keep
        merged = [c for c in clusters if c.pairs or c.absorbed]

    # left-then-right order whichever side had the smaller eps
    noise = x_rest + y_rest if left_is_x else y_rest + x_rest
    return DensityModel(float(eps_z), left.minpts, merged, noise, dim, merged=True)


@dataclass
class LevelRecord:
    level: int
    node: str
    inputs: list[str]
    clusters_in: list[int]
    clusters_out: int
    bytes_in: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


def hierarchical_merge(models: Sequence[DensityModel], topology: Topology,
                       cfg: MergeConfig | None = None, stop_level: int | None = None,
                       transport=None, trace: list | None = None):
    """Merge leaf models up ``topology``; return the root model or, with
    ``stop_level``, the list of sub-global models at that level.

    Each internal node folds its children left to right with :func:`merge_pair`.
    Child models travel to the parent through ``transport`` when given.
    """
    cfg = cfg or MergeConfig()
    if len(models) != topology.m:
        raise MergeError(f"{len(models)} models for {topology.m} leaves")
    if stop_level is not None and not 0 <= stop_level <= topology.height:
        raise MergeError(f"stop_level must be in 0..{topology.height}")
    held: dict[int, DensityModel] = {leaf: models[leaf] for leaf in range(topology.m)}
    last = topology.height if stop_level is None else stop_level
    for node_id in topology.postorder():
        node = topology.nodes[node_id]
        if node.level > last:
            break
        size = 0
        for child in node.children:
            if transport is not None:
                size += transport.send(topology.nodes[child].name, node.name, "model",
                                       held[child].to_json(), round=node.level)
        acc = held[node.children[0]]
        for child in node.children[1:]:
            acc = merge_pair(acc, held[child], cfg)
        held[node_id] = acc
        if trace is not None:
            trace.append(LevelRecord(node.level, node.name,
                                     [topology.nodes[c].name for c in node.children],
                                     [held[c].n_clusters for c in node.children],
                                     acc.n_clusters, size).to_json())
    if stop_level is not None:
        return [held[i] for i in topology.frontiers[stop_level]]
    return held[topology.root]


def assign_points(model: DensityModel, points: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    """Reconstruct membership: nearest representative or absorbed point within the model eps."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    refs, owner = [], []
    for ci, c in enumerate(model.clusters):
        for e in c.endpoints() + list(c.absorbed):
            refs.append(e)
            owner.append(ci)
    labels = np.full(len(points), NOISE, dtype=np.int64)
    if not refs or not len(points):
        return labels
    d = _dists(points, np.vstack(refs), metric)
    nearest = d.argmin(axis=1)
    hit = d[np.arange(len(points)), nearest] <= model.eps
    labels[hit] = np.asarray(owner)[nearest[hit]]
    return labels


def quality_P(distributed: dict[int, int], centralized: dict[int, int]) -> float:
    """Agreement between two clusterings of the same points.

    Clusters are matched one-to-one by maximum overlap on the contingency
    table; noise only agrees with noise. Returns matched points over all points.
    """
    if set(distributed) != set(centralized):
        raise MergeError("labelings cover different point ids")
    ids = sorted(distributed)
    if not ids:
        return 1.0
    dl = np.array([distributed[i] for i in ids])
    cl = np.array([centralized[i] for i in ids])
    agree = int(np.sum((dl == NOISE) & (cl == NOISE)))
    dk = sorted(set(dl[dl != NOISE].tolist()))
    ck = sorted(set(cl[cl != NOISE].tolist()))
    if dk and ck:
        di = {c: i for i, c in enumerate(dk)}
        cj = {c: j for j, c in enumerate(ck)}
        table = np.zeros((len(dk), len(ck)), dtype=np.int64)
        for a, b in zip(dl.tolist(), cl.tolist()):
            if a != NOISE and b != NOISE:
                table[di[a], cj[b]] += 1
        rows, cols = linear_sum_assignment(table, maximize=True)
        agree += int(table[rows, cols].sum())
    return agree / len(ids)


def speedup(m: int, mu: float, n_total: int) -> float:
    """Estimated speedup of distributed over centralized clustering.

    ``(m - 1) log N / ((mu^2 m - 1) log m)``; infinite when ``mu^2 m == 1``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if m == 1:
        raise ValueError("speedup undefined for a single node (log m = 0)")
    if mu <= 0:
        raise ValueError("mu must be positive")
    denom = mu * mu * m - 1
    if denom < 0:
        raise ValueError("requires mu^2 * m >= 1")
    if denom == 0:
        return math.inf
    return (m - 1) * math.log(n_total) / (denom * math.log(m))
