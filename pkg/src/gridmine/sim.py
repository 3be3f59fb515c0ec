"""In-process multi-site simulation: message accounting, job specs and job execution."""

from __future__ import annotations

import json
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import apriori as ap
from . import variance as vc
from .data import Dataset, generate_from_spec, read_csv, read_transactions, round_robin_partition
from .dbscan import NOISE, build_local_model, compression_ratio, dbscan
from .ddbc import MergeConfig, assign_points, hierarchical_merge, quality_P, speedup
from .topology import KINDS, Topology, build_topology


class JobError(ValueError):
    pass


def canonical(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def count_elements(payload: Any) -> int:
    """Scalar leaves of a JSON-like payload; dict keys are not counted."""
    if isinstance(payload, dict):
        return sum(count_elements(v) for v in payload.values())
    if isinstance(payload, (list, tuple)):
        return sum(count_elements(v) for v in payload)
    return 1


@dataclass(frozen=True)
class Message:
    src: str
    dst: str
    kind: str
    bytes: int
    elements: int
    round: int

    def to_json(self) -> dict:
        return {"from": self.src, "to": self.dst, "kind": self.kind, "bytes": self.bytes,
                "elements": self.elements, "round": self.round}


@dataclass
class MessageTrace:
    records: list[Message] = field(default_factory=list)

    def validate(self) -> None:
        rounds = [r.round for r in self.records]
        if rounds != sorted(rounds):
            raise JobError("trace rounds are not monotone")

    def to_json(self) -> list[dict]:
        return [r.to_json() for r in self.records]

    def between(self, src: str | None = None, dst: str | None = None, kind: str | None = None) -> list[Message]:
        return [r for r in self.records
                if (src is None or r.src == src) and (dst is None or r.dst == dst)
                and (kind is None or r.kind == kind)]


class Transport:
    """The only channel between logical sites.

    Payloads are measured in bytes of their canonical JSON and in scalar
    elements. Concurrent senders append under a lock; the exported trace is
    ordered by ``(round, from, to)`` with arrival order breaking ties, so it
    does not depend on thread timing.
    """

    def __init__(self):
        self._records: list[tuple[int, str, str, int, Message]] = []
        self._lock = threading.Lock()
        self._seq = 0

    def send(self, src: str, dst: str, kind: str, payload: Any, round: int = 0,
             elements: int | None = None) -> int:
        body = payload if isinstance(payload, (str, bytes)) else canonical(payload)
        size = len(body) if isinstance(body, bytes) else len(body.encode())
        n = count_elements(payload) if elements is None else elements
        with self._lock:
            self._records.append((round, src, dst, self._seq, Message(src, dst, kind, size, n, round)))
            self._seq += 1
        return size

    def note(self, site: str, kind: str, round: int = 0) -> None:
        """Record a local processing step (no data crosses a site boundary)."""
        self.send(site, site, kind, "", round, elements=0)

    @property
    def trace(self) -> MessageTrace:
        with self._lock:
            return MessageTrace([r[-1] for r in sorted(self._records, key=lambda r: r[:4])])


def account(trace: MessageTrace) -> dict:
    per_round: dict[int, dict] = {}
    for r in trace.records:
        row = per_round.setdefault(r.round, {"elements": 0, "bytes": 0, "messages": 0})
        row["elements"] += r.elements
        row["bytes"] += r.bytes
        row["messages"] += 1
    return {"total_elements": sum(r.elements for r in trace.records),
            "total_bytes": sum(r.bytes for r in trace.records),
            "messages": len(trace.records),
            "per_round": {k: per_round[k] for k in sorted(per_round)}}


# ---------------------------------------------------------------- job specs

CONFIG_KEYS = {
    "ddbc": {"eps", "eps_central", "minpts", "theta", "theta_factor", "eps_aver_rule",
             "metric", "stop_level", "oracle"},
    "variance": {"k", "algo", "var_limit", "limit_factor", "border_fraction", "max_rounds",
                 "criterion", "sweep"},
    "apriori": {"k", "min_support", "baseline"},
}


@dataclass
class JobSpec:
    """What to run, on which data, over which topology, and where to write.

    ``dataset`` is a path (CSV points or transaction file) or an inline
    generator spec; relative paths resolve against ``base_dir``.
    """

    algorithm: str
    dataset: str | dict
    sites: int
    config: dict = field(default_factory=dict)
    topology: dict = field(default_factory=lambda: {"kind": "binary_tree"})
    outputs: dict = field(default_factory=dict)
    seed: int = 42
    experiment_id: str = ""
    base_dir: Path | None = None

    def validate(self) -> None:
        if self.algorithm not in CONFIG_KEYS:
            raise JobError(f"unknown algorithm {self.algorithm!r}")
        if not isinstance(self.sites, int) or self.sites < 1:
            raise JobError("sites must be a positive integer")
        kind = self.config.get("kind", self.algorithm)
        if kind != self.algorithm:
            raise JobError(f"config is for {kind!r} but algorithm is {self.algorithm!r}")
        extra = set(self.config) - CONFIG_KEYS[self.algorithm] - {"kind"}
        if extra:
            raise JobError(f"config keys {sorted(extra)} do not apply to {self.algorithm}")
        tkind = self.topology.get("kind", "binary_tree")
        if tkind not in KINDS:
            raise JobError(f"unknown topology {tkind!r}")
        if tkind == "tree_p" and (not isinstance(self.topology.get("p"), int) or self.topology["p"] < 2):
            raise JobError("tree_p topology needs an integer group size p >= 2")
        required = {"ddbc": ("eps", "minpts"), "variance": ("k",), "apriori": ("k", "min_support")}
        for key in required[self.algorithm]:
            if key not in self.config:
                raise JobError(f"{self.algorithm} config needs {key!r}")

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> "JobSpec":
        try:
            spec = cls(doc["algorithm"], doc["dataset"], doc["sites"], dict(doc.get("config", {})),
                       dict(doc.get("topology", {"kind": "binary_tree"})), dict(doc.get("outputs", {})),
                       int(doc.get("seed", 42)), str(doc.get("experiment_id", "")), base_dir)
        except KeyError as exc:
            raise JobError(f"job spec missing {exc}") from None
        spec.validate()
        return spec

    @classmethod
    def load(cls, path: str | Path) -> "JobSpec":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise JobError(f"{path}: {exc}") from None
        return cls.from_dict(doc, path.parent)

    def resolve(self, p: str) -> Path:
        path = Path(p)
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        return path

    def build_topology(self) -> Topology:
        return build_topology(self.sites, self.topology.get("kind", "binary_tree"), self.topology.get("p"))


@dataclass
class JobResult:
    result: dict
    trace: MessageTrace
    metrics: dict


def _per_site(value, m: int, name: str) -> list:
    if isinstance(value, list):
        if len(value) != m:
            raise JobError(f"{name} lists {len(value)} values for {m} sites")
        return value
    return [value] * m


def _map_sites(fn: Callable[[int], Any], m: int, workers: int) -> list:
    if workers <= 1 or m == 1:
        return [fn(i) for i in range(m)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(m)))


def _load_points(spec: JobSpec) -> Dataset:
    if isinstance(spec.dataset, dict):
        out = generate_from_spec(spec.dataset, spec.dataset.get("seed", spec.seed))
        if not isinstance(out, Dataset):
            raise JobError("dataset spec does not generate points")
        return out
    return read_csv(spec.resolve(spec.dataset))


def _load_transactions(spec: JobSpec) -> list[frozenset[int]]:
    if isinstance(spec.dataset, dict):
        out = generate_from_spec(spec.dataset, spec.dataset.get("seed", spec.seed))
        if isinstance(out, Dataset):
            raise JobError("dataset spec does not generate transactions")
        return out
    return read_transactions(spec.resolve(spec.dataset))


def _run_ddbc(spec: JobSpec, topo: Topology, transport: Transport, workers: int) -> tuple[dict, dict]:
    cfg = spec.config
    ds = _load_points(spec)
    part = round_robin_partition(ds, spec.sites)
    site_data = part.split(ds)
    eps = _per_site(cfg["eps"], spec.sites, "eps")
    minpts = int(cfg["minpts"])
    metric = cfg.get("metric", "euclidean")
    models = _map_sites(lambda i: build_local_model(site_data[i], float(eps[i]), minpts, metric, site=i),
                        spec.sites, workers)
    mcfg = MergeConfig(cfg.get("theta"), cfg.get("theta_factor", 0.25),
                       cfg.get("eps_aver_rule", "mean"), metric)
    levels: list = []
    stop = cfg.get("stop_level")
    out = hierarchical_merge(models, topo, mcfg, stop, transport, levels)
    finals = out if isinstance(out, list) else [out]
    result = {"algorithm": "ddbc",
              "local_clusters": [m.n_clusters for m in models],
              "levels": levels}
    if isinstance(out, list):
        result["sub_global_models"] = [m.to_json() for m in out]
        result["n_clusters"] = [m.n_clusters for m in out]
    else:
        result["global_model"] = out.to_json()
        result["n_clusters"] = out.n_clusters
    mu = float(np.mean([compression_ratio(m, len(d)) for m, d in zip(models, site_data)])) if len(ds) else 0.0
    metrics = {"clusters": result["n_clusters"] if not isinstance(out, list) else sum(result["n_clusters"]),
               "passes": topo.height, "mu": mu}
    try:
        metrics["speedup"] = speedup(spec.sites, mu, len(ds))
    except (ValueError, ZeroDivisionError):
        metrics["speedup"] = None
    if cfg.get("oracle") or "eps_central" in cfg:
        central_eps = float(cfg.get("eps_central", eps[0]))
        central = dbscan(ds, central_eps, minpts, metric)
        if len(finals) == 1:
            labels = assign_points(finals[0], ds.points, metric)
            dist = dict(zip(ds.ids.tolist(), labels.tolist()))
            q = quality_P(dist, central.cluster_of)
            result["quality_P"] = q
            metrics["quality_P"] = q
            result["noise_points"] = int(sum(1 for v in dist.values() if v == NOISE))
        result["centralized_clusters"] = central.n_clusters
    return result, metrics


def _run_variance(spec: JobSpec, topo: Topology, transport: Transport, workers: int) -> tuple[dict, dict]:
    cfg = spec.config
    ds = _load_points(spec)
    site_data = round_robin_partition(ds, spec.sites).split(ds)
    ks = _per_site(cfg["k"], spec.sites, "k")
    algo = cfg.get("algo", "kmeans")
    local = _map_sites(lambda i: vc.local_subclusters(site_data[i], int(ks[i]), algo, site=i,
                                                      seed=spec.seed + i),
                       spec.sites, workers)
    root = topo.nodes[topo.root].name
    stats: list[vc.SubclusterStat] = []
    for i, st in enumerate(local):
        raw = vc.gather_cost(st)["raw_scalars"]
        transport.send(f"site{i}", root, "subclusters", vc.to_jsonl(st), round=1, elements=raw)
        # the aggregator works from what arrived, not from the site's objects
        stats.extend(vc.from_jsonl(vc.to_jsonl(st)))
    crit = cfg.get("criterion", "mean")
    if "var_limit" in cfg:
        vcfg = vc.VarianceConfig(float(cfg["var_limit"]), cfg.get("border_fraction", 0.2),
                                 cfg.get("max_rounds", 20), crit)
    else:
        vcfg = vc.VarianceConfig.relative(stats, cfg.get("limit_factor", 2.0),
                                          border_fraction=cfg.get("border_fraction", 0.2),
                                          max_rounds=cfg.get("max_rounds", 20), criterion=crit)
    merged = vc.global_merge(stats, vcfg)
    final = vc.perturbation(merged, stats, vcfg)
    cost = vc.gather_cost(stats)
    result = {"algorithm": "variance", "k": [int(k) for k in ks], "var_limit": vcfg.var_limit,
              "n_clusters": final.n_clusters, "labeling": final.to_json(),
              "sse_merged": vc.total_sse(merged, stats), "sse_final": vc.total_sse(final, stats),
              "merge_iterations": len(merged.merges), "gather": cost}
    if "sweep" in cfg:
        result["sweep"] = [list(r) for r in vc.sweep_var_limit(stats, sorted(cfg["sweep"]), crit)]
    metrics = {"clusters": final.n_clusters, "passes": 1, "speedup": None, "quality_P": None}
    return result, metrics


def _run_apriori(spec: JobSpec, topo: Topology, transport: Transport, workers: int) -> tuple[dict, dict]:
    cfg = spec.config
    db = _load_transactions(spec)
    k = int(cfg["k"])
    sup = cfg["min_support"]
    min_support = math.ceil(sup * len(db)) if isinstance(sup, float) and sup < 1 else int(sup)
    min_support = max(1, min_support)
    sites = [ap.Site(f"site{i}", db[i::spec.sites]) for i in range(spec.sites)]
    n_total = len(db)
    _map_sites(lambda i: sites[i].mine(ap.local_threshold(min_support, len(sites[i].db), n_total), k),
               spec.sites, workers)
    for s in sites:
        s.reset_counters()
    coord = topo.nodes[topo.root].name
    found, trace = ap.global_topdown(sites, k, min_support, transport, coord)
    result = {"algorithm": "apriori", "k": k, "min_support": min_support,
              "itemsets": [list(i) for i in sorted(found, key=lambda x: (len(x), x))],
              "passes": trace.to_json(), "candidates": trace.candidates}
    metrics = {"clusters": len(found), "passes": trace.n_passes, "speedup": None, "quality_P": None}
    if cfg.get("baseline"):
        for s in sites:
            s.reset_counters()
        base, btrace = ap.classical_baseline(sites, k, min_support, Transport(), coord)
        result["baseline"] = {"passes": btrace.n_passes, "candidates": btrace.candidates,
                              "same_result": base == found}
        result["candidate_ratio"] = ap.candidate_ratio(trace, btrace)
    return result, metrics


RUNNERS = {"ddbc": _run_ddbc, "variance": _run_variance, "apriori": _run_apriori}


def run_job(spec: JobSpec, workers: int = 1) -> JobResult:
    """Local phase on every leaf, then the algorithm's aggregation along the topology."""
    spec.validate()
    topo = spec.build_topology()
    transport = Transport()
    t0 = time.perf_counter()
    result, metrics = RUNNERS[spec.algorithm](spec, topo, transport, workers)
    trace = transport.trace
    trace.validate()
    acc = account(trace)
    result["topology"] = {"kind": topo.kind, "m": topo.m, "p": topo.p, "height": topo.height}
    metrics.update({"elements": acc["total_elements"], "bytes": acc["total_bytes"],
                    "messages": acc["messages"], "wall_time_s": time.perf_counter() - t0})
    return JobResult(result, trace, metrics)


REPORT_COLUMNS = ("experiment_id", "algorithm", "m", "parameters", "count", "quality_P",
                  "passes", "elements_shipped", "speedup")


def report_row(spec: JobSpec, res: JobResult) -> dict:
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return v

    return {"experiment_id": spec.experiment_id or spec.algorithm,
            "algorithm": spec.algorithm, "m": spec.sites,
            "parameters": canonical({"config": spec.config, "topology": spec.topology, "seed": spec.seed}),
            "count": res.metrics.get("clusters"), "quality_P": fmt(res.metrics.get("quality_P")),
            "passes": res.metrics.get("passes"), "elements_shipped": res.metrics.get("elements"),
            "speedup": fmt(res.metrics.get("speedup"))}


def summary(results: Sequence[JobResult]) -> list[dict]:
    return [account(r.trace) for r in results]
