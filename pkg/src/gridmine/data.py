"""Datasets, distances, partitioning and synthetic data generators."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

METRICS = ("euclidean", "manhattan")


class DataError(ValueError):
    """Raised for malformed datasets or generator specs."""


def distance(a: Sequence[float], b: Sequence[float], metric: str = "euclidean") -> float:
    """Distance between two points under ``metric``.

    >>> distance((0, 0), (3, 4))
    5.0
    >>> distance((0, 0), (3, 4), "manhattan")
    7.0
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    if metric == "euclidean":
        return float(math.sqrt(float(diff @ diff)))
    if metric == "manhattan":
        return float(np.abs(diff).sum())
    raise DataError(f"unknown metric {metric!r}")


def pairwise_to(points: np.ndarray, target: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    """Distances from every row of ``points`` to one ``target`` point."""
    diff = np.asarray(points, dtype=float) - np.asarray(target, dtype=float)
    if metric == "euclidean":
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if metric == "manhattan":
        return np.abs(diff).sum(axis=1)
    raise DataError(f"unknown metric {metric!r}")


@dataclass(frozen=True)
class Dataset:
    """An ordered set of d-dimensional points with stable integer ids."""

    points: np.ndarray
    ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.size == 0:
            pts = pts.reshape(0, pts.shape[1] if pts.ndim == 2 else 1)
        ids = np.arange(len(pts)) if self.ids is None else np.asarray(self.ids, dtype=int)
        if len(ids) != len(pts):
            raise DataError("ids and points differ in length")
        if len(set(ids.tolist())) != len(ids):
            raise DataError("point ids must be unique")
        if pts.shape[1] < 1:
            raise DataError("points need at least one dimension")
        if not np.all(np.isfinite(pts)):
            raise DataError("all coordinates must be finite")
        pts.setflags(write=False)
        ids.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    def subset(self, ids: Iterable[int]) -> "Dataset":
        pos = {pid: i for i, pid in enumerate(self.ids.tolist())}
        sel = [pos[i] for i in ids]
        return Dataset(self.points[sel], self.ids[sel])

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(np.vstack([self.points, other.points]),
                       np.concatenate([self.ids, other.ids]))


@dataclass(frozen=True)
class Partitioning:
    site_count: int
    assignment: dict[int, int]

    def site_ids(self, site: int) -> list[int]:
        return [pid for pid, s in self.assignment.items() if s == site]

    def sizes(self) -> list[int]:
        out = [0] * self.site_count
        for s in self.assignment.values():
            out[s] += 1
        return out

    def split(self, ds: Dataset) -> list[Dataset]:
        return [ds.subset(self.site_ids(s)) for s in range(self.site_count)]


def round_robin_partition(ds: Dataset, m: int) -> Partitioning:
    """Assign the i-th point (file order) to site ``i mod m``."""
    if m < 1:
        raise DataError("site count must be >= 1")
    return Partitioning(m, {int(pid): i % m for i, pid in enumerate(ds.ids)})


def gen_gaussian_mixture(components: Sequence[dict], seed: int) -> Dataset:
    """Sample isotropic Gaussian blobs.

    Each component is ``{"center": [...], "stdev": s, "count": n}``. Points are
    emitted component by component, so ids ``0..count-1`` belong to the first.
    """
    if not components:
        raise DataError("generator spec has no components")
    rng = np.random.default_rng(seed)
    chunks = []
    dim = None
    for comp in components:
        center = np.asarray(comp["center"], dtype=float)
        stdev = float(comp["stdev"])
        count = int(comp["count"])
        if count < 1 or stdev < 0:
            raise DataError(f"bad component {comp!r}")
        if dim is None:
            dim = center.size
        elif center.size != dim:
            raise DataError("components differ in dimension")
        chunks.append(center + stdev * rng.standard_normal((count, center.size)))
    return Dataset(np.vstack(chunks))


def gen_baskets(n_transactions: int, n_items: int, patterns: Sequence[Sequence[int]],
                pattern_prob: float, noise_prob: float, seed: int) -> list[frozenset[int]]:
    """Market-basket transactions with planted patterns.

    Every transaction includes each planted pattern independently with
    probability ``pattern_prob`` and each item independently with ``noise_prob``.
    """
    if n_transactions < 0 or n_items < 1:
        raise DataError("need n_transactions >= 0 and n_items >= 1")
    for pat in patterns:
        if any(not 0 <= it < n_items for it in pat):
            raise DataError(f"pattern {pat!r} uses items outside 0..{n_items - 1}")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_transactions):
        items = set(np.flatnonzero(rng.random(n_items) < noise_prob).tolist())
        for pat, hit in zip(patterns, rng.random(len(patterns)) < pattern_prob):
            if hit:
                items.update(pat)
        out.append(frozenset(items))
    return out


def load_generator_spec(path: str | Path) -> dict:
    with open(path) as fh:
        spec = json.load(fh)
    if not isinstance(spec, dict):
        raise DataError("generator spec must be a JSON object")
    return spec


def generate_from_spec(spec: dict, seed: int | None = None):
    """Run the generator described by a JSON spec.

    ``{"components": [...], "seed": s}`` yields a :class:`Dataset`;
    ``{"kind": "basket", ...}`` yields a list of transactions.
    """
    seed = spec.get("seed", 42) if seed is None else seed
    if spec.get("kind", "gaussian") == "basket":
        try:
            return gen_baskets(int(spec["n_transactions"]), int(spec["n_items"]),
                               spec.get("patterns", []), float(spec.get("pattern_prob", 0.3)),
                               float(spec.get("noise_prob", 0.05)), seed)
        except KeyError as exc:
            raise DataError(f"basket spec missing {exc}") from None
    if "components" not in spec:
        raise DataError("gaussian spec needs 'components'")
    return gen_gaussian_mixture(spec["components"], seed)


def write_csv(ds: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [f"x{j}" for j in range(ds.dim)])
        for pid, row in zip(ds.ids.tolist(), ds.points.tolist()):
            w.writerow([pid] + [repr(v) for v in row])


def read_csv(path: str | Path) -> Dataset:
    """Load a dataset; ids are reassigned by row order starting at 0."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["id"]:
        raise DataError(f"{path}: expected header 'id,x0,...'")
    dim = len(rows[0]) - 1
    try:
        pts = [[float(v) for v in r[1:]] for r in rows[1:] if r]
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if any(len(p) != dim for p in pts):
        raise DataError(f"{path}: ragged rows")
    return Dataset(np.asarray(pts, dtype=float).reshape(len(pts), dim))


def write_transactions(db: Iterable[Iterable[int]], path: str | Path) -> None:
    with open(path, "w") as fh:
        for t in db:
            fh.write(" ".join(str(i) for i in sorted(t)) + "\n")


def read_transactions(path: str | Path) -> list[frozenset[int]]:
    with open(path) as fh:
        return [frozenset(int(tok) for tok in line.split()) for line in fh]
