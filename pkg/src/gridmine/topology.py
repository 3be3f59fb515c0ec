"""Aggregation topologies over m sites: star (1-n), binary tree and Tree-P groups."""

from __future__ import annotations

from dataclasses import dataclass, field

KINDS = ("star_1n", "binary_tree", "tree_p")


class TopologyError(ValueError):
    pass


@dataclass
class Node:
    id: int
    name: str
    level: int
    children: list[int] = field(default_factory=list)
    parent: int | None = None
    site: int | None = None  # leaf only

    @property
    def is_leaf(self) -> bool:
        return self.site is not None


@dataclass
class Topology:
    """Tree over ``m`` leaves built bottom-up in rounds.

    Round ``r`` groups the current frontier left to right into nodes of at most
    ``fan_in`` children. A lone leftover is promoted unchanged, so the frontier
    at each level is exactly what an early stop at that level returns.
    """

    kind: str
    m: int
    p: int | None
    nodes: list[Node]
    root: int
    frontiers: list[list[int]]

    @property
    def fan_in(self) -> int:
        if self.kind == "binary_tree":
            return 2
        if self.kind == "tree_p":
            return int(self.p)
        return max(self.m, 2)

    @property
    def height(self) -> int:
        return len(self.frontiers) - 1

    def leaves(self) -> list[int]:
        return [n.id for n in self.nodes if n.is_leaf]

    def internal(self) -> list[int]:
        return [n.id for n in self.nodes if not n.is_leaf]

    def postorder(self) -> list[int]:
        """Internal nodes in an order where children come before parents."""
        return sorted(self.internal(), key=lambda i: (self.nodes[i].level, i))

    def to_json(self) -> dict:
        return {"kind": self.kind, "m": self.m, "p": self.p, "root": self.root,
                "nodes": [{"id": n.id, "name": n.name, "level": n.level, "site": n.site,
                           "parent": n.parent, "children": n.children} for n in self.nodes]}

    def validate(self) -> None:
        leaves = self.leaves()
        if len(leaves) != self.m:
            raise TopologyError("leaf count mismatch")
        seen = set()
        stack = [self.root]
        while stack:
            i = stack.pop()
            if i in seen:
                raise TopologyError("cycle in topology")
            seen.add(i)
            kids = self.nodes[i].children
            if len(kids) > self.fan_in:
                raise TopologyError(f"node {i} has {len(kids)} children")
            for k in kids:
                if self.nodes[k].parent != i:
                    raise TopologyError("parent/child tables disagree")
            stack.extend(kids)
        if len(seen) != len(self.nodes):
            raise TopologyError("topology is not connected")


def build_topology(m: int, kind: str = "binary_tree", p: int | None = None) -> Topology:
    if m < 1:
        raise TopologyError("need at least one site")
    if kind not in KINDS:
        raise TopologyError(f"unknown topology kind {kind!r}")
    if kind == "tree_p":
        if p is None:
            raise TopologyError("tree_p needs group size p")
        if p < 2:
            raise TopologyError("tree_p group size must be >= 2")
    fan_in = {"binary_tree": 2, "tree_p": p, "star_1n": max(m, 2)}[kind]
    nodes = [Node(i, f"site{i}", 0, site=i) for i in range(m)]
    frontier = list(range(m))
    frontiers = [list(frontier)]
    level = 0
    while len(frontier) > 1:
        level += 1
        nxt = []
        for g in range(0, len(frontier), fan_in):
            group = frontier[g:g + fan_in]
            if len(group) == 1:
                nxt.append(group[0])
                continue
            node = Node(len(nodes), f"agg{level}.{len(nxt)}", level, children=list(group))
            for c in group:
                nodes[c].parent = node.id
            nodes.append(node)
            nxt.append(node.id)
        frontier = nxt
        frontiers.append(list(frontier))
    topo = Topology(kind, m, p if kind == "tree_p" else None, nodes, frontier[0], frontiers)
    topo.validate()
    return topo
