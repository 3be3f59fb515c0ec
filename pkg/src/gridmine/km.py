"""Knowledge map: concept trees, meta-knowledge repository and per-site knowledge entries."""

from __future__ import annotations

import bisect
import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

ROOT = None
TASKS = ("clustering", "rules")


class KMError(LookupError):
    """Unknown ids, dangling links and integrity violations."""


# ------------------------------------------------------------------ concepts

@dataclass
class Concept:
    id: int
    name: str
    parent: int | None
    domain: str
    children: list[int] = field(default_factory=list)


class ConceptRepository:
    """All concept trees, with ids unique across every tree."""

    def __init__(self):
        self.nodes: dict[int, Concept] = {}
        self.roots: dict[str, int] = {}
        self._next = 0

    def add(self, parent: int | None, name: str) -> int:
        if parent is None:
            if name in self.roots:
                raise KMError(f"domain {name!r} already exists")
            domain = name
        else:
            if parent not in self.nodes:
                raise KMError(f"unknown parent concept {parent}")
            domain = self.nodes[parent].domain
        cid = self._next
        self._next += 1
        self.nodes[cid] = Concept(cid, name, parent, domain)
        if parent is None:
            self.roots[name] = cid
        else:
            self.nodes[parent].children.append(cid)
        return cid

    def delete(self, cid: int) -> None:
        """Remove a leaf concept."""
        node = self.get(cid)
        if node.children:
            raise KMError(f"concept {cid} still has children")
        if node.parent is None:
            del self.roots[node.domain]
        else:
            self.nodes[node.parent].children.remove(cid)
        del self.nodes[cid]

    def get(self, cid: int) -> Concept:
        try:
            return self.nodes[cid]
        except KeyError:
            raise KMError(f"unknown concept {cid}") from None

    def subtree(self, cid: int) -> set[int]:
        self.get(cid)
        out, stack = set(), [cid]
        while stack:
            c = stack.pop()
            out.add(c)
            stack.extend(self.nodes[c].children)
        return out

    def path(self, cid: int) -> list[str]:
        names = []
        node: Concept | None = self.get(cid)
        while node is not None:
            names.append(node.name)
            node = self.nodes[node.parent] if node.parent is not None else None
        return names[::-1]

    def find_by_name(self, name: str) -> list[int]:
        return sorted(c.id for c in self.nodes.values() if c.name == name)

    def to_json(self) -> dict:
        return {"next": self._next,
                "nodes": [{"id": c.id, "name": c.name, "parent": c.parent, "domain": c.domain}
                          for c in sorted(self.nodes.values(), key=lambda c: c.id)]}

    @classmethod
    def from_json(cls, doc: dict) -> "ConceptRepository":
        repo = cls()
        for rec in doc["nodes"]:
            repo.nodes[rec["id"]] = Concept(rec["id"], rec["name"], rec["parent"], rec["domain"])
        for c in repo.nodes.values():
            if c.parent is None:
                repo.roots[c.domain] = c.id
            else:
                repo.nodes[c.parent].children.append(c.id)
        repo._next = doc["next"]
        return repo


# ---------------------------------------------------------- meta-knowledge

@dataclass
class MetaKnowledge:
    knowledge_id: int
    site: str
    concept_id: int
    task: str
    algorithm: str = ""
    data_type: str = "Numerical"
    instances: int = 0
    dimensions: int = 0
    description: str = ""

    @property
    def key(self) -> tuple[str, int]:
        return (self.site, self.knowledge_id)

    def to_json(self) -> dict:
        return asdict(self)


# ----------------------------------------------------------- representatives

@dataclass
class Rule:
    id: int
    if_items: list[str]
    then_items: list[str]
    attributes: dict = field(default_factory=dict)
    created_from: list[int] = field(default_factory=list)

    @property
    def items(self) -> set[str]:
        return set(self.if_items) | set(self.then_items)


def intersect_sorted(a: list[int], b: list[int], probes: list[int] | None = None) -> list[int]:
    """Intersect two ascending lists by galloping through the longer one.

    ``probes[0]`` is incremented once per element of the shorter list searched for.
    """
    if len(a) > len(b):
        a, b = b, a
    out, lo, n = [], 0, len(b)
    for x in a:
        if lo >= n:
            break
        if probes is not None:
            probes[0] += 1
        step, hi = 1, lo
        while hi < n and b[hi] < x:
            lo = hi + 1
            hi += step
            step *= 2
        pos = bisect.bisect_left(b, x, lo, min(hi + 1, n))
        if pos < n and b[pos] == x:
            out.append(x)
            pos += 1
        lo = pos
    return out


class RuleRepresentative:
    """Rule table plus an inverted item index (item -> ascending rule ids)."""

    kind = "rules"

    def __init__(self, rules: Iterable[Rule] = ()):
        self.rules: dict[int, Rule] = {}
        self.item_index: dict[str, list[int]] = {}
        for r in rules:
            self.add_rule(r)

    def add_rule(self, rule: Rule) -> None:
        if rule.id in self.rules:
            raise KMError(f"duplicate rule id {rule.id}")
        self.rules[rule.id] = rule
        for item in rule.items:
            bisect.insort(self.item_index.setdefault(item, []), rule.id)

    def delete_rule(self, rule_id: int) -> None:
        rule = self.rules.pop(rule_id, None)
        if rule is None:
            raise KMError(f"unknown rule {rule_id}")
        for item in rule.items:
            lst = self.item_index[item]
            del lst[bisect.bisect_left(lst, rule_id)]
            if not lst:
                del self.item_index[item]

    def rebuild_index(self) -> dict[str, list[int]]:
        idx: dict[str, list[int]] = {}
        for rid in sorted(self.rules):
            for item in self.rules[rid].items:
                idx.setdefault(item, []).append(rid)
        return idx

    def validate(self) -> None:
        for item, lst in self.item_index.items():
            if lst != sorted(set(lst)):
                raise KMError(f"index list for {item!r} is not strictly ascending")
        if self.item_index != self.rebuild_index():
            raise KMError("item index disagrees with the rule table")

    def to_json(self) -> dict:
        return {"kind": self.kind,
                "rules": [asdict(self.rules[r]) for r in sorted(self.rules)],
                "item_index": {k: self.item_index[k] for k in sorted(self.item_index)}}

    @classmethod
    def from_json(cls, doc: dict) -> "RuleRepresentative":
        rep = cls()
        for r in doc["rules"]:
            rep.rules[r["id"]] = Rule(**r)
        rep.item_index = {k: list(v) for k, v in doc["item_index"].items()}
        rep.validate()
        return rep

    def __eq__(self, other) -> bool:
        return isinstance(other, RuleRepresentative) and self.to_json() == other.to_json()


def rule_lookup(rep: RuleRepresentative, items: Iterable[str], probes: list[int] | None = None) -> list[int]:
    """Rule ids containing every one of ``items``: intersection of their lists, shortest first."""
    items = list(dict.fromkeys(items))
    if not items:
        raise KMError("rule lookup needs at least one item")
    lists = []
    for it in items:
        lst = rep.item_index.get(it)
        if not lst:
            return []
        lists.append(lst)
    lists.sort(key=len)
    acc = list(lists[0])
    for lst in lists[1:]:
        acc = intersect_sorted(acc, lst, probes)
        if not acc:
            break
    return acc


@dataclass
class ClusterLink:
    """Where a cluster came from.

    A clustering link names ``(host, filename, cluster_id)``; an integrating one
    names ``(host, knowledge_id, cluster_id)`` and lists its sub-elements, each
    itself a reference ``(host, knowledge_id, cluster_id)`` to resolve.
    """

    host: str
    cluster_id: int
    filename: str | None = None
    knowledge_id: int | None = None
    sub_elements: list[tuple[str, int, int]] = field(default_factory=list)


@dataclass
class ClusterRecord:
    id: int
    values: dict
    creation: str  # "clustering" | "integrating"
    link: ClusterLink

    def __post_init__(self):
        if self.creation not in ("clustering", "integrating"):
            raise KMError(f"bad creation type {self.creation!r}")


class ClusterRepresentative:
    kind = "clustering"

    def __init__(self, fields: list[tuple[str, str]], clusters: Iterable[ClusterRecord] = ()):
        self.fields = list(fields)
        self.clusters: dict[int, ClusterRecord] = {}
        for c in clusters:
            self.add_cluster(c)

    def add_cluster(self, rec: ClusterRecord) -> None:
        if rec.id in self.clusters:
            raise KMError(f"cluster id {rec.id} is not unique in this entry")
        names = {f for f, _ in self.fields}
        extra = set(rec.values) - names
        if extra:
            raise KMError(f"cluster {rec.id} has undeclared fields {sorted(extra)}")
        self.clusters[rec.id] = rec

    def validate(self) -> None:
        for rec in self.clusters.values():
            if rec.creation == "clustering" and rec.link.sub_elements:
                raise KMError(f"clustering-type cluster {rec.id} cannot have sub-elements")

    def to_json(self) -> dict:
        return {"kind": self.kind,
                "fields": [list(f) for f in self.fields],
                "clusters": [{"id": c.id, "values": c.values, "creation": c.creation,
                              "link": {**asdict(c.link),
                                       "sub_elements": [list(s) for s in c.link.sub_elements]}}
                             for c in sorted(self.clusters.values(), key=lambda c: c.id)]}

    @classmethod
    def from_json(cls, doc: dict) -> "ClusterRepresentative":
        recs = []
        for c in doc["clusters"]:
            link = dict(c["link"])
            link["sub_elements"] = [tuple(s) for s in link.get("sub_elements", [])]
            recs.append(ClusterRecord(c["id"], c["values"], c["creation"], ClusterLink(**link)))
        return cls([tuple(f) for f in doc["fields"]], recs)

    def __eq__(self, other) -> bool:
        return isinstance(other, ClusterRepresentative) and self.to_json() == other.to_json()


def representative_from_json(doc: dict):
    if doc["kind"] == "rules":
        return RuleRepresentative.from_json(doc)
    if doc["kind"] == "clustering":
        return ClusterRepresentative.from_json(doc)
    raise KMError(f"unknown representative kind {doc['kind']!r}")


@dataclass
class KnowledgeEntry:
    meta: MetaKnowledge
    representative: RuleRepresentative | ClusterRepresentative

    def to_json(self) -> dict:
        return {"meta": self.meta.to_json(), "representative": self.representative.to_json()}

    @classmethod
    def from_json(cls, doc: dict) -> "KnowledgeEntry":
        return cls(MetaKnowledge(**doc["meta"]), representative_from_json(doc["representative"]))


# --------------------------------------------------------------- repositories

class CoreKM:
    """Concept trees and the meta-knowledge repository held by the host site.

    Meta entries are also indexed by concept id so a subtree query touches only
    the matching concepts.
    """

    def __init__(self, host: str = "site0"):
        self.host = host
        self.concepts = ConceptRepository()
        self.meta: dict[tuple[str, int], MetaKnowledge] = {}
        self.by_concept: dict[int, list[tuple[str, int]]] = {}

    def add_meta(self, meta: MetaKnowledge) -> None:
        self.concepts.get(meta.concept_id)
        if meta.key in self.meta:
            raise KMError(f"meta-knowledge {meta.key} already registered")
        self.meta[meta.key] = meta
        bisect.insort(self.by_concept.setdefault(meta.concept_id, []), meta.key)

    def remove_meta(self, key: tuple[str, int]) -> None:
        meta = self.meta.pop(key, None)
        if meta is None:
            raise KMError(f"unknown meta-knowledge {key}")
        lst = self.by_concept[meta.concept_id]
        lst.remove(key)
        if not lst:
            del self.by_concept[meta.concept_id]

    def to_json(self) -> dict:
        return {"host": self.host, "concepts": self.concepts.to_json(),
                "meta": [self.meta[k].to_json() for k in sorted(self.meta)]}

    @classmethod
    def from_json(cls, doc: dict) -> "CoreKM":
        core = cls(doc["host"])
        core.concepts = ConceptRepository.from_json(doc["concepts"])
        for m in doc["meta"]:
            core.add_meta(MetaKnowledge(**m))
        return core


class LocalKM:
    def __init__(self, site: str):
        self.site = site
        self.entries: dict[int, KnowledgeEntry] = {}
        self._next = 0

    def to_json(self) -> dict:
        return {"site": self.site, "next": self._next,
                "entries": [self.entries[k].to_json() for k in sorted(self.entries)]}

    @classmethod
    def from_json(cls, doc: dict) -> "LocalKM":
        local = cls(doc["site"])
        for e in doc["entries"]:
            entry = KnowledgeEntry.from_json(e)
            local.entries[entry.meta.knowledge_id] = entry
        local._next = doc["next"]
        return local


def add_concept(core: CoreKM, parent: int | None, name: str) -> int:
    return core.concepts.add(parent, name)


def register_knowledge(local: LocalKM, entry: KnowledgeEntry, core: CoreKM) -> int:
    """Store ``entry`` at its site and mirror its meta-knowledge into the core.

    The knowledge id is allocated by the site; the entry's own id and site are
    overwritten.
    """
    core.concepts.get(entry.meta.concept_id)
    entry.representative.validate()
    kid = local._next
    entry = copy.deepcopy(entry)
    entry.meta.knowledge_id = kid
    entry.meta.site = local.site
    core.add_meta(copy.deepcopy(entry.meta))
    local.entries[kid] = entry
    local._next += 1
    return kid


def delete_knowledge(local: LocalKM, knowledge_id: int, core: CoreKM) -> None:
    if knowledge_id not in local.entries:
        raise KMError(f"unknown knowledge {knowledge_id} at {local.site}")
    core.remove_meta((local.site, knowledge_id))
    del local.entries[knowledge_id]


def find(core: CoreKM, concept: int, task: str | None = None,
         data_type: str | None = None) -> list[MetaKnowledge]:
    """Meta-knowledge under ``concept``'s subtree, optionally filtered; never bodies."""
    hits = []
    for cid in sorted(core.concepts.subtree(concept)):
        for key in core.by_concept.get(cid, ()):
            m = core.meta[key]
            if task is not None and m.task != task:
                continue
            if data_type is not None and m.data_type != data_type:
                continue
            hits.append(copy.deepcopy(m))
    return sorted(hits, key=lambda m: m.key)


def retrieve(local: LocalKM, knowledge_id: int) -> KnowledgeEntry:
    try:
        return copy.deepcopy(local.entries[knowledge_id])
    except KeyError:
        raise KMError(f"unknown knowledge {knowledge_id} at {local.site}") from None


@dataclass
class ProvenanceNode:
    site: str
    knowledge_id: int
    cluster_id: int
    sub_elements: list["ProvenanceNode"] = field(default_factory=list)

    def size(self) -> int:
        return 1 + sum(s.size() for s in self.sub_elements)

    def depth(self) -> int:
        return 1 + max((s.depth() for s in self.sub_elements), default=0)

    def to_json(self) -> dict:
        return {"site": self.site, "knowledge_id": self.knowledge_id, "cluster_id": self.cluster_id,
                "sub_elements": [s.to_json() for s in self.sub_elements]}


Resolver = Callable[[str, int], KnowledgeEntry]


def resolve_integration_link(entry: KnowledgeEntry, cluster_id: int, resolver: Resolver) -> ProvenanceNode:
    """Expand a cluster's integration link into its full provenance tree.

    ``resolver(site, knowledge_id)`` fetches the referenced entries. Leaves are
    clustering-type clusters with no sub-elements.
    """

    def expand(e: KnowledgeEntry, cid: int, stack: tuple) -> ProvenanceNode:
        key = (e.meta.site, e.meta.knowledge_id, cid)
        if key in stack:
            raise KMError(f"integration link cycle through {key}")
        rep = e.representative
        if not isinstance(rep, ClusterRepresentative):
            raise KMError(f"{key[:2]} is not a clustering entry")
        rec = rep.clusters.get(cid)
        if rec is None:
            raise KMError(f"dangling link: no cluster {cid} in {key[:2]}")
        node = ProvenanceNode(*key)
        if rec.creation == "integrating":
            for site, kid, sub in rec.link.sub_elements:
                try:
                    target = resolver(site, kid)
                except KMError:
                    raise KMError(f"dangling link: ({site}, {kid}) not found") from None
                node.sub_elements.append(expand(target, sub, stack + (key,)))
        return node

    return expand(entry, cluster_id, ())


# ---------------------------------------------------------------- persistence

def save_json(doc: dict, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1, sort_keys=True))
    tmp.replace(path)


def load_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
