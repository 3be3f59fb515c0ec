"""KM daemons: the knowledge map served over the simulated transport.

Requests and replies are length-prefixed JSON frames (4-byte big-endian
length, then UTF-8 JSON). Every frame is sent through a :class:`Transport`,
so find/retrieve traffic shows up in the message trace.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

from . import km
from .sim import Transport, count_elements

KINDS = ("INIT", "STOP", "FIND", "RETRIEVE", "REGISTER", "ADD_CONCEPT", "DELETE")

_HEADER = struct.Struct(">I")


def encode(kind: str, body: dict) -> bytes:
    if kind not in KINDS and not kind.endswith("_REPLY"):
        raise km.KMError(f"unknown request kind {kind!r}")
    data = json.dumps({"kind": kind, "body": body}, sort_keys=True, separators=(",", ":")).encode()
    return _HEADER.pack(len(data)) + data


def decode(frame: bytes) -> tuple[str, dict, bytes]:
    """Split one frame off ``frame``; returns ``(kind, body, rest)``."""
    if len(frame) < _HEADER.size:
        raise km.KMError("truncated frame header")
    (n,) = _HEADER.unpack_from(frame)
    end = _HEADER.size + n
    if len(frame) < end:
        raise km.KMError("truncated frame body")
    msg = json.loads(frame[_HEADER.size:end])
    return msg["kind"], msg["body"], frame[end:]


class NotRunning(km.KMError):
    pass


class KMSystem:
    """One CoreKM on the host site plus one LocalKM daemon per site.

    Clients address daemons by site name; each call is a request frame to the
    target and a reply frame back, both through the transport. Local work at
    the target (fetch) and at the client (materialize) is noted in the trace
    as zero-byte steps so the four-step retrieve flow is visible.
    """

    def __init__(self, sites: list[str], host: str | None = None, transport: Transport | None = None):
        if not sites:
            raise km.KMError("a KM system needs at least one site")
        if len(set(sites)) != len(sites):
            raise km.KMError("site names must be unique")
        self.host = host or sites[0]
        if self.host not in sites:
            raise km.KMError(f"host {self.host!r} is not a site")
        self.core = km.CoreKM(self.host)
        self.locals = {s: km.LocalKM(s) for s in sites}
        self.transport = transport or Transport()
        self.running = False
        self.round = 0

    @property
    def sites(self) -> list[str]:
        return list(self.locals)

    def _check(self, *sites: str) -> None:
        if not self.running:
            raise NotRunning("KM daemons are not running")
        for s in sites:
            if s not in self.locals:
                raise km.KMError(f"unknown site {s!r}")

    def _tick(self) -> int:
        # KM work is sequential, so each step gets its own round and the trace keeps causal order
        self.round += 1
        return self.round

    def _call(self, src: str, dst: str, kind: str, body: dict, handler) -> dict:
        frame = encode(kind, body)
        self.transport.send(src, dst, kind, frame, round=self._tick(), elements=count_elements(body))
        k, req, _ = decode(frame)
        reply = handler(req)
        out = encode(k + "_REPLY", reply)
        self.transport.send(dst, src, k + "_REPLY", out, round=self._tick(), elements=count_elements(reply))
        return decode(out)[1]

    # lifecycle

    def init(self) -> dict:
        self.running = True
        self.round += 1
        for s in self.locals:
            self.transport.send(self.host, s, "INIT", encode("INIT", {}), round=self.round, elements=0)
        return {"running": True, "host": self.host, "sites": self.sites}

    def stop(self) -> dict:
        self._check()
        self.round += 1
        for s in self.locals:
            self.transport.send(self.host, s, "STOP", encode("STOP", {}), round=self.round, elements=0)
        self.running = False
        return {"running": False}

    # operations

    def add_concept(self, client: str, parent: int | None, name: str) -> int:
        self._check(client)
        reply = self._call(client, self.host, "ADD_CONCEPT", {"parent": parent, "name": name},
                           lambda b: {"concept_id": km.add_concept(self.core, b["parent"], b["name"])})
        return reply["concept_id"]

    def register(self, site: str, entry: km.KnowledgeEntry) -> int:
        """Store at ``site`` and mirror the meta-knowledge to the host synchronously."""
        self._check(site)
        self.core.concepts.get(entry.meta.concept_id)
        entry.representative.validate()

        def store(body: dict) -> dict:
            e = km.KnowledgeEntry.from_json(body["entry"])
            local = self.locals[site]
            kid = local._next
            e.meta.knowledge_id = kid
            e.meta.site = site
            mirror = encode("REGISTER", {"meta": e.meta.to_json()})
            self.transport.send(site, self.host, "REGISTER", mirror, round=self._tick(),
                                elements=count_elements(e.meta.to_json()))
            self.core.add_meta(km.MetaKnowledge(**decode(mirror)[1]["meta"]))
            local.entries[kid] = e
            local._next += 1
            return {"knowledge_id": kid}

        return self._call(site, site, "REGISTER", {"entry": entry.to_json()}, store)["knowledge_id"]

    def delete(self, site: str, knowledge_id: int) -> None:
        self._check(site)

        def drop(body: dict) -> dict:
            km.delete_knowledge(self.locals[site], body["knowledge_id"], self.core)
            return {"deleted": body["knowledge_id"]}

        self._call(site, site, "DELETE", {"knowledge_id": knowledge_id}, drop)

    def find(self, client: str, concept: int, task: str | None = None,
             data_type: str | None = None) -> list[km.MetaKnowledge]:
        self._check(client)
        reply = self._call(client, self.host, "FIND",
                           {"concept": concept, "task": task, "data_type": data_type},
                           lambda b: {"hits": [m.to_json() for m in
                                               km.find(self.core, b["concept"], b["task"], b["data_type"])]})
        return [km.MetaKnowledge(**m) for m in reply["hits"]]

    def retrieve(self, client: str, site: str, knowledge_id: int) -> km.KnowledgeEntry:
        """Request, fetch at the owning site, reply, materialize at the client."""
        self._check(client, site)

        def fetch(body: dict) -> dict:
            self.transport.note(site, "RETRIEVE:fetch", round=self._tick())
            return {"entry": km.retrieve(self.locals[site], body["knowledge_id"]).to_json()}

        reply = self._call(client, site, "RETRIEVE", {"knowledge_id": knowledge_id}, fetch)
        entry = km.KnowledgeEntry.from_json(reply["entry"])
        self.transport.note(client, "RETRIEVE:materialize", round=self._tick())
        return entry

    def coherent(self) -> bool:
        mirrored = {k: m.to_json() for k, m in self.core.meta.items()}
        held = {(s, kid): e.meta.to_json() for s, l in self.locals.items() for kid, e in l.entries.items()}
        return mirrored == held

    # persistence: one file per site, one for the core, one for runtime flags

    def save(self, state_dir: str | Path) -> None:
        d = Path(state_dir)
        d.mkdir(parents=True, exist_ok=True)
        for s, local in self.locals.items():
            km.save_json(local.to_json(), d / f"local_{s}.json")
        km.save_json(self.core.to_json(), d / "core.json")
        km.save_json({"sites": self.sites, "host": self.host, "running": self.running,
                      "round": self.round}, d / "runtime.json")

    @classmethod
    def load(cls, state_dir: str | Path) -> "KMSystem":
        d = Path(state_dir)
        if not (d / "runtime.json").exists():
            raise NotRunning(f"no KM state in {d}; run init first")
        rt = km.load_json(d / "runtime.json")
        sys = cls(rt["sites"], rt["host"])
        sys.core = km.CoreKM.from_json(km.load_json(d / "core.json"))
        sys.locals = {s: km.LocalKM.from_json(km.load_json(d / f"local_{s}.json")) for s in rt["sites"]}
        sys.running = rt["running"]
        sys.round = rt["round"]
        return sys

