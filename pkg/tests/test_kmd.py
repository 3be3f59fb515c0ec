import random

import pytest

from gridmine import km
from gridmine.kmd import KMSystem, NotRunning, decode, encode
from gridmine.km import KMError

from test_km import cluster_entry, rules_entry


def test_codec_round_trip():
    body = {"concept": 3, "task": None, "nested": {"a": [1, 2.5]}}
    kind, out, rest = decode(encode("FIND", body) + encode("STOP", {}))
    assert (kind, out) == ("FIND", body)
    assert decode(rest)[:2] == ("STOP", {})
    assert decode(rest)[2] == b""


@pytest.mark.parametrize("cut", [0, 3, 10])
def test_codec_truncation(cut):
    frame = encode("FIND", {"concept": 1})
    with pytest.raises(KMError):
        decode(frame[:cut])


def test_codec_unknown_kind():
    with pytest.raises(KMError):
        encode("EXPLODE", {})


def running(sites=("site0", "site1", "site2")):
    s = KMSystem(list(sites))
    s.init()
    root = s.add_concept("site0", None, "meteorology")
    return s, root


def test_retrieve_four_step_flow():
    s, root = running()
    kid = s.register("site2", rules_entry(root))
    start = len(s.transport.trace.records)
    entry = s.retrieve("site1", "site2", kid)
    steps = [(r.src, r.dst, r.kind) for r in s.transport.trace.records[start:]]
    assert steps == [("site1", "site2", "RETRIEVE"), ("site2", "site2", "RETRIEVE:fetch"),
                     ("site2", "site1", "RETRIEVE_REPLY"), ("site1", "site1", "RETRIEVE:materialize")]
    assert entry.representative == s.locals["site2"].entries[kid].representative


def test_register_mirrors_to_host():
    s, root = running()
    kid = s.register("site1", cluster_entry(root))
    assert ("site1", kid) in s.core.meta
    mirrors = [r for r in s.transport.trace.records if r.kind == "REGISTER" and r.dst == "site0"]
    assert len(mirrors) == 1 and mirrors[0].src == "site1"
    hits = s.find("site2", root)
    assert [m.key for m in hits] == [("site1", kid)]


def test_not_running():
    s = KMSystem(["a", "b"])
    with pytest.raises(NotRunning):
        s.find("a", 0)
    s.init()
    s.stop()
    with pytest.raises(NotRunning):
        s.add_concept("a", None, "x")


def test_unknown_site_and_id():
    s, root = running()
    with pytest.raises(KMError):
        s.find("nowhere", root)
    with pytest.raises(KMError):
        s.retrieve("site0", "site1", 99)


def test_bad_system():
    for sites, host in (([], None), (["a", "a"], None), (["a"], "b")):
        with pytest.raises(KMError):
            KMSystem(sites, host)


def test_save_load(tmp_path):
    s, root = running()
    kid = s.register("site1", rules_entry(root))
    s.save(tmp_path)
    t = KMSystem.load(tmp_path)
    assert t.running and t.coherent()
    assert t.retrieve("site0", "site1", kid).representative == s.locals["site1"].entries[kid].representative
    with pytest.raises(NotRunning):
        KMSystem.load(tmp_path / "empty")


def test_random_operations_stay_coherent():
    rng = random.Random(7)
    s, root = running(("site0", "site1", "site2", "site3"))
    concepts = [root] + [s.add_concept("site0", root, f"c{i}") for i in range(4)]
    live = []
    for _ in range(500):
        if live and rng.random() < 0.35:
            site, kid = live.pop(rng.randrange(len(live)))
            s.delete(site, kid)
        else:
            site = rng.choice(s.sites)
            entry = rules_entry(rng.choice(concepts)) if rng.random() < 0.5 else cluster_entry(rng.choice(concepts))
            live.append((site, s.register(site, entry)))
        assert s.coherent()
    hits = s.find("site3", root)
    assert sorted(m.key for m in hits) == sorted(live)
    for m in hits:
        assert s.retrieve("site1", m.site, m.knowledge_id).meta.to_json() == m.to_json()
