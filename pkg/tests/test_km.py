import copy
import json
import random

import pytest

from gridmine import km
from gridmine.km import (ClusterLink, ClusterRecord, ClusterRepresentative, CoreKM, KMError, KnowledgeEntry,
                         LocalKM, MetaKnowledge, Rule, RuleRepresentative, add_concept, delete_knowledge,
                         find, intersect_sorted, register_knowledge, resolve_integration_link, retrieve,
                         rule_lookup)


def meteorology(core):
    root = add_concept(core, None, "meteorology")
    storm = add_concept(core, root, "storm")
    kids = {n: add_concept(core, storm, n) for n in ("thunder storm", "tropical cyclone", "tornado")}
    rain = add_concept(core, root, "rainfall")
    return root, storm, kids, rain


def rules_entry(concept, task="association", data_type="Categorical"):
    rep = RuleRepresentative([
        Rule(25, ["cloud"], ["rain"], {"support": 0.3, "confidence": 0.8}),
        Rule(171, ["cloud", "pressure"], ["storm"], {"support": 0.1, "confidence": 0.7}),
        Rule(360, ["cloud", "wind"], ["storm"], {"support": 0.2, "confidence": 0.6}),
        Rule(20, ["pressure"], ["fog"], {"support": 0.2, "confidence": 0.5}),
    ])
    return KnowledgeEntry(MetaKnowledge(-1, "", concept, task, "apriori", data_type, 1000, 6), rep)


def cluster_entry(concept, instances=161, dims=2, clusters=None):
    fields = [("Id", "int"), ("Counts", "int"), ("Centres", "float[3]"), ("Variances", "float[3][3]")]
    clusters = clusters or [ClusterRecord(0, {"Id": 0, "Counts": 80, "Centres": [0.1, 0.2, 0.3],
                                              "Variances": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]},
                                          "clustering", ClusterLink("site1", 0, filename="c0.csv"))]
    return KnowledgeEntry(MetaKnowledge(-1, "", concept, "clustering", "DBDC-local", "Numerical", instances, dims),
                          ClusterRepresentative(fields, clusters))


def test_concept_paths():
    core = CoreKM()
    root, storm, kids, _ = meteorology(core)
    assert core.concepts.path(kids["tropical cyclone"]) == ["meteorology", "storm", "tropical cyclone"]
    a = add_concept(core, storm, "hail")
    b = add_concept(core, storm, "hail")
    assert a != b
    with pytest.raises(KMError):
        add_concept(core, 999, "x")
    ids = list(core.concepts.nodes)
    assert len(ids) == len(set(ids))


def test_concepts_unique_across_trees():
    core = CoreKM()
    a = add_concept(core, None, "meteorology")
    b = add_concept(core, None, "medicine")
    c = add_concept(core, b, "cardiology")
    assert len({a, b, c}) == 3
    assert core.concepts.get(c).domain == "medicine"


def test_register_rules_index():
    core, local = CoreKM(), LocalKM("site0")
    _, storm, _, _ = meteorology(core)
    kid = register_knowledge(local, rules_entry(storm), core)
    rep = local.entries[kid].representative
    assert rep.item_index == rep.rebuild_index()
    assert rep.item_index["cloud"] == [25, 171, 360]
    assert rep.item_index["pressure"] == [20, 171]
    assert core.meta[("site0", kid)].concept_id == storm


def test_register_cluster_entry_fig12_schema():
    core, local = CoreKM(), LocalKM("site1")
    _, _, kids, _ = meteorology(core)
    kid = register_knowledge(local, cluster_entry(kids["tornado"]), core)
    got = retrieve(local, kid)
    assert [f for f, _ in got.representative.fields] == ["Id", "Counts", "Centres", "Variances"]
    assert got.representative.clusters[0].values["Variances"][2] == [0, 0, 1]


def test_register_errors():
    core, local = CoreKM(), LocalKM("site0")
    meteorology(core)
    with pytest.raises(KMError):
        register_knowledge(local, rules_entry(999), core)
    bad = rules_entry(0)
    bad.representative.item_index["cloud"] = [360, 25]
    with pytest.raises(KMError):
        register_knowledge(local, bad, core)
    assert local.entries == {} and core.meta == {}


def test_cluster_representative_rules():
    with pytest.raises(KMError):
        ClusterRecord(0, {}, "guessing", ClusterLink("h", 0))
    rep = ClusterRepresentative([("Id", "int")])
    rep.add_cluster(ClusterRecord(1, {"Id": 1}, "clustering", ClusterLink("h", 1)))
    with pytest.raises(KMError):
        rep.add_cluster(ClusterRecord(1, {"Id": 1}, "clustering", ClusterLink("h", 1)))
    with pytest.raises(KMError):
        rep.add_cluster(ClusterRecord(2, {"Size": 1}, "clustering", ClusterLink("h", 2)))


def populated():
    core = CoreKM()
    root, storm, kids, rain = meteorology(core)
    locals_ = {s: LocalKM(s) for s in ("site0", "site1", "site2")}
    register_knowledge(locals_["site0"], rules_entry(storm), core)
    register_knowledge(locals_["site1"], cluster_entry(kids["tropical cyclone"]), core)
    register_knowledge(locals_["site1"], rules_entry(kids["tropical cyclone"]), core)
    register_knowledge(locals_["site2"], cluster_entry(kids["tornado"]), core)
    register_knowledge(locals_["site2"], cluster_entry(rain), core)
    return core, locals_, root, storm, kids, rain


def test_find_examples():
    core, locals_, root, storm, kids, rain = populated()
    assert len(find(core, root)) == 5
    hits = find(core, kids["tropical cyclone"])
    assert {m.key for m in hits} == {("site1", 0), ("site1", 1)}
    want = sorted((m for m in core.meta.values()
                   if m.concept_id in core.concepts.subtree(storm) and m.task == "clustering"),
                  key=lambda m: m.key)
    assert find(core, storm, task="clustering") == want
    assert [m.key for m in find(core, root, data_type="Categorical")] == [("site0", 0), ("site1", 1)]
    with pytest.raises(KMError):
        find(core, 999)


def test_find_returns_metadata_only():
    core, *_ = populated()
    for m in find(core, 0):
        assert isinstance(m, MetaKnowledge)


def test_retrieve_round_trip_and_errors():
    core, local = CoreKM(), LocalKM("site3")
    _, storm, _, _ = meteorology(core)
    entry = rules_entry(storm)
    kid = register_knowledge(local, entry, core)
    got = retrieve(local, kid)
    assert got.representative == entry.representative
    assert got.meta.key == ("site3", kid)
    with pytest.raises(KMError):
        retrieve(local, 42)


def test_dbdc_meta_row_shape():
    core, local = CoreKM(), LocalKM("site1")
    _, storm, _, _ = meteorology(core)
    kid = register_knowledge(local, cluster_entry(storm, 161, 2), core)
    m = retrieve(local, kid).meta
    assert (m.algorithm, m.data_type, m.instances, m.dimensions) == ("DBDC-local", "Numerical", 161, 2)


def test_rule_lookup_examples():
    rep = rules_entry(0).representative
    assert rule_lookup(rep, {"cloud"}) == [25, 171, 360]
    assert rule_lookup(rep, ["cloud", "pressure"]) == [171]
    assert rule_lookup(rep, ["pressure", "cloud"]) == [171]
    assert rule_lookup(rep, ["cloud", "sunshine"]) == []
    with pytest.raises(KMError):
        rule_lookup(rep, [])


def random_rules(rng, n_rules, n_items, skew=False):
    items = [f"i{j}" for j in range(n_items)]
    weights = [1 / (j + 1) ** 1.5 for j in range(n_items)] if skew else None
    ids = rng.sample(range(10 * n_rules), n_rules)
    out = []
    for rid in ids:
        chosen = set(rng.choices(items, weights=weights, k=rng.randint(1, 5)))
        ch = sorted(chosen)
        cut = rng.randint(0, len(ch) - 1) if len(ch) > 1 else 1
        out.append(Rule(rid, ch[:cut] or ch, ch[cut:]))
    return out, items


def test_rule_lookup_random_brute_force():
    rng = random.Random(0)
    for _ in range(200):
        rules, items = random_rules(rng, rng.randint(1, 60), rng.randint(2, 12))
        rep = RuleRepresentative(rules)
        q = rng.sample(items, rng.randint(1, min(3, len(items))))
        want = sorted(r.id for r in rules if set(q) <= r.items)
        assert rule_lookup(rep, q) == want
        assert rule_lookup(rep, list(reversed(q))) == want


def test_index_consistency_after_edits():
    rng = random.Random(1)
    rules, _ = random_rules(rng, 80, 10)
    rep = RuleRepresentative(rules)
    live = [r.id for r in rules]
    for step in range(200):
        if live and rng.random() < 0.5:
            rid = live.pop(rng.randrange(len(live)))
            rep.delete_rule(rid)
        else:
            new, _ = random_rules(rng, 1, 10)
            rid = new[0].id + 1000 + step * 10_000
            rep.add_rule(Rule(rid, new[0].if_items, new[0].then_items))
            live.append(rid)
        assert rep.item_index == rep.rebuild_index()
    rep.validate()
    with pytest.raises(KMError):
        rep.delete_rule(-5)


def test_intersect_sorted():
    assert intersect_sorted([25, 171, 360], [20, 171]) == [171]
    rng = random.Random(2)
    for _ in range(500):
        a = sorted(rng.sample(range(500), rng.randint(0, 60)))
        b = sorted(rng.sample(range(500), rng.randint(0, 200)))
        probes = [0]
        assert intersect_sorted(a, b, probes) == sorted(set(a) & set(b))
        assert probes[0] <= min(len(a), len(b))


def test_lookup_cost_tracks_shortest_list():
    rng = random.Random(3)
    rules, items = random_rules(rng, 2000, 30, skew=True)
    rep = RuleRepresentative(rules)
    for _ in range(100):
        q = rng.sample(items, rng.randint(2, 4))
        lists = [rep.item_index.get(i, []) for i in q]
        probes = [0]
        rule_lookup(rep, q, probes)
        assert probes[0] <= 2 * min(len(x) for x in lists) * len(q)


def test_representative_json_round_trip():
    for entry in (rules_entry(0), cluster_entry(0)):
        doc = json.loads(json.dumps(entry.to_json()))
        assert KnowledgeEntry.from_json(doc).to_json() == entry.to_json()


def fig12_world():
    fields = [("Id", "int"), ("Counts", "int")]

    def leaf(site, kid, cid):
        return KnowledgeEntry(MetaKnowledge(kid, site, 0, "clustering"),
                              ClusterRepresentative(fields, [ClusterRecord(
                                  cid, {"Id": cid}, "clustering", ClusterLink(site, cid, filename=f"{cid}.csv"))]))

    world = {("site1", 0): leaf("site1", 0, 3), ("site2", 0): leaf("site2", 0, 4),
             ("site3", 0): leaf("site3", 0, 5), ("site4", 0): leaf("site4", 0, 6)}
    mid = KnowledgeEntry(MetaKnowledge(1, "site3", 0, "clustering"), ClusterRepresentative(fields, [ClusterRecord(
        2, {"Id": 2}, "integrating",
        ClusterLink("site3", 2, knowledge_id=1, sub_elements=[("site3", 0, 5), ("site4", 0, 6)]))]))
    world[("site3", 1)] = mid
    top = KnowledgeEntry(MetaKnowledge(9, "host", 0, "clustering"), ClusterRepresentative(fields, [ClusterRecord(
        1, {"Id": 1}, "integrating",
        ClusterLink("host", 1, knowledge_id=9,
                    sub_elements=[("site1", 0, 3), ("site2", 0, 4), ("site3", 1, 2)]))]))
    world[("host", 9)] = top

    def resolver(site, kid):
        try:
            return world[(site, kid)]
        except KeyError:
            raise KMError(f"no entry {(site, kid)}") from None

    return world, resolver


def test_resolve_leaf():
    world, resolver = fig12_world()
    tree = resolve_integration_link(world[("site1", 0)], 3, resolver)
    assert tree.size() == 1 and tree.sub_elements == []


def test_resolve_fig12_shape():
    world, resolver = fig12_world()
    tree = resolve_integration_link(world[("host", 9)], 1, resolver)
    assert len(tree.sub_elements) == 3
    assert len(tree.sub_elements[2].sub_elements) == 2
    assert tree.depth() == 3 and tree.size() == 6
    leaves = [n for n in tree.sub_elements[:2] + tree.sub_elements[2].sub_elements]
    assert all(n.sub_elements == [] for n in leaves)


def test_resolve_cycle_and_dangling():
    world, resolver = fig12_world()
    mid = world[("site3", 1)].representative.clusters[2]
    mid.link.sub_elements.append(("host", 9, 1))
    with pytest.raises(KMError, match="cycle"):
        resolve_integration_link(world[("host", 9)], 1, resolver)
    world, resolver = fig12_world()
    world[("site3", 1)].representative.clusters[2].link.sub_elements.append(("site7", 4, 0))
    with pytest.raises(KMError, match="site7"):
        resolve_integration_link(world[("host", 9)], 1, resolver)


def coherent(core, locals_):
    held = {(s, k): e.meta.to_json() for s, l in locals_.items() for k, e in l.entries.items()}
    return {k: m.to_json() for k, m in core.meta.items()} == held


def test_coherence_random_ops():
    rng = random.Random(7)
    core = CoreKM()
    _, storm, kids, rain = meteorology(core)
    concepts = [storm, rain, *kids.values()]
    locals_ = {f"site{i}": LocalKM(f"site{i}") for i in range(4)}
    for _ in range(300):
        site = rng.choice(list(locals_))
        if locals_[site].entries and rng.random() < 0.4:
            delete_knowledge(locals_[site], rng.choice(list(locals_[site].entries)), core)
        else:
            make = rng.choice([rules_entry, cluster_entry])
            register_knowledge(locals_[site], make(rng.choice(concepts)), core)
        assert coherent(core, locals_)
    for m in find(core, 0):
        assert retrieve(locals_[m.site], m.knowledge_id).meta.to_json() == m.to_json()


def test_persistence_round_trip(tmp_path):
    core, locals_, *_ = populated()
    km.save_json(core.to_json(), tmp_path / "core.json")
    for s, l in locals_.items():
        km.save_json(l.to_json(), tmp_path / f"{s}.json")
    core2 = CoreKM.from_json(km.load_json(tmp_path / "core.json"))
    assert core2.to_json() == core.to_json()
    for s, l in locals_.items():
        assert LocalKM.from_json(km.load_json(tmp_path / f"{s}.json")).to_json() == l.to_json()
    assert not list(tmp_path.glob("*.tmp"))
