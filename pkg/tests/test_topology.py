import json

import pytest

import fabricscope as fs
from fabricscope.topology import load_topology, load_topology_file


def default_doc():
    with open(fs.topology.default_topology_path()) as fh:
        return json.load(fh)


def test_default_topology_loads(topo):
    assert topo.gcd_ids == list(range(8))
    assert topo.numa_ids == [0, 1, 2, 3]
    assert topo.hbm_gbps == 1600.0
    assert topo.cpu_mem_gbps == 204.8
    assert topo.cpu_mem_latency_ns == 96.0


def test_link_tier_census(topo):
    tiers = {}
    for link in topo.links:
        tiers[link.tier] = tiers.get(link.tier, 0) + 1
    assert tiers == {"quad": 4, "dual": 2, "single": 6, "cpu": 8}


def test_gcd0_neighbors(topo):
    assert topo.gcd_neighbors(0) == [(1, "quad"), (2, "single"), (6, "dual")]


def test_gcd7_neighbors(topo):
    # read off the default adjacency, cross-checked by link-set symmetry
    assert topo.gcd_neighbors(7) == [(3, "single"), (5, "single"), (6, "quad")]


def test_neighbors_include_numa(topo):
    nbrs = topo.neighbors(0)
    numa = [(d.id, tier) for d, tier in nbrs if d.kind == "numa"]
    assert numa == [(topo.numa_of(0), "cpu")]


def test_single_link_pair_set(topo):
    singles = {tuple(sorted(d[1] for d in link.key))
               for link in topo.links if link.tier == "single"}
    assert singles == {(0, 2), (1, 3), (1, 5), (3, 7), (4, 6), (5, 7)}


def test_every_gcd_degree_three(topo):
    for g in topo.gcd_ids:
        assert len(topo.gcd_neighbors(g)) == 3


@pytest.mark.parametrize("a,b,direction,expected", [
    (0, 1, "bidir", 400.0),
    (0, 6, "unidir", 100.0),
    (0, 2, "unidir", 50.0),
    (0, 7, "unidir", None),
    (0, 7, "bidir", None),
])
def test_theoretical_bandwidth(topo, a, b, direction, expected):
    assert topo.theoretical_bandwidth(a, b, direction) == expected


def test_theoretical_bandwidth_symmetric(topo):
    for a in topo.gcd_ids:
        for b in topo.gcd_ids:
            if a == b:
                continue
            assert (topo.theoretical_bandwidth(a, b)
                    == topo.theoretical_bandwidth(b, a))


def test_cpu_link_bandwidth(topo):
    numa = topo.numa_of(0)
    assert topo.theoretical_bandwidth(0, numa, "unidir",
                                      kind_b="numa") == 36.0
    assert topo.theoretical_bandwidth(0, numa, "bidir",
                                      kind_b="numa") == 72.0


def test_unknown_device_rejected(topo):
    with pytest.raises(fs.UnknownDeviceError):
        topo.theoretical_bandwidth(0, 99)
    with pytest.raises(fs.UnknownDeviceError):
        topo.neighbors(42)


def test_missing_sibling_link_rejected():
    doc = default_doc()
    doc["links"] = [l for l in doc["links"]
                    if not (l["tier"] == "quad" and l["a"] == 0)]
    with pytest.raises(fs.TopologyError, match="missing sibling link"):
        load_topology(doc)


def test_missing_cpu_link_rejected():
    doc = default_doc()
    doc["links"] = [l for l in doc["links"]
                    if not (l["tier"] == "cpu" and l["a"] == 5)]
    with pytest.raises(fs.TopologyError, match="missing cpu link"):
        load_topology(doc)


def test_numa_bijection_enforced():
    doc = default_doc()
    for d in doc["devices"]:
        if d["kind"] == "gcd" and d["physical_gpu"] == 1:
            d["numa_domain"] = 3  # collides with gpu 0
    with pytest.raises(fs.TopologyError, match="bijection"):
        load_topology(doc)


def test_duplicate_link_rejected():
    doc = default_doc()
    doc["links"].append({"a": 0, "b": 1, "tier": "single"})
    with pytest.raises(fs.TopologyError, match="duplicate link"):
        load_topology(doc)


def test_disconnected_graph_rejected():
    doc = default_doc()
    doc["links"] = [l for l in doc["links"]
                    if l["tier"] in ("quad", "cpu")
                    or {l["a"], l["b"]} <= {0, 1, 2, 3}]
    with pytest.raises(fs.TopologyError, match="not connected"):
        load_topology(doc)


def test_tier_bandwidths_from_file():
    doc = default_doc()
    doc["tiers"]["single"] = 25.0
    t = load_topology(doc)
    assert t.theoretical_bandwidth(0, 2) == 25.0


def test_env_override(monkeypatch, tmp_path):
    path = tmp_path / "node.json"
    path.write_text(json.dumps(default_doc()))
    monkeypatch.setenv("FABRIC_SCOPE_TOPOLOGY", str(path))
    assert fs.topology.default_topology_path() == str(path)
    assert load_topology_file(str(path)).gcd_ids == list(range(8))
