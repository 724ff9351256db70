"""Randomized property suites over generated topologies and documents."""

import dataclasses
import random

import networkx as nx

import fabricscope as fs
from fabricscope.measurements import (METRICS, RECOGNIZED_ENV_KEYS,
                                      MeasurementRecord, ingest_csv,
                                      serialize_csv)
from fabricscope.routing import all_pairs_matrix, widest_route
from fabricscope.topology import load_topology
from fabricscope.xfer_model import TransferSpec, predict_p2p


def random_topology(rng: random.Random):
    """A valid random 8-GCD node: sibling quads, random extra links."""
    numa_perm = rng.sample(range(4), 4)
    devices = []
    for g in range(8):
        devices.append({"id": g, "kind": "gcd", "physical_gpu": g // 2,
                        "numa_domain": numa_perm[g // 2]})
    for n in range(4):
        devices.append({"id": n, "kind": "numa"})

    links = [{"a": 2 * i, "b": 2 * i + 1, "tier": "quad"} for i in range(4)]
    links += [{"a": g, "b": numa_perm[g // 2], "tier": "cpu"}
              for g in range(8)]

    # spanning chain over the sibling pairs, plus random extra edges
    pair_order = rng.sample(range(4), 4)
    taken = {frozenset((2 * i, 2 * i + 1)) for i in range(4)}
    for left, right in zip(pair_order, pair_order[1:]):
        a = rng.choice((2 * left, 2 * left + 1))
        b = rng.choice((2 * right, 2 * right + 1))
        links.append({"a": a, "b": b, "tier": rng.choice(("single", "dual"))})
        taken.add(frozenset((a, b)))
    for _ in range(rng.randint(0, 8)):
        a, b = rng.sample(range(8), 2)
        if frozenset((a, b)) in taken or a // 2 == b // 2:
            continue
        taken.add(frozenset((a, b)))
        links.append({"a": a, "b": b, "tier": rng.choice(("single", "dual"))})

    return load_topology({"devices": devices, "links": links})


def oracle_widest_bw(topo, a, b, max_hops):
    g = nx.Graph()
    g.add_nodes_from(topo.gcd_ids)
    for link in topo.links:
        if link.tier == "cpu":
            continue
        (_, u), (_, v) = sorted(link.key)
        g.add_edge(u, v, bw=topo.tier_bandwidth(link.tier))
    best = None
    for path in nx.all_simple_paths(g, a, b, cutoff=max_hops):
        bw = min(g[u][v]["bw"] for u, v in zip(path, path[1:]))
        best = bw if best is None else max(best, bw)
    return best


def test_widest_route_matches_oracle_on_random_topologies():
    rng = random.Random(20240817)
    for trial in range(200):
        topo = random_topology(rng)
        max_hops = rng.choice((2, 3, 4))
        for a in range(8):
            for b in range(a + 1, 8):
                expected = oracle_widest_bw(topo, a, b, max_hops)
                if expected is None:
                    continue
                route = widest_route(topo, a, b, max_hops)
                assert route.bottleneck_gbps == expected, \
                    f"trial {trial}: pair ({a},{b}) within {max_hops} hops"
                assert route.hop_count <= max_hops
                # bottleneck is attained on some traversed link
                tiers = [topo.link_between(u, v).tier
                         for u, v in zip(route.hops, route.hops[1:])]
                bws = [topo.tier_bandwidth(t) for t in tiers]
                assert min(bws) == route.bottleneck_gbps


def test_matrices_symmetric_on_random_topologies():
    rng = random.Random(7)
    for _ in range(25):
        topo = random_topology(rng)
        for metric in ("hops", "widest_bw", "mismatch"):
            mat = all_pairs_matrix(topo, metric, max_hops=7)
            assert (mat == mat.T).all()


def test_sdma_prediction_monotone_in_link_tier():
    rng = random.Random(99)
    profile = fs.default_profile()
    for _ in range(25):
        topo = random_topology(rng)
        by_tier = {"single": [], "dual": [], "quad": []}
        for link in topo.links:
            if link.tier == "cpu":
                continue
            (_, a), (_, b) = sorted(link.key)
            spec = TransferSpec(src=a, dst=b, size_bytes=2**30,
                                alloc="device", api="explicit_copy")
            pred = predict_p2p(spec, topo, profile)
            assert pred.bandwidth_gbps <= profile.sdma_cap_gbps
            by_tier[link.tier].append(pred.bandwidth_gbps)
        tiers_present = [t for t in ("single", "dual", "quad") if by_tier[t]]
        for lo, hi in zip(tiers_present, tiers_present[1:]):
            assert max(by_tier[lo]) <= min(by_tier[hi])


def random_record(rng: random.Random) -> MeasurementRecord:
    metric = rng.choice(METRICS)
    env = []
    for key in rng.sample(RECOGNIZED_ENV_KEYS, rng.randint(0, 3)):
        env.append((key, rng.choice(("0", "1"))))
    if rng.random() < 0.2:
        env.append((f"x-tag{rng.randint(0, 9)}", "v"))
    src_kind = rng.choice(("gcd", "host"))
    return MeasurementRecord(
        benchmark=rng.choice(("p2p", "h2d_pinned", "mpi_p2p", "stream")),
        src_kind=src_kind,
        src_id=0 if src_kind == "host" else rng.randint(0, 7),
        dst_kind="gcd",
        dst_id=rng.randint(0, 7),
        size_bytes=rng.choice((16, 4096, 2**20, 2**30)),
        metric=metric,
        value=round(rng.uniform(0.1, 500.0), 4),
        env=tuple(env),
    )


def test_csv_round_trip_on_random_documents():
    rng = random.Random(31337)
    for _ in range(100):
        records = [random_record(rng) for _ in range(rng.randint(0, 40))]
        again = ingest_csv(serialize_csv(records))
        strip = lambda r: dataclasses.replace(r, line=None)
        assert [strip(r) for r in again] == records
