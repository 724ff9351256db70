"""Shortest-hop and bandwidth-maximizing routes between GCD pairs.

Peer traffic never routes through the host, so only GCD-GCD links are
considered. The node graph is tiny (8 GCDs), so both objectives are
solved by exhaustive enumeration of simple paths with deterministic
tie-breaking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .topology import Topology, TopologyError


class RoutingError(ValueError):
    pass


@dataclass(frozen=True)
class Route:
    """Ordered GCD id sequence with its per-direction bottleneck bandwidth."""
    hops: tuple[int, ...]
    bottleneck_gbps: float

    @property
    def hop_count(self) -> int:
        return len(self.hops) - 1

    def __str__(self) -> str:
        path = "-".join(str(h) for h in self.hops)
        return f"{path} bottleneck {self.bottleneck_gbps:g} GB/s/dir"


@dataclass(frozen=True)
class PairClassification:
    pair: tuple[int, int]
    shortest_hops: int
    widest_route: Route
    routing_mismatch: bool


def _check_gcd(t: Topology, dev_id: int):
    dev = t.device(dev_id, "gcd")  # raises UnknownDeviceError
    if dev.kind != "gcd":
        raise RoutingError(f"device {dev_id} is not a gcd")


def simple_gcd_paths(t: Topology, a: int, b: int,
                     max_hops: Optional[int] = None) -> Iterator[tuple[int, ...]]:
    """All simple GCD paths a..b with at most max_hops links.

    Neighbors are expanded in ascending id order, so paths of equal
    length arrive in lexicographic order.
    """
    limit = max_hops if max_hops is not None else len(t.gcd_ids) - 1
    adjacency = {g: [n for n, _ in t.gcd_neighbors(g)] for g in t.gcd_ids}

    def extend(path: tuple[int, ...]):
        if path[-1] == b:
            yield path
            return
        if len(path) - 1 >= limit:
            return
        for nxt in adjacency[path[-1]]:
            if nxt not in path:
                yield from extend(path + (nxt,))

    yield from extend((a,))


def _bottleneck(t: Topology, path: tuple[int, ...]) -> float:
    bws = []
    for u, v in zip(path, path[1:]):
        link = t.link_between(u, v)
        if link is None or link.tier == "cpu":
            raise RoutingError(f"no gcd link between {u} and {v}")
        bws.append(t.tier_bandwidth(link.tier))
    return min(bws)


def shortest_hop_route(t: Topology, a: int, b: int) -> Route:
    """Minimum-hop route; ties broken by lexicographically smallest hop ids."""
    _check_gcd(t, a)
    _check_gcd(t, b)
    if a == b:
        raise RoutingError("endpoints must differ")
    best = min(simple_gcd_paths(t, a, b), key=lambda p: (len(p), p), default=None)
    if best is None:
        raise RoutingError(f"no route between gcd {a} and gcd {b}")
    return Route(best, _bottleneck(t, best))


def widest_route(t: Topology, a: int, b: int, max_hops: int = 3) -> Route:
    """Route maximizing bottleneck bandwidth among simple paths of
    length <= max_hops; ties broken by fewer hops, then lexicographic."""
    _check_gcd(t, a)
    _check_gcd(t, b)
    if a == b:
        raise RoutingError("endpoints must differ")
    if max_hops < 1:
        raise RoutingError("max_hops must be >= 1")
    candidates = [(p, _bottleneck(t, p))
                  for p in simple_gcd_paths(t, a, b, max_hops)]
    if not candidates:
        raise RoutingError(
            f"no route between gcd {a} and gcd {b} within {max_hops} hops")
    path, bw = min(candidates, key=lambda item: (-item[1], len(item[0]), item[0]))
    return Route(path, bw)


def classify_pair(t: Topology, a: int, b: int, max_hops: int = 3
                  ) -> PairClassification:
    shortest = shortest_hop_route(t, a, b)
    widest = widest_route(t, a, b, max_hops)
    return PairClassification(
        pair=(a, b),
        shortest_hops=shortest.hop_count,
        widest_route=widest,
        routing_mismatch=widest.hop_count > shortest.hop_count,
    )


def mismatch_pairs(t: Topology, max_hops: int = 3) -> list[tuple[int, int]]:
    """Unordered GCD pairs whose widest route is longer than the shortest."""
    gcds = t.gcd_ids
    out = []
    for i, a in enumerate(gcds):
        for b in gcds[i + 1:]:
            if classify_pair(t, a, b, max_hops).routing_mismatch:
                out.append((a, b))
    return out


MATRIX_METRICS = ("hops", "widest_bw", "mismatch")


def all_pairs_matrix(t: Topology, metric: str, max_hops: int = 3) -> np.ndarray:
    """Symmetric all-pairs matrix indexed by GCD id position.

    Diagonal: 0 for hops, local HBM bandwidth for widest_bw, False for
    mismatch.
    """
    if metric not in MATRIX_METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {MATRIX_METRICS}")
    gcds = t.gcd_ids
    n = len(gcds)
    if metric == "hops":
        mat = np.zeros((n, n), dtype=int)
    elif metric == "widest_bw":
        mat = np.full((n, n), t.hbm_gbps, dtype=float)
    else:
        mat = np.zeros((n, n), dtype=bool)
    for i, a in enumerate(gcds):
        for j in range(i + 1, n):
            b = gcds[j]
            if metric == "hops":
                val = shortest_hop_route(t, a, b).hop_count
            elif metric == "widest_bw":
                val = widest_route(t, a, b, max_hops).bottleneck_gbps
            else:
                val = classify_pair(t, a, b, max_hops).routing_mismatch
            mat[i, j] = val
            mat[j, i] = val
    return mat
