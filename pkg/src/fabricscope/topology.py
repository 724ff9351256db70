"""Node graph of GCDs, NUMA domains and Infinity Fabric links.

The topology is loaded from a JSON document and validated against the
structural rules of an MI250X-class node: two GCDs per physical GPU,
one quad link between siblings, one CPU link per GCD, and a bijective
GPU-to-NUMA mapping. After loading, a Topology is immutable and safe
to share between threads.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Optional

TIER_NAMES = ("single", "dual", "quad", "cpu")

# xGMI: 16 bits/transaction at 25 GT/s = 50 GB/s per link per direction.
DEFAULT_TIER_GBPS = {"single": 50.0, "dual": 100.0, "quad": 200.0, "cpu": 36.0}
TIER_LINK_COUNT = {"single": 1, "dual": 2, "quad": 4, "cpu": 1}

DEFAULT_HBM_GBPS = 1600.0
DEFAULT_CPU_MEM_GBPS = 204.8
DEFAULT_CPU_MEM_LATENCY_NS = 96.0

DEFAULT_TOPOLOGY_ENV = "FABRIC_SCOPE_TOPOLOGY"


class TopologyError(ValueError):
    """Schema or invariant violation; `rule` names the violated rule."""

    def __init__(self, rule: str, detail: str = ""):
        self.rule = rule
        msg = rule if not detail else f"{rule}: {detail}"
        super().__init__(msg)


class UnknownDeviceError(TopologyError):
    def __init__(self, detail: str):
        super().__init__("unknown device", detail)


@dataclass(frozen=True)
class Device:
    """A GCD or a CPU NUMA domain. NUMA ids live in their own namespace."""
    id: int
    kind: str  # "gcd" | "numa"
    physical_gpu: Optional[int] = None  # gcd only
    numa_domain: Optional[int] = None   # gcd only: attached NUMA domain

    @property
    def key(self) -> tuple[str, int]:
        return (self.kind, self.id)


@dataclass(frozen=True)
class Link:
    """Undirected link between two devices, identified by (kind, id) keys."""
    a: tuple[str, int]
    b: tuple[str, int]
    tier: str

    @property
    def key(self) -> frozenset:
        return frozenset((self.a, self.b))


@dataclass(frozen=True)
class Topology:
    devices: dict = field(repr=False)   # (kind, id) -> Device
    links: tuple = field(repr=False)    # tuple[Link, ...]
    tier_gbps: dict = field(default_factory=lambda: dict(DEFAULT_TIER_GBPS))
    hbm_gbps: float = DEFAULT_HBM_GBPS
    cpu_mem_gbps: float = DEFAULT_CPU_MEM_GBPS
    cpu_mem_latency_ns: float = DEFAULT_CPU_MEM_LATENCY_NS

    def __post_init__(self):
        index = {}
        for link in self.links:
            index[link.key] = link
        object.__setattr__(self, "_link_index", index)
        adjacency: dict = {key: [] for key in self.devices}
        for link in self.links:
            adjacency[link.a].append((link.b, link.tier))
            adjacency[link.b].append((link.a, link.tier))
        for key in adjacency:
            adjacency[key].sort()
        object.__setattr__(self, "_adjacency", adjacency)

    # -- lookups ------------------------------------------------------

    @property
    def gcd_ids(self) -> list[int]:
        return sorted(d.id for d in self.devices.values() if d.kind == "gcd")

    @property
    def numa_ids(self) -> list[int]:
        return sorted(d.id for d in self.devices.values() if d.kind == "numa")

    def device(self, dev_id: int, kind: str = "gcd") -> Device:
        try:
            return self.devices[(kind, dev_id)]
        except KeyError:
            raise UnknownDeviceError(f"no {kind} device with id {dev_id}") from None

    def numa_of(self, gcd_id: int) -> int:
        dev = self.device(gcd_id, "gcd")
        return dev.numa_domain

    def link_between(self, a: int, b: int, kind_a: str = "gcd",
                     kind_b: str = "gcd") -> Optional[Link]:
        self.device(a, kind_a)
        self.device(b, kind_b)
        return self._link_index.get(frozenset(((kind_a, a), (kind_b, b))))

    def tier_bandwidth(self, tier: str) -> float:
        return self.tier_gbps[tier]

    def theoretical_bandwidth(self, a: int, b: int, direction: str = "unidir",
                              kind_a: str = "gcd", kind_b: str = "gcd",
                              ) -> Optional[float]:
        """Per-direction (or 2x for bidir) bandwidth of the direct link, if any."""
        if direction not in ("unidir", "bidir"):
            raise ValueError(f"direction must be unidir or bidir, got {direction!r}")
        if (kind_a, a) == (kind_b, b):
            raise ValueError("endpoints must differ")
        link = self.link_between(a, b, kind_a, kind_b)
        if link is None:
            return None
        bw = self.tier_gbps[link.tier]
        return bw * 2 if direction == "bidir" else bw

    def neighbors(self, a: int, kind: str = "gcd") -> list[tuple[Device, str]]:
        """Directly linked devices with link tiers, ascending (kind, id) order."""
        self.device(a, kind)
        return [(self.devices[key], tier)
                for key, tier in self._adjacency[(kind, a)]]

    def gcd_neighbors(self, a: int) -> list[tuple[int, str]]:
        """GCD-GCD adjacency only, ascending id order."""
        return [(dev.id, tier) for dev, tier in self.neighbors(a, "gcd")
                if dev.kind == "gcd"]


# -- loading & validation ---------------------------------------------


def _require(cond: bool, rule: str, detail: str = ""):
    if not cond:
        raise TopologyError(rule, detail)


def load_topology(source) -> Topology:
    """Build a validated Topology from a JSON document (text or mapping)."""
    if isinstance(source, (str, bytes)):
        try:
            doc = json.loads(source)
        except json.JSONDecodeError as exc:
            raise TopologyError("invalid json", str(exc)) from exc
    else:
        doc = source
    _require(isinstance(doc, dict), "document not an object")
    for key in ("devices", "links"):
        _require(key in doc, "missing key", key)

    tier_gbps = dict(DEFAULT_TIER_GBPS)
    for tier, bw in doc.get("tiers", {}).items():
        _require(tier in TIER_NAMES, "unknown tier", tier)
        _require(bw > 0, "non-positive tier bandwidth", tier)
        tier_gbps[tier] = float(bw)

    mem = doc.get("memory", {})
    hbm = float(mem.get("hbm_gbps", DEFAULT_HBM_GBPS))
    cpu_bw = float(mem.get("cpu_mem_gbps", DEFAULT_CPU_MEM_GBPS))
    cpu_lat = float(mem.get("cpu_mem_latency_ns", DEFAULT_CPU_MEM_LATENCY_NS))
    _require(hbm > 0 and cpu_bw > 0 and cpu_lat > 0, "non-positive memory parameter")

    devices: dict = {}
    for entry in doc["devices"]:
        _require(isinstance(entry, dict) and "id" in entry and "kind" in entry,
                 "malformed device entry", repr(entry))
        kind = entry["kind"]
        _require(kind in ("gcd", "numa"), "unknown device kind", kind)
        dev_id = int(entry["id"])
        _require(dev_id >= 0, "negative device id", str(dev_id))
        if kind == "gcd":
            _require("physical_gpu" in entry, "gcd missing physical_gpu",
                     f"gcd {dev_id}")
            _require("numa_domain" in entry, "gcd missing numa_domain",
                     f"gcd {dev_id}")
            dev = Device(dev_id, "gcd", int(entry["physical_gpu"]),
                         int(entry["numa_domain"]))
        else:
            dev = Device(dev_id, "numa")
        _require(dev.key not in devices, "duplicate device id", str(dev.key))
        devices[dev.key] = dev

    gcds = [d for d in devices.values() if d.kind == "gcd"]
    numas = [d for d in devices.values() if d.kind == "numa"]

    # two GCDs per physical GPU; GPU -> NUMA is a bijection
    by_gpu: dict = {}
    for d in gcds:
        by_gpu.setdefault(d.physical_gpu, []).append(d)
    for gpu, members in by_gpu.items():
        _require(len(members) == 2, "two gcds per physical gpu",
                 f"gpu {gpu} has {len(members)}")
        _require(members[0].numa_domain == members[1].numa_domain,
                 "sibling numa mismatch", f"gpu {gpu}")
    gpu_numa = {gpu: members[0].numa_domain for gpu, members in by_gpu.items()}
    _require(len(set(gpu_numa.values())) == len(gpu_numa),
             "gpu-numa mapping not a bijection")
    for numa_id in gpu_numa.values():
        _require(("numa", numa_id) in devices, "unknown numa domain", str(numa_id))

    links: list[Link] = []
    seen = set()
    for entry in doc["links"]:
        _require(isinstance(entry, dict) and {"a", "b", "tier"} <= set(entry),
                 "malformed link entry", repr(entry))
        tier = entry["tier"]
        _require(tier in TIER_NAMES, "unknown tier", tier)
        a_id, b_id = int(entry["a"]), int(entry["b"])
        if tier == "cpu":
            a, b = ("gcd", a_id), ("numa", b_id)
        else:
            a, b = ("gcd", a_id), ("gcd", b_id)
        _require(a != b, "self-link", repr(entry))
        for ep in (a, b):
            _require(ep in devices, "link references unknown device", str(ep))
        key = frozenset((a, b))
        _require(key not in seen, "duplicate link", repr(entry))
        seen.add(key)
        links.append(Link(a, b, tier))

    topo = Topology(devices=devices, links=tuple(links), tier_gbps=tier_gbps,
                    hbm_gbps=hbm, cpu_mem_gbps=cpu_bw, cpu_mem_latency_ns=cpu_lat)
    _validate_structure(topo)
    return topo


def _validate_structure(t: Topology):
    gcd_ids = t.gcd_ids
    for g in gcd_ids:
        tiers = [tier for _, tier in t.neighbors(g, "gcd")]
        quads = [dev for dev, tier in t.neighbors(g, "gcd")
                 if tier == "quad" and dev.kind == "gcd"]
        _require(len(quads) == 1, "missing sibling link",
                 f"gcd {g} has {len(quads)} quad links")
        sibling = quads[0]
        _require(sibling.physical_gpu == t.device(g).physical_gpu,
                 "quad link not to sibling", f"gcd {g} -> gcd {sibling.id}")
        cpu_links = [dev for dev, tier in t.neighbors(g, "gcd") if tier == "cpu"]
        _require(len(cpu_links) == 1, "missing cpu link",
                 f"gcd {g} has {len(cpu_links)} cpu links")
        _require(cpu_links[0].id == t.device(g).numa_domain,
                 "cpu link to wrong numa domain",
                 f"gcd {g} -> numa {cpu_links[0].id}")
        del tiers

    # GCD-GCD graph must be connected
    if gcd_ids:
        seen = {gcd_ids[0]}
        frontier = [gcd_ids[0]]
        while frontier:
            cur = frontier.pop()
            for nbr, _tier in t.gcd_neighbors(cur):
                if nbr not in seen:
                    seen.add(nbr)
                    frontier.append(nbr)
        _require(seen == set(gcd_ids), "gcd graph not connected",
                 f"unreachable: {sorted(set(gcd_ids) - seen)}")


def load_topology_file(path: str) -> Topology:
    with open(path, "r", encoding="utf-8") as fh:
        return load_topology(fh.read())


def default_topology_path() -> str:
    """Bundled node description, overridable via FABRIC_SCOPE_TOPOLOGY."""
    override = os.environ.get(DEFAULT_TOPOLOGY_ENV)
    if override:
        return override
    return str(resources.files("fabricscope").joinpath("data/frontier-node.json"))


def default_topology() -> Topology:
    return load_topology_file(default_topology_path())
