"""Bandwidth and latency-tier predictions for CPU-GPU and GPU-GPU transfers.

Encodes the HIP allocation/movement semantics, the SDMA per-copy
ceiling, per-interface efficiency factors and the NUMA aggregation rule
for multi-GCD host bandwidth. Predictions are plateau values: the model
does not fit size-dependent ramp-up curves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional, Union

from .routing import Route, classify_pair, widest_route
from .topology import Topology

ALLOC_KINDS = ("pageable", "pinned_noncoherent", "pinned_coherent",
               "managed", "device")
APIS = ("explicit_copy", "zero_copy_kernel", "page_migration", "mpi_p2p")
MOVEMENTS = ("explicit", "zero_copy", "implicit")

HOST = "host"
SMALL_TRANSFER_BYTES = 32 * 1024 * 1024  # below this, cache effects dominate

# Route-choice assumption recorded on every routed prediction.
ROUTE_ASSUMPTION = "assumes runtime peer copies take the bandwidth-maximizing route"


class MovementError(ValueError):
    """Allocation/API combination with no defined movement semantics."""


class PredictionError(ValueError):
    pass


@dataclass(frozen=True)
class TransferSpec:
    """One modeled transfer: placement, allocation, interface, env knobs."""
    src: Union[int, str]  # gcd id or "host"
    dst: Union[int, str]
    size_bytes: int
    alloc: str
    api: Optional[str] = None
    sdma: bool = True
    xnack: bool = False

    def __post_init__(self):
        if self.alloc not in ALLOC_KINDS:
            raise ValueError(f"unknown alloc {self.alloc!r}")
        if self.api is not None and self.api not in APIS:
            raise ValueError(f"unknown api {self.api!r}")
        if self.size_bytes <= 0:
            raise ValueError("size_bytes must be positive")


@dataclass(frozen=True)
class CalibrationProfile:
    """Measured plateau values and efficiency factors for one system."""
    memcpy_h2d_pinned_gbps: float = 28.3
    memcpy_h2d_pageable_unstable: bool = True
    zero_copy_h2d_gbps: float = 25.5
    page_migration_gbps: float = 2.8
    sdma_cap_gbps: float = 50.0
    sdma_link_efficiency: float = 0.75
    kernel_bidir_efficiency: float = 0.435
    mpi_overhead_factor_range: tuple[float, float] = (0.85, 0.90)
    local_stream_gbps: float = 1400.0
    cpu_gpu_per_gcd_bidir_gbps: float = 1.0  # site calibration input

    def __post_init__(self):
        for name in ("memcpy_h2d_pinned_gbps", "zero_copy_h2d_gbps",
                     "page_migration_gbps", "sdma_cap_gbps",
                     "local_stream_gbps", "cpu_gpu_per_gcd_bidir_gbps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("sdma_link_efficiency", "kernel_bidir_efficiency"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must be in (0, 1]")
        lo, hi = self.mpi_overhead_factor_range
        if not (0 < lo <= hi <= 1):
            raise ValueError("mpi_overhead_factor_range must be within (0, 1]")


def load_profile(source) -> CalibrationProfile:
    if isinstance(source, (str, bytes)):
        doc = json.loads(source)
    else:
        doc = dict(source)
    if "mpi_overhead_factor_range" in doc:
        doc["mpi_overhead_factor_range"] = tuple(doc["mpi_overhead_factor_range"])
    return CalibrationProfile(**doc)


def load_profile_file(path: str) -> CalibrationProfile:
    with open(path, "r", encoding="utf-8") as fh:
        return load_profile(fh.read())


def default_profile_path() -> str:
    return str(resources.files("fabricscope").joinpath("data/mi250x-paper.json"))


def default_profile() -> CalibrationProfile:
    return load_profile_file(default_profile_path())


@dataclass(frozen=True)
class PerfPrediction:
    """A predicted bandwidth and/or latency tier plus rule provenance."""
    bandwidth_gbps: Optional[float]
    direction: str  # "unidir" | "bidir"
    rule: str
    latency_tier: Optional[str] = None
    route: Optional[Route] = None
    bandwidth_range_gbps: Optional[tuple[float, float]] = None
    unstable: bool = False

    def __post_init__(self):
        if not self.rule:
            raise ValueError("prediction must carry rule provenance")


# -- movement semantics (host-side allocations) -----------------------

_MOVEMENT_ROWS = (
    "pinned_noncoherent + explicit_copy",
    "pageable + explicit_copy",
    "pinned_coherent (zero-copy)",
    "managed + xnack=0 (zero-copy)",
    "managed + xnack=1 (implicit page migration)",
)


def resolve_movement(alloc: str, xnack: bool = False,
                     api: Optional[str] = None) -> tuple[str, bool]:
    """Map an allocation/API combination to (movement, coherent).

    Rejects combinations with no defined semantics, naming the closest
    valid rows.
    """
    if alloc not in ALLOC_KINDS:
        raise MovementError(f"unknown alloc {alloc!r}")

    def reject(why: str, closest: tuple[str, ...]) -> MovementError:
        rows = "; ".join(closest)
        return MovementError(f"{why}; closest valid combinations: {rows}")

    if alloc == "pageable":
        if api in (None, "explicit_copy"):
            return ("explicit", False)
        raise reject(f"pageable memory only supports explicit copies, not {api}",
                     (_MOVEMENT_ROWS[1],))
    if alloc == "pinned_noncoherent":
        if api in (None, "explicit_copy"):
            return ("explicit", False)
        raise reject(f"non-coherent pinned memory is copied explicitly, not {api}",
                     (_MOVEMENT_ROWS[0], _MOVEMENT_ROWS[2]))
    if alloc == "pinned_coherent":
        if api in (None, "zero_copy_kernel"):
            return ("zero_copy", True)
        raise reject(f"coherent pinned memory is accessed zero-copy, not {api}",
                     (_MOVEMENT_ROWS[2], _MOVEMENT_ROWS[0]))
    if alloc == "managed":
        if api == "explicit_copy":
            raise reject("explicit copies from managed memory are undefined",
                         (_MOVEMENT_ROWS[3], _MOVEMENT_ROWS[4]))
        if xnack:
            if api in (None, "page_migration"):
                return ("implicit", True)
            raise reject("managed memory with xnack enabled migrates pages; "
                         f"{api} requires xnack disabled",
                         (_MOVEMENT_ROWS[4],))
        if api in (None, "zero_copy_kernel"):
            return ("zero_copy", True)
        raise reject("page migration requires xnack enabled",
                     (_MOVEMENT_ROWS[3], _MOVEMENT_ROWS[4]))
    raise reject("device memory is not a host-side allocation",
                 _MOVEMENT_ROWS)


# -- CPU-GPU ----------------------------------------------------------

def predict_h2d(spec: TransferSpec, profile: CalibrationProfile,
                link_cap_gbps: float = 36.0) -> PerfPrediction:
    """Plateau host-to-device bandwidth for one CPU-GPU transfer."""
    if spec.src != HOST or spec.dst == HOST:
        raise PredictionError("predict_h2d requires src=host, dst=gcd")
    movement, _coherent = resolve_movement(spec.alloc, spec.xnack, spec.api)
    small = spec.size_bytes < SMALL_TRANSFER_BYTES
    note = "; small-transfer regime (<32 MB), cache effects possible" if small else ""

    if spec.alloc == "pageable":
        return PerfPrediction(
            bandwidth_gbps=None, direction="unidir", unstable=True,
            rule="pageable hipMemcpy: unstable, no plateau estimate" + note)
    if movement == "explicit":
        bw = min(profile.memcpy_h2d_pinned_gbps, link_cap_gbps)
        rule = "pinned explicit copy plateau"
    elif movement == "zero_copy":
        bw = min(profile.zero_copy_h2d_gbps, link_cap_gbps)
        rule = "zero-copy kernel access to host memory plateau"
    else:
        bw = min(profile.page_migration_gbps, link_cap_gbps)
        rule = "managed memory page-migration plateau"
    return PerfPrediction(bandwidth_gbps=bw, direction="unidir",
                          rule=rule + note)


# -- GPU-GPU ----------------------------------------------------------

def _zero_copy_unidir_gbps(route: Route, profile: CalibrationProfile) -> float:
    return profile.kernel_bidir_efficiency * route.bottleneck_gbps


def predict_p2p(spec: TransferSpec, t: Topology,
                profile: CalibrationProfile) -> PerfPrediction:
    """Peer-to-peer bandwidth over the bandwidth-maximizing route."""
    if spec.src == HOST or spec.dst == HOST:
        raise PredictionError("predict_p2p requires two gcd endpoints")
    if spec.src == spec.dst:
        raise PredictionError("src and dst gcds must differ")
    if spec.alloc != "device":
        raise PredictionError("peer-to-peer transfers use device allocations")
    api = spec.api or "explicit_copy"
    route = widest_route(t, spec.src, spec.dst)
    b = route.bottleneck_gbps

    if api in ("explicit_copy", "mpi_p2p") and spec.sdma:
        bw = min(profile.sdma_link_efficiency * b, profile.sdma_cap_gbps)
        what = "MPI over SDMA engine" if api == "mpi_p2p" else "SDMA engine copy"
        return PerfPrediction(
            bandwidth_gbps=bw, direction="unidir", route=route,
            rule=f"{what}: min({profile.sdma_link_efficiency:g} x link, "
                 f"{profile.sdma_cap_gbps:g} GB/s cap); {ROUTE_ASSUMPTION}")
    if api == "zero_copy_kernel":
        bw = profile.kernel_bidir_efficiency * 2 * b
        return PerfPrediction(
            bandwidth_gbps=bw, direction="bidir", route=route,
            rule=f"zero-copy kernel: {profile.kernel_bidir_efficiency:g} x "
                 f"bidirectional link bandwidth; {ROUTE_ASSUMPTION}")
    base = _zero_copy_unidir_gbps(route, profile)
    if api == "mpi_p2p":
        lo, hi = profile.mpi_overhead_factor_range
        return PerfPrediction(
            bandwidth_gbps=(lo + hi) / 2 * base, direction="unidir", route=route,
            bandwidth_range_gbps=(lo * base, hi * base),
            rule=f"MPI with SDMA disabled: [{lo:g}, {hi:g}] x copy-kernel "
                 f"unidirectional bandwidth; {ROUTE_ASSUMPTION}")
    if api == "explicit_copy":  # sdma disabled: blit copy kernel
        return PerfPrediction(
            bandwidth_gbps=base, direction="unidir", route=route,
            rule=f"blit copy kernel (SDMA disabled): "
                 f"{profile.kernel_bidir_efficiency:g} x link bandwidth; "
                 f"{ROUTE_ASSUMPTION}")
    raise PredictionError(f"api {api!r} is not a peer-to-peer interface")


LATENCY_TIERS = ("A", "B", "C", "D")


def classify_latency_tier(t: Topology, a: int, b: int) -> str:
    """Ordinal latency tier for a GCD pair.

    A: direct single link; B: direct dual/quad; C: multi-hop without
    routing mismatch; D: routing-mismatch pair.
    """
    link = t.link_between(a, b)
    if link is not None and link.tier != "cpu":
        return "A" if link.tier == "single" else "B"
    cls = classify_pair(t, a, b)
    return "D" if cls.routing_mismatch else "C"


# -- multi-GCD host bandwidth -----------------------------------------

def predict_multi_gpu(gcds, t: Topology,
                      profile: CalibrationProfile) -> PerfPrediction:
    """Aggregate bidirectional CPU-GPU bandwidth for a set of GCDs.

    Each NUMA domain contributes at most one GCD's worth of bandwidth,
    so siblings on one physical GPU do not add up.
    """
    gcds = set(gcds)
    if not gcds:
        raise PredictionError("need at least one gcd")
    domains = {t.numa_of(g) for g in gcds}
    b1 = profile.cpu_gpu_per_gcd_bidir_gbps
    bw = b1 * len(domains)
    return PerfPrediction(
        bandwidth_gbps=bw, direction="bidir",
        rule=f"per-NUMA-domain saturation: {len(domains)} occupied domain(s) "
             f"x {b1:g} GB/s bidirectional per domain")


def stream_bandwidth(elapsed_s: float, bytes_per_buffer: float,
                     n_gpus: int) -> float:
    """Aggregate bidirectional STREAM-copy bandwidth, decimal GB/s."""
    if elapsed_s <= 0:
        raise ValueError("elapsed_s must be positive")
    if bytes_per_buffer <= 0:
        raise ValueError("bytes_per_buffer must be positive")
    if n_gpus < 1:
        raise ValueError("n_gpus must be >= 1")
    return n_gpus * 2 * bytes_per_buffer / elapsed_s / 1e9
