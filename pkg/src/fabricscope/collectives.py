"""Latency lower bounds and a ring-schedule estimator for GPU collectives.

Reduce and Broadcast need one communication pass; AllReduce,
ReduceScatter and AllGather need two. The ring schedule is an explicit
modeling choice used for shape comparison against measured data; it is
not a reconstruction of any library's internal algorithm.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .routing import widest_route
from .topology import Topology
from .xfer_model import CalibrationProfile, PerfPrediction, TransferSpec, predict_p2p

PASS_COUNTS = {
    "reduce": 1,
    "broadcast": 1,
    "allreduce": 2,
    "reduce_scatter": 2,
    "allgather": 2,
}

DEFAULT_MIN_LATENCY_US = 8.7  # lowest GCD-GCD latency in the calibration matrix


@dataclass(frozen=True)
class CollectiveOp:
    name: str
    passes: int

    def __post_init__(self):
        if self.name not in PASS_COUNTS:
            raise ValueError(f"unknown collective {self.name!r}")
        if self.passes != PASS_COUNTS[self.name]:
            raise ValueError(f"{self.name} requires {PASS_COUNTS[self.name]} passes")


def collective_op(name: str) -> CollectiveOp:
    if name not in PASS_COUNTS:
        raise ValueError(f"unknown collective {name!r}; "
                         f"expected one of {sorted(PASS_COUNTS)}")
    return CollectiveOp(name, PASS_COUNTS[name])


@dataclass(frozen=True)
class CollectiveEstimate:
    lower_bound_us: float
    participants: int
    message_bytes: int
    ring_estimate_us: Optional[float] = None
    # per-step decomposition, for inspecting latency- vs bandwidth-bound regimes
    steps: Optional[int] = None
    step_latency_us: Optional[float] = None
    step_transfer_us: Optional[float] = None
    rule: str = ""


def lower_bound(op: CollectiveOp, l_min_us: float = DEFAULT_MIN_LATENCY_US) -> float:
    """Latency lower bound: one point-to-point latency per pass."""
    if l_min_us <= 0:
        raise ValueError("l_min_us must be positive")
    return op.passes * l_min_us


def simulate_ring(op: CollectiveOp, participants, message_bytes: int,
                  t: Topology, profile: CalibrationProfile,
                  hop_latency_us: float = DEFAULT_MIN_LATENCY_US,
                  ) -> CollectiveEstimate:
    """Estimate latency of a ring schedule over the given participant order.

    Each of passes x (n-1) steps moves a 1/n chunk over the slowest ring
    edge, where edge bandwidth is the zero-copy kernel unidirectional
    prediction along the widest route.
    """
    participants = list(participants)
    if len(participants) < 2:
        raise ValueError("need at least two participants")
    if len(set(participants)) != len(participants):
        raise ValueError("duplicate participants")
    if message_bytes <= 0:
        raise ValueError("message_bytes must be positive")
    if hop_latency_us <= 0:
        raise ValueError("hop_latency_us must be positive")

    n = len(participants)
    edge_bws = []
    for i in range(n):
        a, b = participants[i], participants[(i + 1) % n]
        if a == b:  # n == 2 wraps back onto the same edge
            continue
        spec = TransferSpec(src=a, dst=b, size_bytes=message_bytes,
                            alloc="device", api="zero_copy_kernel")
        pred = predict_p2p(spec, t, profile)
        # bidirectional prediction; one ring step drives one direction
        edge_bws.append(pred.bandwidth_gbps / 2)
    min_bw_gbps = min(edge_bws)

    steps = op.passes * (n - 1)
    chunk_bytes = message_bytes / n
    step_transfer_us = chunk_bytes / (min_bw_gbps * 1e9) * 1e6
    per_step_us = hop_latency_us + step_transfer_us
    estimate = steps * per_step_us
    return CollectiveEstimate(
        lower_bound_us=lower_bound(op, hop_latency_us),
        participants=n,
        message_bytes=message_bytes,
        ring_estimate_us=estimate,
        steps=steps,
        step_latency_us=hop_latency_us,
        step_transfer_us=step_transfer_us,
        rule="ring schedule over given participant order; modeling choice, "
             "for shape comparison only")


# -- backend comparison ------------------------------------------------

@dataclass(frozen=True)
class BackendSeries:
    """Measured latencies keyed by (collective name, participant count)."""
    label: str
    latency_us: dict


@dataclass(frozen=True)
class ComparisonRow:
    collective: str
    participants: int
    winner: str  # backend label or "tie"
    ratio: float  # slower / faster latency (1.0 for ties)


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple
    per_collective_winner: dict  # collective -> label or "tie"
    overall_winner: str
    exceptions: tuple  # collectives whose winner differs from overall


class GridMismatchError(ValueError):
    pass


def compare_backends(a: BackendSeries, b: BackendSeries) -> ComparisonReport:
    """Per grid point, the lower-latency backend, plus exception summary."""
    grid_a, grid_b = set(a.latency_us), set(b.latency_us)
    if grid_a != grid_b:
        only_a = sorted(grid_a - grid_b)
        only_b = sorted(grid_b - grid_a)
        raise GridMismatchError(
            f"series cover different grids; only in {a.label}: {only_a}, "
            f"only in {b.label}: {only_b}")

    rows = []
    wins: dict = {}
    for key in sorted(grid_a):
        coll, n = key
        la, lb = a.latency_us[key], b.latency_us[key]
        if la == lb:
            winner, ratio = "tie", 1.0
        elif la < lb:
            winner, ratio = a.label, lb / la
        else:
            winner, ratio = b.label, la / lb
        rows.append(ComparisonRow(coll, n, winner, ratio))
        wins.setdefault(coll, []).append(winner)

    per_coll = {}
    for coll, winners in wins.items():
        counts = {label: winners.count(label) for label in (a.label, b.label)}
        if counts[a.label] > counts[b.label]:
            per_coll[coll] = a.label
        elif counts[b.label] > counts[a.label]:
            per_coll[coll] = b.label
        else:
            per_coll[coll] = "tie"

    tally = {a.label: 0, b.label: 0}
    for winner in per_coll.values():
        if winner in tally:
            tally[winner] += 1
    if tally[a.label] == tally[b.label]:
        overall = "tie"
    else:
        overall = max(tally, key=tally.get)
    exceptions = tuple(sorted(
        coll for coll, winner in per_coll.items()
        if overall != "tie" and winner not in (overall, "tie")))
    return ComparisonReport(tuple(rows), per_coll, overall, exceptions)
