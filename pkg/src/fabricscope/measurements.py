"""Benchmark plans, measurement ingestion, model validation, anomaly checks.

Plans are declarative manifests of what to run on real hardware.
Measurements come back as CSV rows which are validated against the
transfer model; known anomaly signatures (SDMA cap, NUMA non-scaling,
routing outliers) are detected from the raw records.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass, field
from typing import Optional

from . import xfer_model
from .topology import Topology
from .xfer_model import (CalibrationProfile, PerfPrediction, TransferSpec,
                         classify_latency_tier, predict_h2d, predict_multi_gpu,
                         predict_p2p)

CSV_HEADER = ["benchmark", "src_kind", "src_id", "dst_kind", "dst_id",
              "size_bytes", "metric", "value", "env"]

METRICS = ("bandwidth_unidir_gbps", "bandwidth_bidir_gbps", "latency_us")
PLACEMENT_KINDS = ("gcd", "numa", "host")

RECOGNIZED_ENV_KEYS = ("HSA_ENABLE_SDMA", "HSA_ENABLE_PEER_SDMA", "HSA_XNACK",
                       "HIP_VISIBLE_DEVICES", "MPICH_GPU_SUPPORT_ENABLED")

SUITES = ("cpu_gpu", "p2p", "mpi_p2p", "collectives", "multi_gpu_stream")

DEFAULT_REPETITIONS = 100
DEFAULT_TOLERANCE = 0.10


class CsvFormatError(ValueError):
    def __init__(self, line: int, detail: str):
        self.line = line
        super().__init__(f"line {line}: {detail}")


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class MeasurementRecord:
    """One ingested benchmark observation."""
    benchmark: str
    src_kind: str
    src_id: int
    dst_kind: str
    dst_id: int
    size_bytes: int
    metric: str
    value: float
    env: tuple = ()  # ordered (key, value) pairs
    line: Optional[int] = None

    @property
    def env_dict(self) -> dict:
        return dict(self.env)

    def env_flag(self, key: str, default: bool) -> bool:
        raw = self.env_dict.get(key)
        if raw is None:
            return default
        return raw not in ("0", "false", "off")


def _parse_env(text: str, line: int) -> tuple:
    pairs = []
    if not text:
        return ()
    for chunk in text.split(";"):
        if "=" not in chunk:
            raise CsvFormatError(line, f"malformed env entry {chunk!r}")
        key, value = chunk.split("=", 1)
        if key not in RECOGNIZED_ENV_KEYS and not key.startswith("x-"):
            raise CsvFormatError(line, f"unrecognized env key {key!r}")
        pairs.append((key, value))
    return tuple(pairs)


def ingest_csv(document: str) -> list[MeasurementRecord]:
    """Parse and validate a measurement CSV, keeping source line numbers."""
    reader = csv.reader(io.StringIO(document))
    rows = list(reader)
    if not rows:
        return []
    if rows[0] != CSV_HEADER:
        raise CsvFormatError(1, f"header must be {','.join(CSV_HEADER)}")
    records = []
    for offset, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise CsvFormatError(offset, f"expected {len(CSV_HEADER)} fields, "
                                         f"got {len(row)}")
        (bench, src_kind, src_id, dst_kind, dst_id,
         size_bytes, metric, value, env) = row
        for kind in (src_kind, dst_kind):
            if kind not in PLACEMENT_KINDS:
                raise CsvFormatError(offset, f"unknown placement kind {kind!r}")
        if metric not in METRICS:
            raise CsvFormatError(offset, f"unknown metric {metric!r}")
        try:
            src_id_i, dst_id_i = int(src_id), int(dst_id)
            size_i = int(size_bytes)
            value_f = float(value)
        except ValueError as exc:
            raise CsvFormatError(offset, f"non-numeric field: {exc}") from None
        if value_f <= 0:
            raise CsvFormatError(offset, f"value must be positive, got {value_f}")
        if size_i <= 0:
            raise CsvFormatError(offset, f"size_bytes must be positive, got {size_i}")
        records.append(MeasurementRecord(
            bench, src_kind, src_id_i, dst_kind, dst_id_i, size_i,
            metric, value_f, _parse_env(env, offset), line=offset))
    return records


def ingest_csv_file(path: str) -> list[MeasurementRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        return ingest_csv(fh.read())


def serialize_csv(records) -> str:
    """Inverse of ingest_csv (modulo line numbers)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        env = ";".join(f"{k}={v}" for k, v in r.env)
        writer.writerow([r.benchmark, r.src_kind, r.src_id, r.dst_kind,
                         r.dst_id, r.size_bytes, r.metric,
                         repr(r.value), env])
    return out.getvalue()


# -- benchmark plans ---------------------------------------------------

def _size_sweep(lo: int, hi: int) -> list[int]:
    sizes = []
    size = lo
    while size < hi:
        sizes.append(size)
        size *= 2
    sizes.append(hi)
    return sizes

CPU_GPU_SIZES = _size_sweep(4 * 1024, 10**9)          # 4 KB .. 1 GB
P2P_SIZES = _size_sweep(256, 8 * 10**9)               # 256 B .. 8 GB
COLLECTIVE_MESSAGE_BYTES = 1024 * 1024                # 1 MiB
STREAM_BUFFER_BYTES = 8 * 10**9


@dataclass(frozen=True)
class PlanCase:
    name: str
    spec: dict            # TransferSpec-shaped fields, or collective fields
    sizes: tuple
    env: tuple = ()       # ordered (key, value) pairs
    repetitions: int = DEFAULT_REPETITIONS


@dataclass(frozen=True)
class BenchmarkPlan:
    suite: str
    cases: tuple

    def to_manifest(self) -> dict:
        return {
            "suite": self.suite,
            "cases": [
                {"name": c.name, **c.spec, "sizes": list(c.sizes),
                 "env": dict(c.env), "repetitions": c.repetitions}
                for c in self.cases
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_manifest(), indent=2)


def _gcd_pairs(t: Topology) -> list[tuple[int, int]]:
    gcds = t.gcd_ids
    return [(a, b) for i, a in enumerate(gcds) for b in gcds[i + 1:]]


def emit_plan(suite: str, t: Topology) -> BenchmarkPlan:
    """Enumerate the benchmark cases for one suite as a manifest."""
    if suite not in SUITES:
        raise PlanError(f"unknown suite {suite!r}; expected one of {SUITES}")
    cases: list[PlanCase] = []
    if suite == "cpu_gpu":
        gcd0 = t.gcd_ids[0]
        numa = t.numa_of(gcd0)
        base = {"src": "host", "dst": gcd0, "numa_domain": numa}
        cases = [
            PlanCase("h2d_pageable",
                     {**base, "alloc": "pageable", "api": "explicit_copy"},
                     tuple(CPU_GPU_SIZES)),
            PlanCase("h2d_pinned",
                     {**base, "alloc": "pinned_noncoherent",
                      "api": "explicit_copy"},
                     tuple(CPU_GPU_SIZES)),
            PlanCase("h2d_managed_zerocopy",
                     {**base, "alloc": "managed", "api": "zero_copy_kernel"},
                     tuple(CPU_GPU_SIZES), env=(("HSA_XNACK", "0"),)),
            PlanCase("h2d_managed_migration",
                     {**base, "alloc": "managed", "api": "page_migration"},
                     tuple(CPU_GPU_SIZES), env=(("HSA_XNACK", "1"),)),
            PlanCase("h2d_pinned_zerocopy_stream",
                     {**base, "alloc": "pinned_coherent",
                      "api": "zero_copy_kernel"},
                     tuple(CPU_GPU_SIZES)),
        ]
    elif suite == "p2p":
        for a, b in _gcd_pairs(t):
            for sdma in (True, False):
                env = (("HSA_ENABLE_PEER_SDMA", "1" if sdma else "0"),)
                cases.append(PlanCase(
                    f"p2p_{a}_{b}_sdma{int(sdma)}",
                    {"src": a, "dst": b, "alloc": "device",
                     "api": "explicit_copy", "sdma": sdma},
                    tuple(P2P_SIZES), env=env))
    elif suite == "mpi_p2p":
        gcd0 = t.gcd_ids[0]
        for b in t.gcd_ids:
            if b == gcd0:
                continue
            for sdma in (True, False):
                env = (("HSA_ENABLE_SDMA", "1" if sdma else "0"),
                       ("MPICH_GPU_SUPPORT_ENABLED", "1"))
                cases.append(PlanCase(
                    f"mpi_p2p_{gcd0}_{b}_sdma{int(sdma)}",
                    {"src": gcd0, "dst": b, "alloc": "device",
                     "api": "mpi_p2p", "sdma": sdma},
                    tuple(P2P_SIZES), env=env))
    elif suite == "collectives":
        from .collectives import PASS_COUNTS
        for backend in ("mpi", "rccl"):
            for coll in sorted(PASS_COUNTS):
                for n in range(2, len(t.gcd_ids) + 1):
                    cases.append(PlanCase(
                        f"{backend}_{coll}_n{n}",
                        {"collective": coll, "backend": backend,
                         "participants": t.gcd_ids[:n]},
                        (COLLECTIVE_MESSAGE_BYTES,)))
    else:  # multi_gpu_stream
        gcds = t.gcd_ids
        spread = [g for g in gcds if g % 2 == 0]
        groups = [("1gcd", gcds[:1]),
                  ("2gcd_same_gpu", gcds[:2]),
                  ("2gcd_spread", spread[:2]),
                  ("4gcd_spread", spread[:4]),
                  ("8gcd", gcds)]
        for name, members in groups:
            env = (("HIP_VISIBLE_DEVICES", ",".join(map(str, members))),)
            cases.append(PlanCase(
                f"multi_gpu_stream_{name}",
                {"src": "host", "dst": list(members),
                 "alloc": "pinned_noncoherent", "api": "zero_copy_kernel",
                 "numa_domains": sorted({t.numa_of(g) for g in members})},
                (STREAM_BUFFER_BYTES,), env=env))
    return BenchmarkPlan(suite, tuple(cases))


# -- validation --------------------------------------------------------

@dataclass(frozen=True)
class RecordVerdict:
    record: MeasurementRecord
    verdict: str                       # "pass" | "fail" | "unmodeled"
    predicted: Optional[float] = None
    relative_error: Optional[float] = None
    rule: str = ""


@dataclass(frozen=True)
class AnomalyFinding:
    name: str
    status: str                        # "detected" | "inconclusive"
    detail: str
    evidence: tuple = ()               # the records supporting the finding


@dataclass(frozen=True)
class ValidationReport:
    verdicts: tuple
    anomalies: tuple

    @property
    def failures(self) -> list:
        return [v for v in self.verdicts if v.verdict == "fail"]


def _visible_gcds(record: MeasurementRecord) -> Optional[list[int]]:
    raw = record.env_dict.get("HIP_VISIBLE_DEVICES")
    if raw is None:
        return None
    return [int(x) for x in raw.split(",") if x != ""]


def _predict_for_record(record: MeasurementRecord, t: Topology,
                        profile: CalibrationProfile) -> Optional[PerfPrediction]:
    """Model prediction for one record, or None when unmodeled.

    The benchmark name selects the interface: 'pageable'/'pinned'/
    'managed' for host transfers, 'mpi' for MPI point-to-point; env
    carries SDMA/XNACK settings and the visible-device set.
    """
    bench = record.benchmark.lower()
    if record.metric == "latency_us":
        return None  # latency validated by tier ordering, not point values

    if record.src_kind == "host" and record.dst_kind == "gcd":
        visible = _visible_gcds(record)
        if visible is not None and record.metric == "bandwidth_bidir_gbps":
            return predict_multi_gpu(visible, t, profile)
        xnack = record.env_flag("HSA_XNACK", False)
        if "pageable" in bench:
            alloc, api = "pageable", "explicit_copy"
        elif "managed" in bench:
            alloc = "managed"
            api = "page_migration" if xnack else "zero_copy_kernel"
        elif "pinned" in bench:
            alloc, api = "pinned_noncoherent", "explicit_copy"
        else:
            return None
        spec = TransferSpec(src="host", dst=record.dst_id,
                            size_bytes=record.size_bytes, alloc=alloc,
                            api=api, xnack=xnack)
        return predict_h2d(spec, profile,
                           link_cap_gbps=t.tier_gbps.get("cpu", 36.0))

    if record.src_kind == "gcd" and record.dst_kind == "gcd":
        if "mpi" in bench:
            api = "mpi_p2p"
            sdma = record.env_flag("HSA_ENABLE_SDMA", True)
        elif record.metric == "bandwidth_bidir_gbps":
            api, sdma = "zero_copy_kernel", True
        else:
            api = "explicit_copy"
            sdma = record.env_flag("HSA_ENABLE_PEER_SDMA", True)
        spec = TransferSpec(src=record.src_id, dst=record.dst_id,
                            size_bytes=record.size_bytes, alloc="device",
                            api=api, sdma=sdma)
        return predict_p2p(spec, t, profile)
    return None


def _latency_verdicts(records, t: Topology) -> list[RecordVerdict]:
    """Validate latency records by tier median ordering (A < B < D)."""
    by_tier: dict = {}
    tiers: dict = {}
    for r in records:
        tier = classify_latency_tier(t, r.src_id, r.dst_id)
        tiers[id(r)] = tier
        by_tier.setdefault(tier, []).append(r.value)
    medians = {tier: statistics.median(vals) for tier, vals in by_tier.items()}
    ordering = ("A", "B", "D")
    violating = set()
    present = [tier for tier in ordering if tier in medians]
    for lo, hi in zip(present, present[1:]):
        if not medians[lo] < medians[hi]:
            violating.update((lo, hi))
    out = []
    for r in records:
        tier = tiers[id(r)]
        if tier == "C":
            out.append(RecordVerdict(r, "pass", rule="tier C: unconstrained"))
        elif tier in violating:
            out.append(RecordVerdict(
                r, "fail",
                rule=f"tier {tier} median violates A < B < D ordering"))
        else:
            out.append(RecordVerdict(
                r, "pass", rule=f"tier {tier} median ordering holds"))
    return out


def validate(records, t: Topology, profile: CalibrationProfile,
             tolerance: float = DEFAULT_TOLERANCE) -> ValidationReport:
    """Match each record to the model and compare within tolerance."""
    records = list(records)
    latency = [r for r in records
               if r.metric == "latency_us"
               and r.src_kind == "gcd" and r.dst_kind == "gcd"]
    latency_verdicts = {id(v.record): v for v in _latency_verdicts(latency, t)} \
        if latency else {}

    verdicts = []
    for r in records:
        if id(r) in latency_verdicts:
            verdicts.append(latency_verdicts[id(r)])
            continue
        pred = _predict_for_record(r, t, profile)
        if pred is None:
            verdicts.append(RecordVerdict(r, "unmodeled",
                                          rule="no model rule applies"))
            continue
        if pred.unstable or pred.bandwidth_gbps is None:
            verdicts.append(RecordVerdict(
                r, "unmodeled", rule=pred.rule))
            continue
        if pred.bandwidth_range_gbps is not None:
            lo, hi = pred.bandwidth_range_gbps
            nearest = min(max(r.value, lo), hi)
        else:
            nearest = pred.bandwidth_gbps
        rel = abs(r.value - nearest) / nearest
        verdicts.append(RecordVerdict(
            r, "pass" if rel <= tolerance else "fail",
            predicted=pred.bandwidth_gbps, relative_error=rel, rule=pred.rule))
    anomalies = tuple(detect_anomalies(records, t))
    return ValidationReport(tuple(verdicts), anomalies)


# -- anomaly signatures -------------------------------------------------

def _link_tier(t: Topology, a: int, b: int) -> Optional[str]:
    link = t.link_between(a, b)
    return None if link is None else link.tier


def detect_anomalies(records, t: Topology) -> list[AnomalyFinding]:
    """Check the known anomaly signatures against raw records."""
    records = list(records)
    findings = []
    findings.append(_sdma_capped(records, t))
    findings.append(_numa_non_scaling(records, t))
    findings.append(_routing_outlier(records, t))
    return [f for f in findings if f is not None]


def _sdma_capped(records, t: Topology) -> Optional[AnomalyFinding]:
    """Explicit-copy bandwidth equal on dual and quad links, far below
    dual capacity: the per-copy SDMA engine ceiling."""
    by_tier: dict = {"dual": [], "quad": []}
    for r in records:
        if (r.metric != "bandwidth_unidir_gbps"
                or r.src_kind != "gcd" or r.dst_kind != "gcd"
                or "mpi" in r.benchmark.lower()
                or not r.env_flag("HSA_ENABLE_PEER_SDMA", True)):
            continue
        tier = _link_tier(t, r.src_id, r.dst_id)
        if tier in by_tier:
            by_tier[tier].append(r)
    missing = [tier for tier, rs in by_tier.items() if not rs]
    relevant = any(rs for rs in by_tier.values())
    if missing:
        if not relevant:
            return None
        return AnomalyFinding(
            "sdma_capped", "inconclusive",
            f"no explicit-copy records on {'/'.join(missing)}-link pairs",
            tuple(by_tier["dual"] + by_tier["quad"]))
    dual = statistics.median(r.value for r in by_tier["dual"])
    quad = statistics.median(r.value for r in by_tier["quad"])
    close = abs(dual - quad) / max(dual, quad) <= 0.10
    ceiling = 0.60 * t.tier_bandwidth("dual")
    if close and dual < ceiling and quad < ceiling:
        return AnomalyFinding(
            "sdma_capped", "detected",
            f"dual-link median {dual:g} and quad-link median {quad:g} GB/s "
            f"are within 10% and both below {ceiling:g} GB/s",
            tuple(by_tier["dual"] + by_tier["quad"]))
    return None


def _numa_non_scaling(records, t: Topology) -> Optional[AnomalyFinding]:
    """Two GCDs of one physical GPU give no aggregate gain over one GCD."""
    singles, same_gpu = [], []
    for r in records:
        visible = _visible_gcds(r)
        if visible is None or r.metric != "bandwidth_bidir_gbps":
            continue
        if len(visible) == 1:
            singles.append(r)
        elif (len(visible) == 2
              and t.device(visible[0]).physical_gpu
              == t.device(visible[1]).physical_gpu):
            same_gpu.append(r)
    if not singles and not same_gpu:
        return None
    if not singles or not same_gpu:
        missing = "single-GCD" if not singles else "same-GPU dual-GCD"
        return AnomalyFinding(
            "numa_non_scaling", "inconclusive",
            f"no {missing} aggregate-bandwidth records",
            tuple(singles + same_gpu))
    one = statistics.median(r.value for r in singles)
    two = statistics.median(r.value for r in same_gpu)
    if abs(two - one) / max(one, two) <= 0.10:
        return AnomalyFinding(
            "numa_non_scaling", "detected",
            f"same-GPU 2-GCD aggregate {two:g} GB/s is within 10% of "
            f"single-GCD {one:g} GB/s",
            tuple(singles + same_gpu))
    return None


def _routing_outlier(records, t: Topology) -> Optional[AnomalyFinding]:
    """Routing-mismatch pairs showing latency far above the matrix median."""
    from .routing import mismatch_pairs
    latency = [r for r in records
               if r.metric == "latency_us"
               and r.src_kind == "gcd" and r.dst_kind == "gcd"]
    if not latency:
        return None
    mismatches = {frozenset(p) for p in mismatch_pairs(t)}
    covered = {frozenset((r.src_id, r.dst_id)) for r in latency}
    missing = mismatches - covered
    if missing:
        pairs = sorted(tuple(sorted(p)) for p in missing)
        return AnomalyFinding(
            "routing_outlier", "inconclusive",
            f"no latency records for mismatch pairs {pairs}", tuple(latency))
    median = statistics.median(r.value for r in latency)
    outliers = [r for r in latency
                if frozenset((r.src_id, r.dst_id)) in mismatches
                and r.value > 1.5 * median]
    if outliers:
        pairs = sorted({tuple(sorted((r.src_id, r.dst_id))) for r in outliers})
        return AnomalyFinding(
            "routing_outlier", "detected",
            f"mismatch pairs {pairs} exceed 1.5x the matrix median "
            f"({median:g} us)", tuple(outliers))
    return None
