import dataclasses

import pytest

import fabricscope as fs
from fabricscope.measurements import (CSV_HEADER, CsvFormatError, PlanError,
                                      detect_anomalies, emit_plan, ingest_csv,
                                      ingest_csv_file, serialize_csv, validate)

HEADER = ",".join(CSV_HEADER)


def load_fixture(name):
    return ingest_csv_file(fs.fixture_path(name))


def paper_records():
    records = []
    for name in ("paper/p2p.csv", "paper/p2p_latency.csv", "paper/h2d.csv",
                 "paper/multi_gpu_stream.csv"):
        records += load_fixture(name)
    return records


# -- ingestion -----------------------------------------------------------

def test_ingest_single_row():
    doc = (HEADER + "\n"
           "p2p,gcd,0,gcd,1,1073741824,bandwidth_unidir_gbps,50,"
           "HSA_ENABLE_PEER_SDMA=1\n")
    records = ingest_csv(doc)
    assert len(records) == 1
    r = records[0]
    assert (r.benchmark, r.src_id, r.dst_id) == ("p2p", 0, 1)
    assert r.value == 50.0
    assert r.env_dict == {"HSA_ENABLE_PEER_SDMA": "1"}
    assert r.line == 2


def test_ingest_empty_document():
    assert ingest_csv("") == []
    assert ingest_csv(HEADER + "\n") == []


def test_ingest_negative_value_reports_line():
    doc = (HEADER + "\n"
           "p2p,gcd,0,gcd,1,1024,bandwidth_unidir_gbps,50,\n"
           "p2p,gcd,0,gcd,2,1024,bandwidth_unidir_gbps,-1,\n")
    with pytest.raises(CsvFormatError, match="line 3"):
        ingest_csv(doc)


def test_ingest_rejects_bad_header():
    with pytest.raises(CsvFormatError, match="line 1"):
        ingest_csv("a,b,c\n1,2,3\n")


def test_ingest_rejects_unknown_metric():
    doc = HEADER + "\np2p,gcd,0,gcd,1,1024,flops,50,\n"
    with pytest.raises(CsvFormatError, match="unknown metric"):
        ingest_csv(doc)


def test_ingest_rejects_unknown_env_key():
    doc = HEADER + "\np2p,gcd,0,gcd,1,1024,latency_us,5,FOO=1\n"
    with pytest.raises(CsvFormatError, match="unrecognized env key"):
        ingest_csv(doc)


def test_ingest_accepts_x_prefixed_env():
    doc = HEADER + "\np2p,gcd,0,gcd,1,1024,latency_us,5,x-site=lumi\n"
    assert ingest_csv(doc)[0].env_dict == {"x-site": "lumi"}


def test_round_trip_identity():
    records = paper_records()
    again = ingest_csv(serialize_csv(records))
    strip = lambda r: dataclasses.replace(r, line=None)
    assert [strip(r) for r in again] == [strip(r) for r in records]


# -- plans ----------------------------------------------------------------

def test_plan_p2p_covers_all_pairs_both_sdma(topo):
    plan = emit_plan("p2p", topo)
    assert len(plan.cases) == 28 * 2
    pairs = {(c.spec["src"], c.spec["dst"], c.spec["sdma"])
             for c in plan.cases}
    assert len(pairs) == 56
    manifest = plan.to_manifest()
    assert manifest["suite"] == "p2p"
    assert all(case["repetitions"] == 100 for case in manifest["cases"])
    assert all(case["sizes"][0] == 256 and case["sizes"][-1] == 8 * 10**9
               for case in manifest["cases"])


def test_plan_cpu_gpu_cases(topo):
    plan = emit_plan("cpu_gpu", topo)
    names = {c.name for c in plan.cases}
    assert {"h2d_pageable", "h2d_pinned", "h2d_managed_zerocopy",
            "h2d_managed_migration"} <= names
    xnack = {c.name: dict(c.env).get("HSA_XNACK") for c in plan.cases}
    assert xnack["h2d_managed_zerocopy"] == "0"
    assert xnack["h2d_managed_migration"] == "1"
    for c in plan.cases:
        assert c.sizes[0] == 4 * 1024
        assert c.sizes[-1] == 10**9


def test_plan_multi_gpu_stream_placements(topo):
    plan = emit_plan("multi_gpu_stream", topo)
    visible = [dict(c.env)["HIP_VISIBLE_DEVICES"] for c in plan.cases]
    assert "0" in visible
    assert "0,1" in visible      # same-GPU pair
    assert "0,2" in visible      # spread pair
    assert len([v for v in visible if len(v.split(",")) == 8]) == 1


def test_plan_collectives_grid(topo):
    plan = emit_plan("collectives", topo)
    # 2 backends x 5 collectives x participants 2..8
    assert len(plan.cases) == 2 * 5 * 7
    assert all(c.sizes == (1024 * 1024,) for c in plan.cases)


def test_plan_unknown_suite(topo):
    with pytest.raises(PlanError):
        emit_plan("warp_drive", topo)


# -- validation -------------------------------------------------------------

def test_validate_paper_fixtures_all_pass(topo, profile):
    report = validate(paper_records(), topo, profile)
    verdicts = {v.verdict for v in report.verdicts}
    assert not report.failures
    unmodeled = [v for v in report.verdicts if v.verdict == "unmodeled"]
    assert [v.record.benchmark for v in unmodeled] == ["h2d_pageable"]
    assert verdicts == {"pass", "unmodeled"}


def test_validate_pass_cases(topo, profile):
    doc = (HEADER + "\n"
           "p2p,gcd,0,gcd,2,1073741824,bandwidth_unidir_gbps,37.5,"
           "HSA_ENABLE_PEER_SDMA=1\n"
           "p2p,gcd,0,gcd,1,1073741824,bandwidth_unidir_gbps,50,"
           "HSA_ENABLE_PEER_SDMA=1\n")
    report = validate(ingest_csv(doc), topo, profile)
    assert [v.verdict for v in report.verdicts] == ["pass", "pass"]


def test_validate_fail_case(topo, profile):
    doc = (HEADER + "\n"
           "p2p,gcd,0,gcd,1,1073741824,bandwidth_unidir_gbps,200,"
           "HSA_ENABLE_PEER_SDMA=1\n")
    report = validate(ingest_csv(doc), topo, profile)
    v = report.verdicts[0]
    assert v.verdict == "fail"
    assert v.predicted == 50.0


def test_validate_order_independent(topo, profile):
    records = paper_records()
    fwd = validate(records, topo, profile)
    rev = validate(list(reversed(records)), topo, profile)
    by_line = lambda rep: sorted((v.record.line, v.verdict)
                                 for v in rep.verdicts)
    assert by_line(fwd) == by_line(rev)


def test_validate_latency_ordering_failure(topo, profile):
    # single-link pair slower than quad pair breaks A < B ordering
    doc = (HEADER + "\n"
           "p2p_latency,gcd,0,gcd,2,16,latency_us,20,\n"
           "p2p_latency,gcd,0,gcd,1,16,latency_us,10,\n")
    report = validate(ingest_csv(doc), topo, profile)
    assert all(v.verdict == "fail" for v in report.verdicts)


def test_validate_mpi_interval(topo, profile):
    # zero-copy unidir on quad = 87; interval [0.85, 0.90] x 87
    doc = (HEADER + "\n"
           "mpi_p2p,gcd,0,gcd,1,1073741824,bandwidth_unidir_gbps,76,"
           "HSA_ENABLE_SDMA=0\n")
    report = validate(ingest_csv(doc), topo, profile)
    assert report.verdicts[0].verdict == "pass"


# -- anomaly signatures --------------------------------------------------

def anomaly_names(findings, status="detected"):
    return {f.name for f in findings if f.status == status}


def test_paper_fixture_anomalies(topo):
    findings = detect_anomalies(paper_records(), topo)
    assert anomaly_names(findings) == {"sdma_capped", "numa_non_scaling",
                                       "routing_outlier"}
    for f in findings:
        assert f.evidence


def test_healthy_fixture_no_anomalies(topo):
    findings = detect_anomalies(load_fixture("synthetic/healthy.csv"), topo)
    assert findings == []


def test_sdma_capped_not_fired_on_scaling_links(topo):
    doc = (HEADER + "\n"
           "p2p,gcd,0,gcd,1,1073741824,bandwidth_unidir_gbps,150,\n"
           "p2p,gcd,0,gcd,6,1073741824,bandwidth_unidir_gbps,75,\n")
    findings = detect_anomalies(ingest_csv(doc), topo)
    assert anomaly_names(findings) == set()


def test_sdma_capped_inconclusive_without_dual_coverage(topo):
    doc = (HEADER + "\n"
           "p2p,gcd,0,gcd,1,1073741824,bandwidth_unidir_gbps,50,\n")
    findings = detect_anomalies(ingest_csv(doc), topo)
    sdma = [f for f in findings if f.name == "sdma_capped"]
    assert sdma and sdma[0].status == "inconclusive"
    assert "dual" in sdma[0].detail


def test_routing_outlier_inconclusive_when_pairs_missing(topo):
    doc = (HEADER + "\n"
           "p2p_latency,gcd,0,gcd,1,16,latency_us,10.5,\n")
    findings = detect_anomalies(ingest_csv(doc), topo)
    routing = [f for f in findings if f.name == "routing_outlier"]
    assert routing and routing[0].status == "inconclusive"
    assert "(1, 7)" in routing[0].detail
