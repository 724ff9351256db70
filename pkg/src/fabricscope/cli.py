"""Command-line entry point.

Exit codes: 0 success, 1 validation failures present in the report,
2 usage or input errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from . import collectives, measurements, routing, topology, xfer_model

EXIT_OK = 0
EXIT_VALIDATION_FAILED = 1
EXIT_USAGE = 2


def _render_matrix(mat: np.ndarray, fmt: str, gcds) -> str:
    if fmt == "csv":
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["src", "dst", "value"])
        for i, a in enumerate(gcds):
            for j, b in enumerate(gcds):
                value = mat[i, j]
                if isinstance(value, (np.bool_, bool)):
                    value = str(bool(value)).lower()
                elif isinstance(value, (np.floating, float)):
                    value = f"{float(value):g}"
                writer.writerow([a, b, value])
        return out.getvalue()
    cells = [[_fmt_cell(mat[i, j]) for j in range(mat.shape[1])]
             for i in range(mat.shape[0])]
    width = max(len(str(g)) for g in gcds)
    width = max(width, max(len(c) for row in cells for c in row))
    header = " " * (width + 1) + " ".join(f"{g:>{width}}" for g in gcds)
    lines = [header]
    for g, row in zip(gcds, cells):
        lines.append(f"{g:>{width}} " + " ".join(f"{c:>{width}}" for c in row))
    return "\n".join(lines) + "\n"


def _fmt_cell(value) -> str:
    if isinstance(value, (np.bool_, bool)):
        return "T" if value else "."
    if isinstance(value, (np.floating, float)):
        return f"{float(value):g}"
    return str(value)


def _load_context(args):
    topo = topology.load_topology_file(
        args.topology or topology.default_topology_path())
    profile = xfer_model.load_profile_file(
        args.profile or xfer_model.default_profile_path())
    return topo, profile


def _read_series(label: str, path: str) -> collectives.BackendSeries:
    grid = {}
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"collective", "participants", "latency_us"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain {sorted(required)}")
        for row in reader:
            key = (row["collective"], int(row["participants"]))
            grid[key] = float(row["latency_us"])
    return collectives.BackendSeries(label, grid)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fabricscope",
        description="Topology-aware data-movement performance model for "
                    "MI250X-class multi-GPU nodes")
    parser.add_argument("--topology", help="topology JSON path "
                        "(default: bundled node, or $FABRIC_SCOPE_TOPOLOGY)")
    parser.add_argument("--profile", help="calibration profile JSON path")
    parser.add_argument("--format", choices=("table", "csv"), default="table")
    sub = parser.add_subparsers(dest="command", required=True)

    topo = sub.add_parser("topo", help="topology queries")
    topo_sub = topo.add_subparsers(dest="topo_command", required=True)
    topo_sub.add_parser("validate", help="load and validate the topology")
    matrix = topo_sub.add_parser("matrix", help="all-pairs matrix")
    matrix.add_argument("--metric", choices=routing.MATRIX_METRICS,
                        default="hops")

    route = sub.add_parser("route", help="route between two GCDs")
    route.add_argument("src", type=int)
    route.add_argument("dst", type=int)
    route.add_argument("--objective", choices=("hops", "bandwidth"),
                       default="bandwidth")
    route.add_argument("--max-hops", type=int, default=3)

    predict = sub.add_parser("predict", help="bandwidth predictions")
    predict_sub = predict.add_subparsers(dest="predict_command", required=True)
    h2d = predict_sub.add_parser("h2d")
    h2d.add_argument("--alloc", choices=xfer_model.ALLOC_KINDS, required=True)
    h2d.add_argument("--api", choices=xfer_model.APIS)
    h2d.add_argument("--xnack", action="store_true")
    h2d.add_argument("--size", type=int, default=2**30)
    h2d.add_argument("--gcd", type=int, default=0)
    p2p = predict_sub.add_parser("p2p")
    p2p.add_argument("src", type=int)
    p2p.add_argument("dst", type=int)
    p2p.add_argument("--api", choices=("explicit_copy", "zero_copy_kernel",
                                       "mpi_p2p"), default="explicit_copy")
    p2p.add_argument("--no-sdma", dest="sdma", action="store_false")
    p2p.add_argument("--size", type=int, default=2**30)
    multi = predict_sub.add_parser("multi")
    multi.add_argument("gcds", type=int, nargs="+")

    tier = sub.add_parser("latency-tier", help="ordinal latency tier of a pair")
    tier.add_argument("src", type=int)
    tier.add_argument("dst", type=int)

    coll = sub.add_parser("collective", help="collective estimates")
    coll_sub = coll.add_subparsers(dest="collective_command", required=True)
    bound = coll_sub.add_parser("bound")
    bound.add_argument("op", choices=sorted(collectives.PASS_COUNTS))
    bound.add_argument("--l-min", type=float,
                       default=collectives.DEFAULT_MIN_LATENCY_US)
    simulate = coll_sub.add_parser("simulate")
    simulate.add_argument("op", choices=sorted(collectives.PASS_COUNTS))
    simulate.add_argument("--participants", required=True,
                          help="comma-separated gcd ids")
    simulate.add_argument("--message-bytes", type=int,
                          default=measurements.COLLECTIVE_MESSAGE_BYTES)
    simulate.add_argument("--hop-latency-us", type=float,
                          default=collectives.DEFAULT_MIN_LATENCY_US)
    compare = coll_sub.add_parser("compare")
    compare.add_argument("--series-a", required=True, metavar="LABEL=PATH")
    compare.add_argument("--series-b", required=True, metavar="LABEL=PATH")

    plan = sub.add_parser("plan", help="benchmark plans")
    plan_sub = plan.add_subparsers(dest="plan_command", required=True)
    emit = plan_sub.add_parser("emit")
    emit.add_argument("suite", choices=measurements.SUITES)
    emit.add_argument("-o", "--output", help="write manifest to file")

    ingest = sub.add_parser("ingest", help="parse and echo a measurement CSV")
    ingest.add_argument("data")

    val = sub.add_parser("validate", help="validate measurements against model")
    val.add_argument("--data", required=True)
    val.add_argument("--tolerance", type=float,
                     default=measurements.DEFAULT_TOLERANCE)

    anomalies = sub.add_parser("anomalies", help="run anomaly signatures")
    anomalies.add_argument("--data", required=True)
    return parser


def _cmd_topo(args, topo) -> int:
    if args.topo_command == "validate":
        n_gcd = len(topo.gcd_ids)
        n_links = len([l for l in topo.links if l.tier != "cpu"])
        print(f"topology OK: {n_gcd} GCDs, {len(topo.numa_ids)} NUMA domains, "
              f"{n_links} GCD-GCD links")
        return EXIT_OK
    mat = routing.all_pairs_matrix(topo, args.metric)
    sys.stdout.write(_render_matrix(mat, args.format, topo.gcd_ids))
    return EXIT_OK


def _cmd_route(args, topo) -> int:
    if args.objective == "hops":
        route = routing.shortest_hop_route(topo, args.src, args.dst)
    else:
        route = routing.widest_route(topo, args.src, args.dst, args.max_hops)
    print(str(route))
    return EXIT_OK


def _print_prediction(pred) -> None:
    if pred.unstable or pred.bandwidth_gbps is None:
        print(f"unstable ({pred.rule})")
        return
    if pred.bandwidth_range_gbps is not None:
        lo, hi = pred.bandwidth_range_gbps
        print(f"{lo:g}-{hi:g} GB/s {pred.direction} ({pred.rule})")
    else:
        print(f"{pred.bandwidth_gbps:g} GB/s {pred.direction} ({pred.rule})")
    if pred.route is not None:
        print(f"route: {pred.route}")


def _cmd_predict(args, topo, profile) -> int:
    if args.predict_command == "h2d":
        spec = xfer_model.TransferSpec(
            src="host", dst=args.gcd, size_bytes=args.size,
            alloc=args.alloc, api=args.api, xnack=args.xnack)
        pred = xfer_model.predict_h2d(
            spec, profile, link_cap_gbps=topo.tier_gbps.get("cpu", 36.0))
    elif args.predict_command == "p2p":
        spec = xfer_model.TransferSpec(
            src=args.src, dst=args.dst, size_bytes=args.size,
            alloc="device", api=args.api, sdma=args.sdma)
        pred = xfer_model.predict_p2p(spec, topo, profile)
    else:
        pred = xfer_model.predict_multi_gpu(args.gcds, topo, profile)
    _print_prediction(pred)
    return EXIT_OK


def _cmd_collective(args, topo, profile) -> int:
    if args.collective_command == "bound":
        op = collectives.collective_op(args.op)
        print(f"{collectives.lower_bound(op, args.l_min):g} us "
              f"({op.passes} pass(es) x {args.l_min:g} us)")
        return EXIT_OK
    if args.collective_command == "simulate":
        op = collectives.collective_op(args.op)
        participants = [int(x) for x in args.participants.split(",")]
        est = collectives.simulate_ring(op, participants, args.message_bytes,
                                        topo, profile, args.hop_latency_us)
        print(f"ring estimate: {est.ring_estimate_us:g} us "
              f"({est.steps} steps x ({est.step_latency_us:g} latency + "
              f"{est.step_transfer_us:g} transfer) us)")
        print(f"lower bound:   {est.lower_bound_us:g} us")
        print(f"note: {est.rule}")
        return EXIT_OK
    label_a, path_a = args.series_a.split("=", 1)
    label_b, path_b = args.series_b.split("=", 1)
    report = collectives.compare_backends(_read_series(label_a, path_a),
                                          _read_series(label_b, path_b))
    for row in report.rows:
        print(f"{row.collective:>15} n={row.participants}: {row.winner} "
              f"(x{row.ratio:.2f})")
    print(f"overall winner: {report.overall_winner}")
    if report.exceptions:
        print(f"exceptions: {', '.join(report.exceptions)}")
    return EXIT_OK


def _cmd_validate(args, topo, profile) -> int:
    records = measurements.ingest_csv_file(args.data)
    report = measurements.validate(records, topo, profile, args.tolerance)
    counts = {"pass": 0, "fail": 0, "unmodeled": 0}
    for v in report.verdicts:
        counts[v.verdict] += 1
        r = v.record
        where = f"{r.benchmark} {r.src_kind}{r.src_id}->{r.dst_kind}{r.dst_id}"
        if v.predicted is not None:
            print(f"{v.verdict:>9}  {where}: measured {r.value:g}, "
                  f"predicted {v.predicted:g} "
                  f"(rel err {v.relative_error:.1%})")
        else:
            print(f"{v.verdict:>9}  {where}: measured {r.value:g} ({v.rule})")
    print(f"summary: {counts['pass']} pass, {counts['fail']} fail, "
          f"{counts['unmodeled']} unmodeled")
    _print_anomalies(report.anomalies)
    return EXIT_VALIDATION_FAILED if counts["fail"] else EXIT_OK


def _print_anomalies(findings) -> None:
    if not findings:
        print("anomalies: none")
        return
    print("anomalies:")
    for f in findings:
        lines = sorted(r.line for r in f.evidence if r.line is not None)
        where = f" [csv lines {lines}]" if lines else ""
        print(f"  {f.name} ({f.status}): {f.detail}{where}")


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        topo, profile = _load_context(args)
        if args.command == "topo":
            return _cmd_topo(args, topo)
        if args.command == "route":
            return _cmd_route(args, topo)
        if args.command == "predict":
            return _cmd_predict(args, topo, profile)
        if args.command == "latency-tier":
            print(xfer_model.classify_latency_tier(topo, args.src, args.dst))
            return EXIT_OK
        if args.command == "collective":
            return _cmd_collective(args, topo, profile)
        if args.command == "plan":
            plan = measurements.emit_plan(args.suite, topo)
            text = plan.to_json()
            if args.output:
                with open(args.output, "w", encoding="utf-8") as fh:
                    fh.write(text + "\n")
                print(f"wrote {len(plan.cases)} cases to {args.output}")
            else:
                print(text)
            return EXIT_OK
        if args.command == "ingest":
            records = measurements.ingest_csv_file(args.data)
            sys.stdout.write(measurements.serialize_csv(records))
            return EXIT_OK
        if args.command == "validate":
            return _cmd_validate(args, topo, profile)
        if args.command == "anomalies":
            records = measurements.ingest_csv_file(args.data)
            findings = measurements.detect_anomalies(records, topo)
            _print_anomalies(findings)
            return EXIT_OK
        parser.error(f"unknown command {args.command!r}")
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
