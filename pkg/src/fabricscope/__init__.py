"""Topology-aware performance model for MI250X-class multi-GPU nodes."""

from importlib import resources

from .topology import (Device, Link, Topology, TopologyError,
                       UnknownDeviceError, default_topology, load_topology,
                       load_topology_file)
from .routing import (PairClassification, Route, RoutingError,
                      all_pairs_matrix, classify_pair, mismatch_pairs,
                      shortest_hop_route, widest_route)
from .xfer_model import (CalibrationProfile, MovementError, PerfPrediction,
                         PredictionError, TransferSpec, classify_latency_tier,
                         default_profile, load_profile, load_profile_file,
                         predict_h2d, predict_multi_gpu, predict_p2p,
                         resolve_movement, stream_bandwidth)
from .collectives import (BackendSeries, CollectiveEstimate, CollectiveOp,
                          ComparisonReport, GridMismatchError, collective_op,
                          compare_backends, lower_bound, simulate_ring)
from .measurements import (AnomalyFinding, BenchmarkPlan, CsvFormatError,
                           MeasurementRecord, RecordVerdict, ValidationReport,
                           detect_anomalies, emit_plan, ingest_csv,
                           ingest_csv_file, serialize_csv, validate)

__version__ = "0.1.0"


def fixture_path(relative: str) -> str:
    """Absolute path of a bundled fixture, e.g. fixture_path('paper/p2p.csv')."""
    return str(resources.files("fabricscope").joinpath("fixtures", relative))
