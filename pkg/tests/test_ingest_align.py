from __future__ import annotations

import itertools
import random

import pytest

from services.errors import AlreadyCalibrated, ConflictingTopology, DuplicateCorrelation, InconsistentBeacons, NoBeacons
from simkit.synthesizer import DEVICE_CLOCK_OFFSET_NS, LabeledDataset
from tests.factories import DEVICE, beacon, span
from tracing.calibration import apply_calibration, calibrate
from tracing.codec import write_trace
from tracing.correlation import link_correlations
from tracing.events import Category, Collector, SourceId, TraceEvent
from tracing.ingest import align_events, ingest
from tracing.topology import DeviceRef, TopologyMap, resolve_topology


def test_reference_domain_is_identity() -> None:
    calibration = calibrate([("host", 100, 5_000)], reference_domain="host")
    assert calibration.transform_for("host").apply(123) == 123
    assert "host" not in calibration.transforms


def test_two_beacons_give_offset() -> None:
    calibration = calibrate([("d", 100, 1_100), ("d", 200, 1_200)], estimate_drift=True)
    transform = calibration.transforms["d"]
    assert transform.offset_ns == pytest.approx(1_000.0)
    assert transform.drift == pytest.approx(1.0)


def test_two_beacons_give_drift() -> None:
    calibration = calibrate([("d", 0, 0), ("d", 1_000, 2_000)], estimate_drift=True)
    transform = calibration.transforms["d"]
    assert transform.offset_ns == pytest.approx(0.0, abs=1e-9)
    assert transform.drift == pytest.approx(2.0)


def test_single_beacon_fixes_drift_at_one() -> None:
    transform = calibrate([("d", 10, 510)]).transforms["d"]
    assert transform.drift == 1.0
    assert transform.offset_ns == 500.0


def test_missing_domain_raises() -> None:
    with pytest.raises(NoBeacons):
        calibrate([("d", 10, 510)], domains=["d", "e"])


def test_drift_needs_two_beacons() -> None:
    with pytest.raises(NoBeacons):
        calibrate([("d", 10, 510)], estimate_drift=True)


def test_inconsistent_beacons_raise() -> None:
    with pytest.raises(InconsistentBeacons):
        calibrate([("d", 0, 1_000), ("d", 100, 10_000)], tolerance_ns=1_000.0)


def test_calibrating_twice_is_an_error() -> None:
    events = [span(0, "gemm", 1_000, 10, category=Category.GPU_KERNEL, source=DEVICE)]
    calibration = calibrate([("gpu", 0, 500)])
    once = apply_calibration(events, calibration)
    assert once[0].start_ts == 1_500
    assert once[0].calibrated
    with pytest.raises(AlreadyCalibrated):
        apply_calibration(once, calibration)


def test_align_events_uses_inline_beacons() -> None:
    events = [
        beacon(0, 3_000, 1.0),
        span(1, "gemm", 5_000, 100, category=Category.GPU_KERNEL, source=DEVICE),
        span(2, "run_batch", 2_500, 100),
    ]
    aligned, calibration = align_events(events)
    assert calibration.transforms["gpu"].offset_ns == -2_000.0
    assert [(e.name, e.start_ts) for e in aligned] == [("beacon", 1_000), ("run_batch", 2_500), ("gemm", 3_000)]


def test_no_correlation_ids_give_empty_index() -> None:
    index = link_correlations([span(0, "run_batch", 0, 10)])
    assert index.pairs == {}
    assert index.orphans == []


def test_host_and_kernel_with_same_id_pair_up() -> None:
    host = span(3, "cudaLaunchKernel", 0, 5, category=Category.RUNTIME_API, correlation_id=7)
    kernel = span(4, "gemm", 10, 50, category=Category.GPU_KERNEL, source=DEVICE, correlation_id=7)
    index = link_correlations([kernel, host])
    assert index.pairs == {7: (3, 4)}
    assert index.host_for(4) == 3
    assert index.causality_violations == []


def test_kernel_without_host_is_orphan() -> None:
    kernel = span(0, "gemm", 10, 50, category=Category.GPU_KERNEL, source=DEVICE, correlation_id=9)
    index = link_correlations([kernel])
    assert index.pairs == {}
    assert index.orphans == [0]


def test_duplicate_host_correlation_raises() -> None:
    calls = [
        span(0, "cudaLaunchKernel", 0, 5, category=Category.RUNTIME_API, correlation_id=1),
        span(1, "cudaMemcpyAsync", 9, 5, category=Category.RUNTIME_API, correlation_id=1),
    ]
    with pytest.raises(DuplicateCorrelation):
        link_correlations(calls)


def _collective(event_id: int, args: dict) -> TraceEvent:
    return span(event_id, "allreduce", event_id * 10, 5, category=Category.COLLECTIVE_COMM, source=DEVICE, args=args)


def test_topology_from_hostname_and_device() -> None:
    topology = resolve_topology([_collective(0, {"commHash": "c1", "rank": 1, "hostname": "node-07", "device": 2})])
    assert topology.lookup("c1", 1) == DeviceRef(node="node-07", device="gpu2")
    assert topology.reverse() == {"node-07/gpu2": [("c1", 1)]}


def test_topology_empty_without_collectives() -> None:
    assert len(resolve_topology([span(0, "run_batch", 0, 1)])) == 0


def test_topology_reinsertion_is_idempotent() -> None:
    args = {"commHash": "c1", "rank": 0, "node": "node-01", "device": 0}
    topology = resolve_topology([_collective(0, args), _collective(1, args)])
    assert len(topology) == 1


def test_conflicting_topology_raises() -> None:
    topology = TopologyMap()
    topology.insert("c1", 0, DeviceRef(node="a", device="gpu0"))
    with pytest.raises(ConflictingTopology):
        topology.insert("c1", 0, DeviceRef(node="b", device="gpu0"))


def test_topology_is_order_independent() -> None:
    events = [
        _collective(i, {"commHash": f"c{i % 2}", "rank": i, "node": f"node-{i // 2}", "device": i % 2})
        for i in range(6)
    ]
    reference = resolve_topology(events).entries
    rng = random.Random(3)
    for _ in range(5):
        shuffled = events[:]
        rng.shuffle(shuffled)
        assert resolve_topology(shuffled).entries == reference


def test_ingest_simulated_trace(tmp_path, small_dataset: LabeledDataset) -> None:
    path = write_trace(tmp_path / "trace.json.gz", small_dataset.events)
    result = ingest([path])

    assert result.ok
    assert result.calibration.transforms["gpu"].offset_ns == -DEVICE_CLOCK_OFFSET_NS
    assert all(event.calibrated for event in result.events)
    assert result.correlations.orphans == []
    assert result.correlations.causality_violations == []
    assert len(result.correlations.pairs) == 2 * small_dataset.n_cycles
    assert result.topology.group("tp0") == [0, 1, 2, 3]
    assert result.topology.lookup("tp0", 2) == DeviceRef(node="node-01", device="gpu0")


def test_ingest_merges_files_deterministically(tmp_path) -> None:
    other = SourceId(node="node-01", collector=Collector.APP_TRACER, clock_domain="host")
    first = write_trace(tmp_path / "a.json", [span(0, "run_batch", 100, 10), span(1, "run_batch", 300, 10)])
    second = write_trace(tmp_path / "b.json", [span(0, "run_batch", 200, 10, source=other)])
    merged = ingest([first, second]).events
    assert [(e.event_id, e.start_ts, e.source.node) for e in merged] == [
        (0, 100, "node-00"),
        (1, 200, "node-01"),
        (2, 300, "node-00"),
    ]
    assert [e.event_id for e in ingest([first, second]).events] == [e.event_id for e in merged]


def test_permuted_beacons_give_same_calibration() -> None:
    beacons = [("d", t, t + 700) for t in (0, 50, 90, 400)]
    expected = calibrate(beacons, estimate_drift=True).transforms["d"]
    for order in itertools.permutations(beacons):
        got = calibrate(order, estimate_drift=True).transforms["d"]
        assert got.offset_ns == pytest.approx(expected.offset_ns)
        assert got.drift == pytest.approx(expected.drift)
