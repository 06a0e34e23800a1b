"""Labeled synthetic traces with injected faults."""

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from cycles.segmenter import Stage
from cycles.workload import WorkloadFeatures
from request.suite_config import FaultFamily, FaultSpec, GroundTruthModel
from services.log import Log
from simkit.faults import (
    BURST_RANGE,
    FAULT_EFFECTS,
    PEER_RANK_SHARE,
    active_fault,
    counter_factor,
    label_cycles,
    validate_faults,
)
from tracing.calibration import BEACON_NAME
from tracing.events import Category, Collector, EventKind, SourceId, TraceEvent

NS_PER_S = 1_000_000_000
TRACE_ORIGIN_NS = 1_000_000
# Device clock runs this far ahead of the host clock
DEVICE_CLOCK_OFFSET_NS = 2_500_000
BEACON_EVERY = 500
COMM_HASH = "tp0"

# Constant: the scheduler call must stay the most regular PythonCall span
SCHEDULER_NS = 150_000
DECODE_GAP_NS = 10_000
PREFILL_GAP_NS = (200_000, 400_000)
RUN_SHARE = 0.85
LAUNCH_LEAD_NS = 5_000
LAUNCH_NS = 4_000

# class -> (start offset, duration) as fractions of the nominal cycle latency
CLASS_LAYOUT: dict[str, tuple[float, float]] = {
    "oncpu": (0.0, 0.3),
    "gemm_kernel": (0.02, 0.5),
    "memcpy_h2d": (0.55, 0.05),
    "allreduce": (0.62, 0.1),
    "swap_io": (0.75, 0.02),
}

# metric -> (baseline, noise sd)
COUNTER_BASELINES: dict[str, tuple[float, float]] = {
    "cpu_usage": (45.0, 2.0),
    "frequency": (2600.0, 10.0),
    "gpu_usage": (60.0, 2.0),
    "gpu_clock": (1980.0, 5.0),
    "tx_bytes": (1.2e9, 3e7),
    "pcie_bytes": (8e8, 2e7),
    "bus_util": (35.0, 2.0),
    "page_activity": (120.0, 10.0),
}
PERCENT_METRICS = frozenset({"cpu_usage", "gpu_usage", "bus_util"})


@dataclass
class LabeledDataset:
    events: list[TraceEvent]
    # One flag per cycle, True inside a fault window
    labels: list[bool]
    # Emitted cycle latency in seconds
    latencies: list[float]
    # Noiseless analytic latency in seconds
    nominal: list[float]
    workloads: list[WorkloadFeatures]
    faults: list[FaultSpec] = field(default_factory=list)
    seed: int = 0

    @property
    def n_cycles(self) -> int:
        return len(self.labels)


def analytic_latency(workload: WorkloadFeatures, model: GroundTruthModel) -> float:
    """
    Noiseless cycle latency in seconds.

    Prefill cycles have L_out = 0, so W_kv already covers the prompt.
    """
    t_gpu = model.a * workload.W_kv + model.b * workload.B + model.c
    t_cpu = model.d * workload.B + model.e
    return max(t_gpu, t_cpu) if model.overlap else t_gpu + t_cpu


def _node_of(rank: int, ranks: int, nodes: int) -> tuple[str, int]:
    per_node = max(1, math.ceil(ranks / nodes))
    return f"node-{rank // per_node:02d}", rank % per_node


class _Emitter:
    """Accumulates events with sequential ids and device-clock stamping."""

    def __init__(self, ranks: int, nodes: int) -> None:
        self.events: list[TraceEvent] = []
        self._next_id = 0
        self._next_corr = 1
        self.python = SourceId(node="node-00", collector=Collector.APP_TRACER, clock_domain="host")
        self.kernel_tracer = SourceId(node="node-00", collector=Collector.KERNEL_TRACER, clock_domain="host")
        self.telemetry = SourceId(node="node-00", collector=Collector.TELEMETRY, clock_domain="host")
        self.device = SourceId(node="node-00", collector=Collector.DEVICE_TRACER, clock_domain="gpu")
        self.rank_sources = [
            SourceId(node=_node_of(r, ranks, nodes)[0], collector=Collector.DEVICE_TRACER, clock_domain="gpu")
            for r in range(ranks)
        ]

    def _add(self, **fields: Any) -> TraceEvent:
        event = TraceEvent(event_id=self._next_id, **fields)
        self._next_id += 1
        self.events.append(event)
        return event

    def span(
        self,
        name: str,
        category: Category,
        source: SourceId,
        start: int,
        duration: int,
        track: tuple[int, int],
        args: dict[str, Any] | None = None,
        correlation_id: int | None = None,
    ) -> TraceEvent:
        if source.clock_domain == "gpu":
            start += DEVICE_CLOCK_OFFSET_NS
        return self._add(
            kind=EventKind.SPAN,
            name=name,
            category=category,
            source=source,
            start_ts=start,
            duration=max(0, duration),
            track=track,
            correlation_id=correlation_id,
            args=args or {},
        )

    def launched(
        self,
        api: str,
        name: str,
        category: Category,
        start: int,
        duration: int,
        track: tuple[int, int],
        launch_ns: int = LAUNCH_NS,
    ) -> None:
        """Device span plus the runtime call that issued it, sharing a correlation id."""
        corr = self._next_corr
        self._next_corr += 1
        self.span(api, Category.RUNTIME_API, self.python, start - LAUNCH_LEAD_NS, launch_ns, (1, 4), correlation_id=corr)
        self.span(name, category, self.device, start, duration, track, correlation_id=corr)

    def counter(self, metric: str, ts: int, value: float) -> None:
        self._add(
            kind=EventKind.COUNTER,
            name=metric,
            category=Category.COUNTER_TELEMETRY,
            source=self.telemetry,
            start_ts=ts,
            track=(1, 0),
            args={"value": float(value)},
        )

    def beacon(self, true_ts: int) -> None:
        self._add(
            kind=EventKind.INSTANT,
            name=BEACON_NAME,
            category=Category.COUNTER_TELEMETRY,
            source=self.device,
            start_ts=true_ts + DEVICE_CLOCK_OFFSET_NS,
            track=(100, 0),
            args={"reference_ts": true_ts / 1000},
        )


def _placement(
    event_class: str, run_start: int, base_ns: int, extra_ns: int, stretch: float = 1.0
) -> tuple[int, int]:
    offset, share = CLASS_LAYOUT[event_class]
    return run_start + int(offset * base_ns), int(share * base_ns * stretch) + extra_ns


def _counter_value(metric: str, rng: np.random.Generator, fault: FaultSpec | None) -> float:
    base, sd = COUNTER_BASELINES[metric]
    value = base + rng.normal(0.0, sd)
    if fault is not None:
        effect = FAULT_EFFECTS[fault.family]
        if effect.counter == metric:
            value *= counter_factor(fault.severity, effect.direction)
    if metric in PERCENT_METRICS:
        value = min(value, 100.0)
    return max(value, 0.0)


def synthesize_trace(
    workloads: Sequence[WorkloadFeatures],
    ground_truth: GroundTruthModel | None = None,
    faults: Sequence[FaultSpec] = (),
    seed: int = 0,
    ranks: int = 4,
    nodes: int = 2,
) -> LabeledDataset:
    """
    Emit a full multi-source trace for a workload sequence.

    Each cycle is a scheduler call (the anchor), a ``run_batch`` span
    carrying the workload args, and a ``process_batch_result`` span; the
    two model phases add up to the cycle latency exactly. Inside them sit
    the per-class spans (oncpu, gemm_kernel, memcpy_h2d, one allreduce per
    rank, swap_io), stamped on their own clocks, plus one sample per
    counter metric at the cycle start. A fault adds
    ``(severity - 1) x nominal`` to its target class and scales its
    signature counter. A host-wide fault (CpuFreqDrop) also stretches the
    remaining host-side spans, swap_io and the runtime launch calls, by
    the severity factor.

    Parameters
    ----------
    workloads : Sequence[WorkloadFeatures]
        One entry per cycle, typically from ``generate_workload``.
    ground_truth : GroundTruthModel | None, optional
        Latency model; defaults apply when omitted.
    faults : Sequence[FaultSpec], optional
        Non-overlapping fault windows in cycle indices.
    seed : int, optional
        Generator seed. Same inputs and seed give identical events.
    ranks, nodes : int, optional
        Collective group size and the nodes it spans.

    Returns
    -------
    LabeledDataset
        Events in emission order plus per-cycle labels and latencies.

    Raises
    ------
    ConfigConflict, UnlabeledEffect
        From ``validate_faults``.
    """
    model = ground_truth or GroundTruthModel()
    faults = list(faults)
    n = len(workloads)
    validate_faults(faults, max(n, 1), ranks)
    rng = np.random.default_rng(seed)
    emit = _Emitter(ranks, nodes)

    latencies: list[float] = []
    nominal: list[float] = []
    cursor = TRACE_ORIGIN_NS

    for i, workload in enumerate(workloads):
        prefill = workload.stage is Stage.PREFILL
        gap = int(rng.integers(*PREFILL_GAP_NS)) if prefill else DECODE_GAP_NS
        analytic = analytic_latency(workload, model)
        base_ns = int(round(analytic * math.exp(rng.normal(0.0, model.noise)) * NS_PER_S))

        fault = active_fault(faults, i)
        extra_ns = 0
        if fault is not None:
            extra_ns = int(round((fault.severity - 1.0) * base_ns))
            if FAULT_EFFECTS[fault.family].bursty:
                extra_ns = int(round(extra_ns * rng.uniform(*BURST_RANGE)))
        latency_ns = base_ns + extra_ns

        anchor_start = cursor + gap
        if i % BEACON_EVERY == 0:
            emit.beacon(anchor_start)
        for metric in COUNTER_BASELINES:
            emit.counter(metric, anchor_start, _counter_value(metric, rng, fault))

        emit.span("get_next_batch_to_run", Category.PYTHON_CALL, emit.python, anchor_start, SCHEDULER_NS, (1, 1))
        run_start = anchor_start + SCHEDULER_NS
        run_ns = int(round(RUN_SHARE * latency_ns))
        process_ns = latency_ns - run_ns
        emit.span(
            "run_batch",
            Category.PYTHON_CALL,
            emit.python,
            run_start,
            run_ns,
            (1, 1),
            args={
                "batch_size": workload.B,
                "input_len": workload.L_in,
                "output_len": workload.L_out,
                "forward_mode": "prefill" if prefill else "decode",
                "post_max_in_len": workload.L_in,
                "post_elapsed_us": latency_ns / 1000,
            },
        )
        if prefill:
            emit.span("forward_prefill", Category.PYTHON_CALL, emit.python, run_start + 1_000, int(run_ns * 0.8), (1, 1))
        emit.span("process_batch_result", Category.PYTHON_CALL, emit.python, run_start + run_ns, process_ns, (1, 1))
        if not prefill:
            emit.span(
                "process_batch_result_decode",
                Category.PYTHON_CALL,
                emit.python,
                run_start + run_ns,
                max(1, process_ns // 2),
                (1, 1),
            )

        effect = FAULT_EFFECTS[fault.family] if fault is not None else None
        target = effect.target_class if effect is not None else None
        stretch = fault.severity if effect is not None and effect.host_wide else 1.0
        launch_ns = int(round(LAUNCH_NS * stretch))

        start, duration = _placement("oncpu", run_start, base_ns, extra_ns if target == "oncpu" else 0)
        emit.span("oncpu", Category.OS_SCHED, emit.kernel_tracer, start, duration, (1, 2))
        start, duration = _placement("gemm_kernel", run_start, base_ns, extra_ns if target == "gemm_kernel" else 0)
        emit.launched("cudaLaunchKernel", "gemm_kernel", Category.GPU_KERNEL, start, duration, (100, 7), launch_ns)
        start, duration = _placement("memcpy_h2d", run_start, base_ns, extra_ns if target == "memcpy_h2d" else 0)
        emit.launched("cudaMemcpyAsync", "memcpy_h2d", Category.MEM_COPY, start, duration, (100, 8), launch_ns)

        for rank in range(ranks):
            rank_extra = 0
            if target == "allreduce":
                slow = fault.family is not FaultFamily.NVLINK_SATURATION or rank == fault.slow_rank
                rank_extra = extra_ns if slow else int(round(PEER_RANK_SHARE * extra_ns))
            node, device = _node_of(rank, ranks, nodes)
            start, duration = _placement("allreduce", run_start, base_ns, rank_extra)
            emit.span(
                "allreduce",
                Category.COLLECTIVE_COMM,
                emit.rank_sources[rank],
                start,
                duration,
                (10 + rank, 0),
                args={"commHash": COMM_HASH, "rank": rank, "node": node, "device": device},
            )

        start, duration = _placement("swap_io", run_start, base_ns, extra_ns if target == "swap_io" else 0, stretch)
        emit.span("swap_io", Category.OS_SCHED, emit.kernel_tracer, start, duration, (1, 3))

        cursor = run_start + latency_ns
        latencies.append(latency_ns / NS_PER_S)
        nominal.append(analytic)

    # Closing scheduler call bounds the last cycle
    if n:
        emit.span("get_next_batch_to_run", Category.PYTHON_CALL, emit.python, cursor + DECODE_GAP_NS, SCHEDULER_NS, (1, 1))

    labels = label_cycles(faults, n)
    Log.info(f"Synthesized {n} cycles ({sum(labels)} anomalous) as {len(emit.events)} events, seed {seed}")
    return LabeledDataset(
        events=emit.events,
        labels=labels,
        latencies=latencies,
        nominal=nominal,
        workloads=list(workloads),
        faults=faults,
        seed=seed,
    )
