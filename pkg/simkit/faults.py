from typing import NamedTuple, Sequence

from request.suite_config import FaultFamily, FaultSpec
from services.errors import ConfigConflict, UnlabeledEffect


class FaultEffect(NamedTuple):
    # Event class whose spans absorb the extra latency
    target_class: str
    # Counter carrying the family's signature
    counter: str
    # +1 raises the counter, -1 lowers it
    direction: int
    # Extra latency varies cycle to cycle
    bursty: bool = False
    # Every host-side span also stretches by the severity factor
    host_wide: bool = False


FAULT_EFFECTS: dict[FaultFamily, FaultEffect] = {
    FaultFamily.CPU_CONTENTION: FaultEffect("oncpu", "cpu_usage", +1),
    FaultFamily.CPU_FREQ_DROP: FaultEffect("oncpu", "frequency", -1, host_wide=True),
    FaultFamily.GPU_CONTENTION: FaultEffect("gemm_kernel", "gpu_usage", +1),
    FaultFamily.GPU_CLOCK_LOCK: FaultEffect("gemm_kernel", "gpu_clock", -1),
    FaultFamily.MEMORY_THRASH: FaultEffect("swap_io", "page_activity", +1, bursty=True),
    FaultFamily.NVLINK_SATURATION: FaultEffect("allreduce", "tx_bytes", +1),
    FaultFamily.PCIE_BOTTLENECK: FaultEffect("memcpy_h2d", "pcie_bytes", +1),
    FaultFamily.BUS_CONTENTION: FaultEffect("memcpy_h2d", "bus_util", +1),
}

# Non-slow ranks of a saturated link absorb this share of the extra time
PEER_RANK_SHARE = 0.8

# Per-cycle scale of a bursty fault's extra time
BURST_RANGE = (0.8, 1.2)


def counter_factor(severity: float, direction: int) -> float:
    """Multiplier applied to the signature counter inside a fault window."""
    factor = 1.0 + 0.5 * (severity - 1.0)
    return factor if direction > 0 else 1.0 / factor


def validate_faults(faults: Sequence[FaultSpec], n_cycles: int, ranks: int = 1) -> None:
    """
    Raises
    ------
    UnlabeledEffect
        If a fault has severity <= 1.0, so it would label cycles without
        changing them.
    ConfigConflict
        If fault windows overlap, start past the trace end, or slow a rank
        that does not exist.
    """
    for fault in faults:
        if fault.severity <= 1.0:
            raise UnlabeledEffect(
                f"{fault.family.value} with severity {fault.severity} has no observable effect",
                {"family": fault.family.value, "severity": fault.severity},
            )
        if fault.onset >= n_cycles:
            raise ConfigConflict(
                f"{fault.family.value} onset {fault.onset} is past the last cycle {n_cycles - 1}",
                {"onset": fault.onset, "cycles": n_cycles},
            )
        if fault.family is FaultFamily.NVLINK_SATURATION and fault.slow_rank >= ranks:
            raise ConfigConflict(
                f"Slow rank {fault.slow_rank} does not exist in a {ranks}-rank group",
                {"slow_rank": fault.slow_rank, "ranks": ranks},
            )
    ordered = sorted(faults, key=lambda f: f.onset)
    for first, second in zip(ordered, ordered[1:]):
        if second.onset < first.end:
            raise ConfigConflict(
                f"Fault windows overlap: {first.family.value} [{first.onset}, {first.end}) "
                f"and {second.family.value} starting at {second.onset}",
                {"first": first.family.value, "second": second.family.value},
            )


def active_fault(faults: Sequence[FaultSpec], cycle: int) -> FaultSpec | None:
    for fault in faults:
        if fault.onset <= cycle < fault.end:
            return fault
    return None


def label_cycles(faults: Sequence[FaultSpec], n_cycles: int) -> list[bool]:
    return [active_fault(faults, i) is not None for i in range(n_cycles)]
