"""Scheduler-cohort workload generator."""

import math

import numpy as np

from cycles.segmenter import Stage
from cycles.workload import WorkloadFeatures
from request.suite_config import ProfileKind, WorkloadProfile
from services.errors import InvalidProfile


def log_uniform_int(rng: np.random.Generator, low: int, high: int) -> int:
    """Integer drawn log-uniformly from [low, high]."""
    if low == high:
        return low
    value = int(round(math.exp(rng.uniform(math.log(low), math.log(high)))))
    return min(max(value, low), high)


def generate_workload(profile: WorkloadProfile | None, n: int, seed: int = 0) -> list[WorkloadFeatures]:
    """
    Per-cycle workloads built from scheduler cohorts.

    Each cohort opens with one prefill cycle (L_out = 0) and then decodes
    for its lifetime, L_out advancing by one per step from a sampled start
    (capped at the top of the output range).

    Parameters
    ----------
    profile : WorkloadProfile | None
        Distribution settings; defaults to the log-uniform profile.
    n : int
        Number of cycles.
    seed : int, optional
        Generator seed.

    Raises
    ------
    InvalidProfile
        If n is negative.
    """
    if n < 0:
        raise InvalidProfile(f"Cycle count must be >= 0, got {n}", {"n": n})
    profile = profile or WorkloadProfile()
    rng = np.random.default_rng(seed)
    out_low, out_high = profile.output_range

    cycles: list[WorkloadFeatures] = []
    while len(cycles) < n:
        if profile.kind is ProfileKind.FIXED:
            batch, input_len = profile.batch_size, profile.input_len
        else:
            batch = log_uniform_int(rng, *profile.batch_range)
            input_len = log_uniform_int(rng, *profile.input_range)
        output_start = log_uniform_int(rng, out_low, out_high)
        lifetime = log_uniform_int(rng, *profile.lifetime_range)

        cycles.append(WorkloadFeatures(B=batch, L_in=input_len, L_out=0, stage=Stage.PREFILL))
        for step in range(lifetime):
            cycles.append(
                WorkloadFeatures(
                    B=batch, L_in=input_len, L_out=min(output_start + step, out_high), stage=Stage.DECODE
                )
            )
    return cycles[:n]
