"""Anchor-function discovery for iteration-cycle segmentation."""

from collections import defaultdict
from typing import Iterable, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from request.run_config import CycleConfig
from services.errors import NoAnchorFound
from services.log import Log
from tracing.events import Category, EventKind, TraceEvent, sort_events

FREQUENCY_ANCHOR = "<kernel-period>"


class AnchorCandidate(BaseModel):
    """
    A function whose calls delimit iteration cycles.

    In frequency mode ``name`` is ``FREQUENCY_ANCHOR`` and ``period_ns``
    holds the dominant kernel-launch period; no PythonCall span backs it.
    """

    model_config = ConfigDict(frozen=True)

    name: str
    call_count: int
    mean_duration_ns: float
    duration_cv: float
    periodicity: float
    score: float
    frequency_mode: bool = False
    period_ns: int | None = None
    origin_ts: int | None = None


def _cv(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    mean = float(values.mean())
    if mean == 0:
        return 0.0
    return float(values.std() / mean)


def score_candidate(name: str, starts: Sequence[int], durations: Sequence[int]) -> AnchorCandidate:
    """Score one function: call_count / (1 + CV of durations)."""
    duration_arr = np.asarray(durations, dtype=float)
    start_arr = np.sort(np.asarray(starts, dtype=float))
    cv = _cv(duration_arr)
    periodicity = 1.0 / (1.0 + _cv(np.diff(start_arr))) if start_arr.size > 2 else 0.0
    return AnchorCandidate(
        name=name,
        call_count=len(durations),
        mean_duration_ns=float(duration_arr.mean()) if duration_arr.size else 0.0,
        duration_cv=cv,
        periodicity=periodicity,
        score=len(durations) / (1.0 + cv),
    )


def rank_candidates(events: Iterable[TraceEvent], min_calls: int = 10) -> list[AnchorCandidate]:
    """
    Score every PythonCall function called at least ``min_calls`` times.

    Returns
    -------
    list[AnchorCandidate]
        Best first; equal scores are ordered by name.
    """
    starts: dict[str, list[int]] = defaultdict(list)
    durations: dict[str, list[int]] = defaultdict(list)
    for event in events:
        if event.category is Category.PYTHON_CALL and event.kind is EventKind.SPAN:
            starts[event.name].append(event.start_ts)
            durations[event.name].append(event.duration)

    candidates = [
        score_candidate(name, starts[name], durations[name])
        for name in sorted(durations)
        if len(durations[name]) >= min_calls
    ]
    candidates.sort(key=lambda c: (-c.score, c.name))
    return candidates


def kernel_period(events: Iterable[TraceEvent], bin_ns: int = 1_000_000) -> tuple[int, int, int]:
    """
    Dominant period of the GpuKernel launch stream.

    Kernel start times are binned at ``bin_ns`` and the mean-removed
    counts are autocorrelated. The period is the smallest lag whose
    normalized autocorrelation reaches 90% of the peak.

    Returns
    -------
    tuple[int, int, int]
        (period ns, origin ts, kernel count).

    Raises
    ------
    NoAnchorFound
        If there are too few kernels or no periodic structure.
    """
    starts = np.array(sorted(e.start_ts for e in events if e.category is Category.GPU_KERNEL), dtype=np.int64)
    if starts.size < 4:
        raise NoAnchorFound("Too few GpuKernel events for frequency-domain segmentation", {"kernels": int(starts.size)})

    origin = int(starts[0])
    counts = np.bincount((starts - origin) // bin_ns).astype(float)
    n = counts.size
    if n < 4:
        raise NoAnchorFound("Kernel stream spans too few bins for frequency analysis", {"bins": n})

    centered = counts - counts.mean()
    full = np.correlate(centered, centered, mode="full")[n - 1 :]
    lags = np.arange(1, n // 2 + 1)
    acf = full[lags] / (n - lags)
    if acf.size == 0 or acf.max() <= 0:
        raise NoAnchorFound("Kernel stream shows no periodic structure", {"bins": n})

    best = int(lags[np.argmax(acf >= 0.9 * acf.max())])
    return best * bin_ns, origin, int(starts.size)


def discover_anchor(events: Sequence[TraceEvent], config: CycleConfig | None = None) -> AnchorCandidate:
    """
    Pick the function that best delimits iteration cycles.

    Parameters
    ----------
    events : Sequence[TraceEvent]
        Calibrated trace.
    config : CycleConfig | None, optional
        Cycle settings; ``config.anchor`` forces a function name.

    Returns
    -------
    AnchorCandidate
        Highest-scoring candidate. Without PythonCall spans, a
        frequency-mode candidate derived from the kernel stream.

    Raises
    ------
    NoAnchorFound
        If no function reaches the minimum call count, or the forced
        anchor is absent.
    """
    config = config or CycleConfig()
    ordered = sort_events(events)

    if config.anchor is not None:
        forced = [e for e in ordered if e.name == config.anchor and e.kind is EventKind.SPAN]
        if len(forced) < 2:
            raise NoAnchorFound(
                f"Configured anchor '{config.anchor}' occurs {len(forced)} times",
                {"anchor": config.anchor, "calls": len(forced)},
            )
        return score_candidate(config.anchor, [e.start_ts for e in forced], [e.duration for e in forced])

    if not any(e.category is Category.PYTHON_CALL for e in ordered):
        period, origin, kernels = kernel_period(ordered, config.frequency_bin_ns)
        Log.warning(f"No PythonCall spans; segmenting by kernel period {period} ns (stage will be Unknown)")
        return AnchorCandidate(
            name=FREQUENCY_ANCHOR,
            call_count=kernels,
            mean_duration_ns=0.0,
            duration_cv=0.0,
            periodicity=1.0,
            score=0.0,
            frequency_mode=True,
            period_ns=period,
            origin_ts=origin,
        )

    candidates = rank_candidates(ordered, config.min_calls)
    if not candidates:
        raise NoAnchorFound(
            f"No function is called at least {config.min_calls} times", {"min_calls": config.min_calls}
        )
    best = candidates[0]
    Log.info(f"Anchor '{best.name}': {best.call_count} calls, CV {best.duration_cv:.3f}, score {best.score:.1f}")
    return best
