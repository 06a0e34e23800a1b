"""Suspicion scoring and straggler attribution."""

import math
from collections import defaultdict
from typing import Sequence

import numpy as np
from scipy.stats import ttest_ind

from rca.stats import CycleOpStats
from response.suspicion_report import Attribution, SuspicionEntry
from services.errors import InsufficientCycles
from services.log import Log
from tracing.topology import TopologyMap

MIN_NORMAL = 10
MIN_ABNORMAL = 3


def floored_sigma(values: np.ndarray) -> float:
    """Sample std floored at max(1% of |mean|, 1e-12)."""
    sigma = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return max(sigma, 0.01 * abs(float(values.mean())), 1e-12)


def z_shift(normal: np.ndarray, abnormal: np.ndarray) -> float:
    if normal.size == 0 or abnormal.size == 0:
        return 0.0
    return float((abnormal.mean() - normal.mean()) / floored_sigma(normal))


def welch_p(normal: np.ndarray, abnormal: np.ndarray) -> float:
    if normal.size < 2 or abnormal.size < 2:
        return 1.0
    p = float(ttest_ind(abnormal, normal, equal_var=False).pvalue)
    return 1.0 if math.isnan(p) else p


def _by_class(window: Sequence[Sequence[CycleOpStats]]) -> dict[str, dict[int, CycleOpStats]]:
    index: dict[str, dict[int, CycleOpStats]] = defaultdict(dict)
    for position, cycle in enumerate(window):
        for stat in cycle:
            index[stat.event_class][position] = stat
    return index


def _betas(per_cycle: dict[int, CycleOpStats], n: int) -> np.ndarray:
    return np.array([per_cycle[i].beta if i in per_cycle else 0.0 for i in range(n)])


def _log_mus(per_cycle: dict[int, CycleOpStats]) -> np.ndarray:
    return np.log1p(np.array([s.mu for s in per_cycle.values() if s.mu is not None], dtype=float))


def _mus(per_cycle: dict[int, CycleOpStats]) -> np.ndarray:
    return np.array([s.mu for s in per_cycle.values() if s.mu is not None], dtype=float)


def suspicion_rank(
    normal: Sequence[Sequence[CycleOpStats]],
    abnormal: Sequence[Sequence[CycleOpStats]],
    min_normal: int = MIN_NORMAL,
    min_abnormal: int = MIN_ABNORMAL,
) -> list[SuspicionEntry]:
    """
    Rank event classes by Score = |delta beta| * (|Z_beta| + |Z_log_mu|).

    Parameters
    ----------
    normal, abnormal : Sequence[Sequence[CycleOpStats]]
        Per-cycle stats of each window. A class missing from a cycle
        counts as beta = 0 there.
    min_normal, min_abnormal : int, optional
        Minimum cycles per window.

    Returns
    -------
    list[SuspicionEntry]
        Sorted by descending score, then class name.

    Raises
    ------
    InsufficientCycles
        If a window is below its minimum size.
    """
    if len(normal) < min_normal or len(abnormal) < min_abnormal:
        raise InsufficientCycles(
            f"Need >= {min_normal} normal and >= {min_abnormal} abnormal cycles, "
            f"got {len(normal)} and {len(abnormal)}",
            {"normal": len(normal), "abnormal": len(abnormal)},
        )

    norm_index = _by_class(normal)
    abn_index = _by_class(abnormal)
    entries = []
    for event_class in sorted(set(norm_index) | set(abn_index)):
        norm_stats = norm_index.get(event_class, {})
        abn_stats = abn_index.get(event_class, {})
        beta_norm = _betas(norm_stats, len(normal))
        beta_abn = _betas(abn_stats, len(abnormal))
        delta_beta = float(beta_abn.mean() - beta_norm.mean())
        z_beta = z_shift(beta_norm, beta_abn)
        z_log_mu = z_shift(_log_mus(norm_stats), _log_mus(abn_stats))
        mu_norm, mu_abn = _mus(norm_stats), _mus(abn_stats)
        metric = next((s.metric for s in (*norm_stats.values(), *abn_stats.values()) if s.metric), None)

        entries.append(
            SuspicionEntry(
                event_class=event_class,
                delta_beta=delta_beta,
                delta_beta_pct=delta_beta * 100.0,
                z_beta=z_beta,
                z_log_mu=z_log_mu,
                score=abs(delta_beta) * (abs(z_beta) + abs(z_log_mu)),
                metric=metric,
                delta_mu=float(mu_abn.mean() - mu_norm.mean()) if mu_norm.size and mu_abn.size else None,
                p_value=welch_p(beta_norm, beta_abn),
                beta_normal=float(beta_norm.mean()),
                beta_abnormal=float(beta_abn.mean()),
            )
        )
    entries.sort(key=lambda entry: (-entry.score, entry.event_class))
    return entries


def _rank_deltas(
    event_class: str, normal: Sequence[Sequence[CycleOpStats]], abnormal: Sequence[Sequence[CycleOpStats]]
) -> dict[str, float]:
    def means(window: Sequence[Sequence[CycleOpStats]]) -> dict[str, float]:
        totals: dict[str, float] = defaultdict(float)
        for cycle in window:
            for stat in cycle:
                if stat.event_class == event_class:
                    for key, beta in stat.rank_beta.items():
                        totals[key] += beta
        return {key: total / max(len(window), 1) for key, total in totals.items()}

    norm, abn = means(normal), means(abnormal)
    return {key: abn.get(key, 0.0) - norm.get(key, 0.0) for key in sorted(set(norm) | set(abn))}


def attribute_straggler(
    entries: Sequence[SuspicionEntry],
    topology: TopologyMap,
    normal: Sequence[Sequence[CycleOpStats]],
    abnormal: Sequence[Sequence[CycleOpStats]],
) -> list[SuspicionEntry]:
    """
    Attach the (node, device) of the most deviating rank to collective suspects.

    Within each communicator the rank with the largest |delta beta| is the
    straggler; ties go to the lowest rank. Groups of one rank get no
    attribution. Ranks absent from the topology are annotated "unmapped".
    """
    annotated = []
    for entry in entries:
        deltas = _rank_deltas(entry.event_class, normal, abnormal)
        groups: dict[str, list[tuple[int, float]]] = defaultdict(list)
        for key, delta in deltas.items():
            comm_hash, rank = key.rsplit(":", 1)
            groups[comm_hash].append((int(rank), delta))

        candidates = [
            (comm_hash, rank, delta)
            for comm_hash, members in sorted(groups.items())
            if len(members) > 1
            for rank, delta in members
        ]
        if not candidates:
            annotated.append(entry)
            continue

        comm_hash, rank, _ = min(candidates, key=lambda c: (-abs(c[2]), c[0], c[1]))
        ref = topology.lookup(comm_hash, rank)
        if ref is None:
            Log.warning(f"UnmappedRank: ({comm_hash}, {rank}) has no topology entry")
            attribution = Attribution(comm_hash=comm_hash, rank=rank, note="unmapped")
        else:
            attribution = Attribution(comm_hash=comm_hash, rank=rank, node=ref.node, device=ref.device)
        annotated.append(entry.model_copy(update={"attribution": attribution}))
    return annotated
