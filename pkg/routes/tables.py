"""Aligned text tables for command output."""

from typing import Any, Sequence

from response.benchmark_result import BenchmarkResult
from response.model_metrics import AblationTable, ModelMetrics
from response.strategy_metrics import StrategyTable
from response.suspicion_report import SuspicionReport


def _cell(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


def render_table(headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    cells = [[_cell(value) for value in row] for row in rows]
    widths = [len(h) for h in headers]
    for row in cells:
        for i, text in enumerate(row):
            widths[i] = max(widths[i], len(text))
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(text.ljust(w) for text, w in zip(row, widths)).rstrip() for row in cells)
    return "\n".join(lines)


def strategy_table(table: StrategyTable) -> str:
    return render_table(
        ["Strategy", "Precision", "Recall", "F1", "FPR(%)", "Lag"],
        [
            (row.strategy, row.precision, row.recall, row.f1, row.fpr * 100.0, row.mean_lag)
            for row in table.rows
        ],
    )


def suspicion_table(report: SuspicionReport, limit: int | None = None) -> str:
    entries = report.entries[:limit] if limit else report.entries
    return render_table(
        ["Class", "dBeta(%)", "Metric", "dMu", "Z_beta", "Z_logmu", "Score", "p", "Node/Device"],
        [
            (
                e.event_class,
                e.delta_beta_pct,
                e.metric,
                e.delta_mu,
                e.z_beta,
                e.z_log_mu,
                e.score,
                e.p_value,
                e.attribution.label() if e.attribution else None,
            )
            for e in entries
        ],
    )


def root_cause_table(result: BenchmarkResult) -> str:
    """Top suspect of each diagnosed trial, one row per trial."""
    rows = []
    for outcome in result.trials:
        report = result.reports.get(outcome.trial_id)
        if report is None or report.top is None:
            continue
        top = report.top
        rows.append(
            (
                outcome.family,
                top.event_class,
                top.delta_beta_pct,
                top.metric,
                top.delta_mu,
                top.score,
                top.p_value,
                top.attribution.label() if top.attribution else None,
            )
        )
    return render_table(["Fault", "Event", "dBeta(%)", "Metric", "dMu", "Score", "p", "Node/Device"], rows)


def family_table(result: BenchmarkResult) -> str:
    return render_table(
        ["Fault", "Trials", "Top-1 hits", "p<0.01", "Hit rate"],
        [(row.family, row.trials, row.top1_hits, row.significant_hits, row.hit_rate) for row in result.rca],
    )


def ablation_table(table: AblationTable) -> str:
    return render_table(
        ["Features", "Model", "R2", "MAPE(%)", "Dominant features"],
        [(row.feature_set, row.model, row.r2, row.mape, ", ".join(row.top_features)) for row in table.rows],
    )


def model_metrics_table(metrics: ModelMetrics) -> str:
    lines = [
        render_table(
            ["R2", "MAPE(%)", "Within 10%", "Test samples"],
            [(metrics.r2, metrics.mape, metrics.within_10pct, metrics.n_test)],
        )
    ]
    if metrics.convergence:
        lines.append("")
        lines.append(
            render_table(
                ["Samples", "MAPE(%)", "Within 10%"],
                [(p.samples, p.mape, p.within_10pct) for p in metrics.convergence],
            )
        )
    return "\n".join(lines)


def benchmark_report(result: BenchmarkResult) -> str:
    sections = ["Detection strategies", strategy_table(result.strategies), ""]
    sections += ["Root cause (top suspect per trial)", root_cause_table(result), ""]
    sections += ["Top-1 localization by fault family", family_table(result)]
    if result.straggler_hit_rate is not None:
        sections.append(f"Straggler attribution hit rate: {result.straggler_hit_rate:.3f}")
    if result.ablation is not None:
        sections += ["", "Feature ablation", ablation_table(result.ablation)]
    return "\n".join(sections)
