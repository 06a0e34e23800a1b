from dataclasses import dataclass, field
from typing import Sequence

from detector.control import DetectorState, run_chart
from detector.residuals import compute_ucl
from request.run_config import ControlConfig, Strategy
from response.strategy_metrics import StrategyMetrics, StrategyTable
from services.errors import NoLabels
from services.log import Log


@dataclass
class LabeledStream:
    """Residuals and ground truth of one monitored trial, by monitored position."""

    errors: list[float]
    labels: list[bool]
    trial_id: int = 0
    cycles: list[int] = field(default_factory=list)

    @property
    def onset(self) -> int | None:
        return next((i for i, label in enumerate(self.labels) if label), None)


def _ratio(numerator: float, denominator: float) -> float:
    return numerator / denominator if denominator else 0.0


def score_predictions(
    strategy: str, predicted: Sequence[Sequence[bool]], streams: Sequence[LabeledStream]
) -> StrategyMetrics:
    """
    Pool per-cycle confusion counts and detection lags over trials.

    The lag of a trial is the first exceeding position at or after the
    onset minus the onset; trials without one count as missed.
    """
    tp = fp = fn = tn = 0
    lags: list[int] = []
    missed = 0
    for flags, stream in zip(predicted, streams):
        for flag, label in zip(flags, stream.labels):
            if flag and label:
                tp += 1
            elif flag:
                fp += 1
            elif label:
                fn += 1
            else:
                tn += 1
        onset = stream.onset
        if onset is None:
            continue
        first = next((i for i in range(onset, len(flags)) if flags[i]), None)
        if first is None:
            missed += 1
        else:
            lags.append(first - onset)

    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return StrategyMetrics(
        strategy=strategy,
        precision=precision,
        recall=recall,
        f1=_ratio(2 * precision * recall, precision + recall),
        fpr=_ratio(fp, fp + tn),
        mean_lag=sum(lags) / len(lags) if lags else None,
        detected=len(lags),
        missed=missed,
        true_positives=tp,
        false_positives=fp,
        false_negatives=fn,
        true_negatives=tn,
    )


def predicted_labels(stream: LabeledStream, state: DetectorState) -> list[bool]:
    cycles = stream.cycles or None
    return [decision.exceeded for decision in run_chart(stream.errors, state, cycles)]


def evaluate_strategies(
    streams: Sequence[LabeledStream],
    calibration_residuals: Sequence[Sequence[float]] | Sequence[float],
    config: ControlConfig | None = None,
    strategies: Sequence[Strategy] = tuple(Strategy),
) -> StrategyTable:
    """
    Replay every labeled stream through each strategy and score per cycle.

    Parameters
    ----------
    streams : Sequence[LabeledStream]
        Monitored residuals with ground-truth labels, one per trial.
    calibration_residuals : Sequence[Sequence[float]] | Sequence[float]
        Holdout residuals per trial, or one shared set, for the dynamic UCL.
    config : ControlConfig | None, optional
        Window, threshold, k, theta_max and warmup shared by all strategies.
    strategies : Sequence[Strategy], optional
        Strategies to compare.

    Raises
    ------
    NoLabels
        If no stream carries labels.
    """
    if not streams or all(not stream.labels for stream in streams):
        raise NoLabels("Strategy evaluation needs ground-truth labels")
    config = config or ControlConfig()
    shared = len(calibration_residuals) > 0 and isinstance(calibration_residuals[0], (int, float))
    per_trial = [calibration_residuals] * len(streams) if shared else list(calibration_residuals)

    table = StrategyTable()
    for strategy in strategies:
        settings = config.model_copy(update={"strategy": strategy})
        predicted = []
        for stream, residuals in zip(streams, per_trial):
            ucl = compute_ucl(residuals, settings.k, settings.theta_max, settings.min_ucl) if strategy.dynamic else None
            predicted.append(predicted_labels(stream, DetectorState(settings, ucl)))
        row = score_predictions(strategy.value, predicted, streams)
        table.rows.append(row)
        Log.info(
            f"{strategy.value}: P={row.precision:.3f} R={row.recall:.3f} F1={row.f1:.3f} "
            f"FPR={row.fpr * 100:.2f}% lag={row.mean_lag}"
        )
    return table
