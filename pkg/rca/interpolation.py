import numpy as np

from services.errors import EmptySeries
from tracing.events import CounterSeries


class SeriesIndex:
    """
    Counter series prepared for repeated interval means.

    The interpolant is piecewise linear between samples and constant
    (clamped to the nearest sample) outside them.
    """

    def __init__(self, timestamps: np.ndarray | list[int], values: np.ndarray | list[float], metric: str = "") -> None:
        self.metric = metric
        self.ts = np.asarray(timestamps, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.ts.size == 0:
            raise EmptySeries(f"Counter series '{metric}' has no samples", {"metric": metric})

    @classmethod
    def from_series(cls, series: CounterSeries) -> "SeriesIndex":
        return cls(series.timestamps, series.values, series.metric)

    def at(self, t: float) -> float:
        return float(np.interp(t, self.ts, self.values))

    def mean(self, t0: float, t1: float) -> float:
        """Time-weighted mean over [t0, t1] by the trapezoid rule on breakpoints."""
        if t1 < t0:
            raise ValueError(f"interval end {t1} precedes start {t0}")
        if t1 == t0:
            return self.at(t0)
        lo = np.searchsorted(self.ts, t0, side="right")
        hi = np.searchsorted(self.ts, t1, side="left")
        points = np.concatenate(([t0], self.ts[lo:hi], [t1]))
        heights = np.interp(points, self.ts, self.values)
        area = np.sum((heights[1:] + heights[:-1]) * np.diff(points)) / 2.0
        return float(area / (t1 - t0))


def interpolate_mean(series: CounterSeries | SeriesIndex, t0: float, t1: float) -> float:
    """
    Mean of the linearly interpolated counter over [t0, t1].

    Raises
    ------
    EmptySeries
        If the series has no samples.
    """
    index = series if isinstance(series, SeriesIndex) else SeriesIndex.from_series(series)
    return index.mean(t0, t1)
