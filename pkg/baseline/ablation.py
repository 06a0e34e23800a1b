from typing import Sequence

import numpy as np

from baseline.features import build_matrix, extra_names_of, feature_schema
from baseline.gbdt import fit, predict
from baseline.metrics import chronological_split, score_predictions, shuffled_split
from baseline.polynomial import fit_polynomial, predict_polynomial
from cycles.workload import WorkloadFeatures
from request.run_config import FeatureSet, GbdtParams
from response.model_metrics import AblationRow, AblationTable
from services.log import Log

FEATURE_SETS = (FeatureSet.PHYSICAL, FeatureSet.FULL)


def ablation_compare(
    workloads: Sequence[WorkloadFeatures],
    latencies: Sequence[float],
    params: GbdtParams | None = None,
    test_fraction: float = 0.2,
    top: int = 2,
    chronological: bool = False,
    seed: int = 0,
) -> AblationTable:
    """
    Compare {physical, full} features x {GBDT, degree-2 polynomial}.

    Every cell shares one hold-out: a seeded random split by default, or
    the tail of the stream with ``chronological``. Dominant features are
    ranked by split gain (GBDT) or by |coefficient| of standardized terms
    (polynomial).
    """
    y = np.asarray(latencies, dtype=float)
    if chronological:
        train, test = chronological_split(len(y), test_fraction)
    else:
        train, test = shuffled_split(len(y), test_fraction, seed)
    extras = extra_names_of(workloads)

    table = AblationTable()
    for feature_set in FEATURE_SETS:
        schema = feature_schema(feature_set, extras)
        X = build_matrix(workloads, schema)

        gbdt = fit(X[train], y[train], schema, params)
        scored = score_predictions(y[test], predict(gbdt, X[test]))
        table.rows.append(
            AblationRow(
                feature_set=feature_set.value,
                model="GBDT",
                r2=scored.r2,
                mape=scored.mape,
                top_features=[name for name, _ in gbdt.ranked_features()[:top]],
            )
        )

        poly = fit_polynomial(X[train], y[train], schema)
        scored = score_predictions(y[test], predict_polynomial(poly, X[test]))
        table.rows.append(
            AblationRow(
                feature_set=feature_set.value,
                model="Polynomial",
                r2=scored.r2,
                mape=scored.mape,
                top_features=[name for name, _ in poly.ranked_features()[:top]],
            )
        )

    for row in table.rows:
        Log.info(f"Ablation {row.feature_set}/{row.model}: R2={row.r2:.4f} MAPE={row.mape:.2f}% top={row.top_features}")
    return table
