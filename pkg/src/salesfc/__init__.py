"""Monthly retail sales forecasting on a shop x item panel.

Pipeline: ``ingest`` (raw daily CSVs to a monthly grid), ``features``
(lagged aggregates and encodings), three learners (``gbt``, ``arima``,
``seqnet``) and ``evalharness`` for splits, RMSE, tuning and submissions.
"""

from salesfc.panel import (
    MISSING,
    CatalogTables,
    FeatureMatrix,
    PanelGrid,
    SalesRecord,
    SplitSpec,
    clip_target,
    split_rows,
)

__version__ = "0.1.0"

__all__ = [
    "MISSING",
    "CatalogTables",
    "FeatureMatrix",
    "PanelGrid",
    "SalesRecord",
    "SplitSpec",
    "clip_target",
    "split_rows",
]
