"""End-to-end runners shared by the CLI and the comparison report."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, replace

import numpy as np
import pandas as pd

from salesfc import arima, gbt, seqnet
from salesfc.evalharness import RunReport, SearchSpace, random_search, rmse
from salesfc.features import FeatureSpec, assemble
from salesfc.ingest import append_forecast_block, build_grid
from salesfc.panel import TARGET_HI, TARGET_LO, CatalogTables, FeatureMatrix, PanelGrid, SplitSpec, split_rows

logger = logging.getLogger(__name__)


@dataclass
class Prepared:
    grid: PanelGrid
    catalog: CatalogTables
    records: pd.DataFrame
    matrix: FeatureMatrix
    split: SplitSpec
    labels: pd.DataFrame | None = None  # shop_id, item_id, item_cnt_month for the test block

    def partitions(self):
        return split_rows(self.matrix, self.split)


def prepare(
    records: pd.DataFrame,
    catalog: CatalogTables,
    spec: FeatureSpec = FeatureSpec(),
    split: SplitSpec = SplitSpec(),
    test_pairs: pd.DataFrame | None = None,
    labels: pd.DataFrame | None = None,
    grid: PanelGrid | None = None,
) -> Prepared:
    """Grid (plus unlabeled test-block cells when the block has no sales) and feature matrix."""
    if grid is None:
        grid = build_grid(records, catalog)
    if test_pairs is not None and split.test_block not in set(grid.blocks.tolist()):
        grid = append_forecast_block(grid, test_pairs, split.test_block)
    matrix = assemble(grid, catalog, records, spec, split)
    return Prepared(grid, catalog, records, matrix, split, labels)


def _clipped(x):
    return np.clip(x, TARGET_LO, TARGET_HI)


def _test_rmse(prep: Prepared, frame: pd.DataFrame) -> float | None:
    """Test RMSE from in-grid targets, else from supplied labels, else None."""
    target = frame["target"].to_numpy(dtype=np.float64) if "target" in frame else np.array([np.nan])
    if len(frame) and np.isfinite(target).all():
        return rmse(frame["prediction"], target)
    if prep.labels is not None and len(frame):
        lab = prep.labels.set_index(["shop_id", "item_id"])["item_cnt_month"]
        truth = lab.reindex(pd.MultiIndex.from_frame(frame[["shop_id", "item_id"]])).to_numpy()
        ok = np.isfinite(truth)
        if ok.any():
            return rmse(frame["prediction"].to_numpy()[ok], truth[ok])
    return None


def _frame(part: FeatureMatrix, pred) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "shop_id": part.row_keys[:, 0],
            "item_id": part.row_keys[:, 1],
            "prediction": pred,
            "target": part.target,
        }
    )


def run_gbt(prep: Prepared, params: gbt.GbtParams = gbt.GbtParams(), backend: str | None = None):
    start = time.perf_counter()
    train, val, test = prep.partitions()
    model = gbt.fit(train, params, eval_set=val, backend=backend)
    tr_pred = _clipped(gbt.predict(model, train, backend=backend))
    va_pred = _clipped(gbt.predict(model, val, backend=backend))
    te_frame = _frame(test, gbt.predict(model, test, clip=True, backend=backend))
    report = RunReport(
        "XGBoost-style GBT",
        rmse(tr_pred, train.target),
        rmse(va_pred, val.target),
        _test_rmse(prep, te_frame),
        asdict(params),
        time.perf_counter() - start,
    )
    return model, report, te_frame


def gbt_scorer(train: FeatureMatrix, val: FeatureMatrix, backend: str | None = None):
    """Trial function for :func:`random_search`: fits, then keeps the best boosting round."""

    def score(params: dict):
        p = gbt.GbtParams.from_dict(params)
        model = gbt.fit(train, p, eval_set=val, backend=backend)
        evals = [e["eval_rmse"] for e in model.log]
        best = int(np.argmin(evals))
        model.trees = model.trees[: best + 1]
        tr = rmse(_clipped(gbt.predict(model, train, backend=backend)), train.target)
        va = rmse(_clipped(gbt.predict(model, val, backend=backend)), val.target)
        return tr, va, {"n_rounds": best + 1}

    return score


def tune_gbt(prep: Prepared, space: SearchSpace, n_jobs: int = 1, backend: str | None = None):
    train, val, _ = prep.partitions()
    return random_search(space, gbt_scorer(train, val, backend), n_jobs=n_jobs)


def seq_partitions(prep: Prepared, window: int = 12, max_train_samples: int | None = None, seed: int = 0):
    data = seqnet.build_samples(prep.grid, prep.catalog, prep.records, prep.matrix, window)
    blocks = prep.matrix.date_block
    tb = prep.split.train_blocks
    train_idx = np.flatnonzero((blocks >= tb.start) & (blocks < tb.stop))
    if max_train_samples is not None and len(train_idx) > max_train_samples:
        rng = np.random.default_rng(seed)
        train_idx = np.sort(rng.choice(train_idx, size=max_train_samples, replace=False))
    val_idx = np.flatnonzero(blocks == prep.split.validation_block)
    test_idx = np.flatnonzero(blocks == prep.split.test_block)
    train = data.take(train_idx)
    scaler = seqnet.fit_scaler(train)
    parts = [seqnet.apply_scaler(d, scaler) for d in (train, data.take(val_idx), data.take(test_idx))]
    return parts, scaler


def run_lstm(
    prep: Prepared,
    params: seqnet.SeqNetParams = seqnet.SeqNetParams(),
    window: int = 12,
    max_train_samples: int | None = None,
):
    start = time.perf_counter()
    (train, val, test), scaler = seq_partitions(prep, window, max_train_samples, params.seed)
    model, log = seqnet.train(train, val, params)
    model.scaler = scaler
    tr = rmse(_clipped(seqnet.predict(model, train)), train.target)
    va = rmse(_clipped(seqnet.predict(model, val)), val.target)
    te_frame = pd.DataFrame(
        {
            "shop_id": test.row_keys[:, 0],
            "item_id": test.row_keys[:, 1],
            "prediction": _clipped(seqnet.predict(model, test)),
            "target": test.target,
        }
    )
    report = RunReport("LSTM", tr, va, _test_rmse(prep, te_frame),
                       {**asdict(params), "window": window}, time.perf_counter() - start)
    return model, report, te_frame, log


def run_arima(
    prep: Prepared,
    order: arima.ArimaOrder = arima.ArimaOrder(),
    min_nonzero: int = 3,
    n_jobs: int = 1,
    first_scored_block: int | None = None,
):
    start = time.perf_counter()
    first = int(prep.matrix.date_block.min()) if first_scored_block is None else first_scored_block
    fc = arima.fit_all(prep.grid, order, prep.split, min_nonzero, first, n_jobs)
    tf = fc.train_fitted
    report = RunReport(
        "ARIMA",
        rmse(tf["prediction"], tf["target"]) if len(tf) else math.nan,
        rmse(fc.validation["prediction"], fc.validation["target"]),
        _test_rmse(prep, fc.test),
        {"p": order.p, "d": order.d, "q": order.q, "min_nonzero": min_nonzero,
         "fallback_rate": fc.fallback_rate},
        time.perf_counter() - start,
    )
    return fc, report, fc.test


def prediction_map(frame: pd.DataFrame, test_ids: pd.DataFrame) -> dict:
    """(shop, item) -> prediction for every test pair; pairs without one get 0 (cold start)."""
    preds = {
        (int(s), int(i)): float(p)
        for s, i, p in frame[["shop_id", "item_id", "prediction"]].itertuples(index=False)
    }
    for s, i in zip(test_ids["shop_id"].astype(int), test_ids["item_id"].astype(int)):
        preds.setdefault((s, i), 0.0)
    return preds
