"""Feature generation from the monthly grid.

Every time-varying quantity is aggregated per date block and only ever
enters the matrix as a lag (``<name>_lag_<k>``) or a difference of two lags
(``<name>_trend_<j>_<k>``). Same-month aggregates would leak the target.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from salesfc.errors import EmptyPartitionError, SchemaError
from salesfc.panel import MISSING, CatalogTables, FeatureMatrix, PanelGrid, SplitSpec

ONEHOT_FIELDS = ("month", "year", "item_category_id", "shop_id")

#: Mean-encoding name -> grouping columns.
ENCODING_KEYS = {
    "shop_id": ("shop_id",),
    "shop_id_category": ("shop_id", "item_category_id"),
    "item_id": ("item_id",),
    "category": ("item_category_id",),
}

ID_COLUMNS = ("item_id", "shop_id", "item_category", "date_block_num", "month", "year")

META_COLUMNS = ("target", "date_block", "shop_id", "item_id")


@dataclass(frozen=True)
class FeatureSpec:
    lag_offsets: tuple[int, ...] = (1, 2, 3, 12)
    trend_pairs: tuple[tuple[int, int], ...] = ((1, 2), (2, 3), (1, 12))
    onehot_fields: tuple[str, ...] = ONEHOT_FIELDS
    encodings: tuple[str, ...] = ("shop_id", "shop_id_category")
    burn_in_blocks: int = 12

    def __post_init__(self):
        lags = tuple(int(k) for k in self.lag_offsets)
        pairs = tuple((int(a), int(b)) for a, b in self.trend_pairs)
        object.__setattr__(self, "lag_offsets", lags)
        object.__setattr__(self, "trend_pairs", pairs)
        object.__setattr__(self, "onehot_fields", tuple(self.onehot_fields))
        object.__setattr__(self, "encodings", tuple(self.encodings))
        if len(set(lags)) != len(lags) or any(k < 1 for k in lags):
            raise ValueError(f"lag offsets must be distinct and >= 1, got {lags}")
        for a, b in pairs:
            if a not in lags or b not in lags:
                raise ValueError(f"trend pair {(a, b)} uses a lag not in {lags}")
        unknown = set(self.onehot_fields) - set(ONEHOT_FIELDS)
        if unknown:
            raise ValueError(f"unknown one-hot fields {sorted(unknown)}")
        unknown = set(self.encodings) - set(ENCODING_KEYS)
        if unknown:
            raise ValueError(f"unknown encodings {sorted(unknown)}; known: {sorted(ENCODING_KEYS)}")
        if self.burn_in_blocks < 0:
            raise ValueError("burn_in_blocks must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown FeatureSpec keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "FeatureSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trend_pairs"] = [list(p) for p in self.trend_pairs]
        for k in ("lag_offsets", "onehot_fields", "encodings"):
            d[k] = list(d[k])
        return d


@dataclass(frozen=True)
class AggregateTable:
    """Per-block values of one quantity, keyed by ``keys`` + ``date_block``.

    ``frame`` holds the key columns, ``date_block`` and a value column
    named ``name``; (keys, date_block) is unique.
    """

    name: str
    keys: tuple[str, ...]
    frame: pd.DataFrame

    def value(self, block: int, *key) -> float:
        mask = self.frame["date_block"] == block
        for col, k in zip(self.keys, key):
            mask &= self.frame[col] == k
        hit = self.frame.loc[mask, self.name]
        return float(hit.iloc[0]) if len(hit) else MISSING

    def series(self) -> pd.Series:
        idx = pd.MultiIndex.from_frame(self.frame[["date_block", *self.keys]])
        return pd.Series(self.frame[self.name].to_numpy(dtype=np.float64), index=idx)


def with_category(grid: PanelGrid, catalog: CatalogTables) -> pd.DataFrame:
    cells = grid.cells.copy()
    cells["item_category_id"] = catalog.category_of(cells["item_id"].to_numpy())
    return cells


def _group_sum(cells: pd.DataFrame, keys: Sequence[str], col: str, name: str) -> AggregateTable:
    frame = (
        cells.groupby(["date_block", *keys], sort=True)[col]
        .sum(min_count=0)
        .rename(name)
        .reset_index()
    )
    return AggregateTable(name, tuple(keys), frame)


def agg_revenue_by_shop(grid: PanelGrid) -> AggregateTable:
    return _group_sum(grid.cells, ["shop_id"], "revenue", "revenue_shop")


def agg_revenue_by_shop_category(grid: PanelGrid, catalog: CatalogTables) -> AggregateTable:
    cells = with_category(grid, catalog)
    return _group_sum(cells, ["shop_id", "item_category_id"], "revenue", "revenue_shop_category")


def agg_counts(grid: PanelGrid, catalog: CatalogTables) -> dict[str, AggregateTable]:
    """Monthly target totals by shop, shop+category, category and item, plus cumulative item sales."""
    cells = with_category(grid, catalog)
    by_item = _group_sum(cells, ["item_id"], "item_cnt_month", "target_item_all")
    cum = by_item.frame.sort_values(["item_id", "date_block"], kind="mergesort")
    cum = cum.assign(cumulative_item=cum.groupby("item_id")["target_item_all"].cumsum())
    cum = cum[["date_block", "item_id", "cumulative_item"]].sort_values(
        ["date_block", "item_id"], kind="mergesort"
    )
    return {
        "by_shop": _group_sum(cells, ["shop_id"], "item_cnt_month", "target_shop"),
        "by_shop_category": _group_sum(
            cells, ["shop_id", "item_category_id"], "item_cnt_month", "target_shop_category"
        ),
        "by_category": _group_sum(cells, ["item_category_id"], "item_cnt_month", "target_category"),
        "by_item": by_item,
        "cumulative_by_item": AggregateTable(
            "cumulative_item", ("item_id",), cum.reset_index(drop=True)
        ),
    }


def flag_new_items(cumulative_by_item: AggregateTable) -> AggregateTable:
    """1 where an item had no sales before this block and sells more than one unit in it."""
    f = cumulative_by_item.frame.sort_values(["item_id", "date_block"], kind="mergesort")
    cum = f["cumulative_item"].to_numpy()
    prev = f.groupby("item_id")["cumulative_item"].shift(1).fillna(0.0).to_numpy()
    monthly = cum - prev
    flag = ((prev == 0) & (monthly > 1)).astype(np.float64)
    out = pd.DataFrame({"date_block": f["date_block"], "item_id": f["item_id"], "new_item": flag})
    out = out.sort_values(["date_block", "item_id"], kind="mergesort").reset_index(drop=True)
    return AggregateTable("new_item", ("item_id",), out)


def price_features(records: pd.DataFrame, grid: PanelGrid | None = None) -> dict[str, AggregateTable]:
    """Per-block item prices: quantity-weighted mean, plain mean, and plain mean per shop.

    Quantities are floored at 0 for weighting; a block with no positive
    quantity falls back to the plain mean. Keys without transactions have
    no row (read back as missing).
    """
    r = records[["date_block", "shop_id", "item_id", "item_price", "item_cnt_day"]]
    qty = np.maximum(r["item_cnt_day"].to_numpy(), 0.0)
    tmp = pd.DataFrame(
        {
            "date_block": r["date_block"].to_numpy(),
            "item_id": r["item_id"].to_numpy(),
            "pq": r["item_price"].to_numpy() * qty,
            "q": qty,
            "p": r["item_price"].to_numpy(),
        }
    )
    g = tmp.groupby(["date_block", "item_id"], sort=True).agg(pq=("pq", "sum"), q=("q", "sum"), p=("p", "mean"))
    weighted = np.where(g["q"].to_numpy() > 0, g["pq"].to_numpy() / np.where(g["q"] > 0, g["q"], 1.0), g["p"].to_numpy())
    base = g.reset_index()[["date_block", "item_id"]]
    by_item_shop = (
        r.groupby(["date_block", "shop_id", "item_id"], sort=True)["item_price"]
        .mean()
        .rename("price_mean_item_shop")
        .reset_index()
    )
    return {
        "weighted_mean_by_item": AggregateTable(
            "price_weighted_item", ("item_id",), base.assign(price_weighted_item=weighted)
        ),
        "mean_by_item": AggregateTable(
            "target_price_mean", ("item_id",), base.assign(target_price_mean=g["p"].to_numpy())
        ),
        "mean_by_item_shop": AggregateTable(
            "price_mean_item_shop", ("shop_id", "item_id"), by_item_shop
        ),
    }


def target_table(grid: PanelGrid) -> AggregateTable:
    frame = grid.cells[["date_block", "shop_id", "item_id", "item_cnt_month"]].rename(
        columns={"item_cnt_month": "target_item"}
    )
    return AggregateTable("target_item", ("shop_id", "item_id"), frame.reset_index(drop=True))


def lag_join(rows: pd.DataFrame, table: AggregateTable, offsets: Iterable[int]) -> dict[str, np.ndarray]:
    """Look up ``table`` at (block - k, key) for every row; absent entries are missing."""
    lookup = table.series()
    blocks = rows["date_block"].to_numpy(dtype=np.int64)
    keys = [rows[k].to_numpy() for k in table.keys]
    out = {}
    for k in offsets:
        idx = pd.MultiIndex.from_arrays([blocks - k, *keys], names=lookup.index.names)
        out[f"{table.name}_lag_{k}"] = lookup.reindex(idx).to_numpy(dtype=np.float64)
    return out


def trend_features(lags: dict[str, np.ndarray], name: str, pairs) -> dict[str, np.ndarray]:
    """``<name>_trend_j_k = lag_j - lag_k``; NaN propagates."""
    return {
        f"{name}_trend_{j}_{k}": lags[f"{name}_lag_{j}"] - lags[f"{name}_lag_{k}"]
        for j, k in pairs
    }


def calendar(blocks) -> tuple[np.ndarray, np.ndarray]:
    """(month-of-year, year index) for zero-based date blocks."""
    blocks = np.asarray(blocks, dtype=np.int64)
    return blocks % 12, blocks // 12


def onehot_levels(rows: pd.DataFrame, fields: Sequence[str], train_mask: np.ndarray) -> dict[str, list]:
    return {f: sorted(np.unique(rows.loc[train_mask, f].to_numpy()).tolist()) for f in fields}


def onehot(rows: pd.DataFrame, fields: Sequence[str], levels: dict[str, list]) -> dict[str, np.ndarray]:
    """0/1 indicator columns per known level; unseen levels give an all-zero group."""
    out = {}
    for f in fields:
        vals = rows[f].to_numpy()
        for lvl in levels[f]:
            out[f"{f}_{lvl}"] = (vals == lvl).astype(np.float64)
    return out


@dataclass(frozen=True)
class MeanEncoding:
    name: str
    keys: tuple[str, ...]
    means: pd.Series
    global_mean: float

    def apply(self, rows: pd.DataFrame) -> np.ndarray:
        if len(self.keys) == 1:
            idx = pd.Index(rows[self.keys[0]].to_numpy())
        else:
            idx = pd.MultiIndex.from_arrays([rows[k].to_numpy() for k in self.keys])
        vals = self.means.reindex(idx).to_numpy(dtype=np.float64)
        return np.where(np.isnan(vals), self.global_mean, vals)


def mean_encode(cells: pd.DataFrame, key: str, train_blocks: range) -> MeanEncoding:
    """Mean clipped target per level of ``key`` over training-block cells only."""
    cols = ENCODING_KEYS[key]
    blocks = cells["date_block"].to_numpy()
    train = cells[(blocks >= train_blocks.start) & (blocks < train_blocks.stop)]
    train = train[train["item_cnt_month"].notna()]
    if train.empty:
        raise EmptyPartitionError(f"no training cells to encode '{key}'")
    grouped = train.groupby(list(cols), sort=True)["item_cnt_month"].mean()
    return MeanEncoding(f"enc_{key}", cols, grouped, float(train["item_cnt_month"].mean()))


def lag_tables(grid: PanelGrid, catalog: CatalogTables, records: pd.DataFrame) -> list[AggregateTable]:
    """All lagged base quantities, in the column order used by :func:`assemble`."""
    counts = agg_counts(grid, catalog)
    prices = price_features(records, grid)
    return [
        target_table(grid),
        counts["by_shop"],
        counts["by_shop_category"],
        counts["by_category"],
        counts["by_item"],
        counts["cumulative_by_item"],
        flag_new_items(counts["cumulative_by_item"]),
        agg_revenue_by_shop(grid),
        agg_revenue_by_shop_category(grid, catalog),
        prices["mean_by_item"],
        prices["weighted_mean_by_item"],
        prices["mean_by_item_shop"],
    ]


def assemble(
    grid: PanelGrid,
    catalog: CatalogTables,
    records: pd.DataFrame,
    spec: FeatureSpec = FeatureSpec(),
    split: SplitSpec = SplitSpec(),
) -> FeatureMatrix:
    """One row per grid cell at or after the burn-in block, with all feature columns."""
    cells = with_category(grid, catalog)
    rows = cells[cells["date_block"] >= spec.burn_in_blocks].reset_index(drop=True)
    month, year = calendar(rows["date_block"])
    rows = rows.assign(month=month, year=year)

    cols: dict[str, np.ndarray] = {
        "item_id": rows["item_id"].to_numpy(dtype=np.float64),
        "shop_id": rows["shop_id"].to_numpy(dtype=np.float64),
        "item_category": rows["item_category_id"].to_numpy(dtype=np.float64),
        "date_block_num": rows["date_block"].to_numpy(dtype=np.float64),
        "month": month.astype(np.float64),
        "year": year.astype(np.float64),
    }
    tables = lag_tables(grid, catalog, records)
    trends = {}
    for table in tables:
        lags = lag_join(rows, table, spec.lag_offsets)
        cols.update(lags)
        trends.update(trend_features(lags, table.name, spec.trend_pairs))
    cols.update(trends)

    blocks = rows["date_block"].to_numpy()
    train_mask = (blocks >= split.train_blocks.start) & (blocks < split.train_blocks.stop)
    levels = onehot_levels(rows, spec.onehot_fields, train_mask)
    cols.update(onehot(rows, spec.onehot_fields, levels))
    for key in spec.encodings:
        enc = mean_encode(cells, key, split.train_blocks)
        cols[enc.name] = enc.apply(rows)

    names = tuple(cols)
    values = np.column_stack([cols[n] for n in names]) if names else np.empty((len(rows), 0))
    return FeatureMatrix(
        feature_names=names,
        values=values,
        target=rows["item_cnt_month"].to_numpy(dtype=np.float64),
        date_block=blocks,
        row_keys=rows[["shop_id", "item_id"]].to_numpy(dtype=np.int64),
    )


def write_matrix(m: FeatureMatrix, path) -> None:
    """CSV: feature columns, then ``target``, ``date_block`` and any key column not already a feature."""
    df = pd.DataFrame(m.values, columns=list(m.feature_names))
    df["target"] = m.target
    df["date_block"] = m.date_block
    for i, key in enumerate(("shop_id", "item_id")):
        if key not in df.columns:
            df[key] = m.row_keys[:, i]
    df.to_csv(path, index=False, na_rep="", lineterminator="\n")


def read_matrix(path) -> FeatureMatrix:
    df = pd.read_csv(path, float_precision="round_trip")
    for col in META_COLUMNS:
        if col not in df.columns:
            raise SchemaError(f"{path}: missing column '{col}'")
    meta = {"target", "date_block"}
    names = [c for c in df.columns if c not in meta]
    return FeatureMatrix(
        feature_names=tuple(names),
        values=df[names].to_numpy(dtype=np.float64),
        target=df["target"].to_numpy(dtype=np.float64),
        date_block=df["date_block"].to_numpy(dtype=np.int64),
        row_keys=df[["shop_id", "item_id"]].to_numpy(dtype=np.int64),
    )
