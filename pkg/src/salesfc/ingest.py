"""Raw CSV parsing, cleaning and monthly aggregation into a :class:`PanelGrid`."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from salesfc.errors import ReferentialIntegrityError, SchemaError
from salesfc.panel import GRID_COLUMNS, TARGET_HI, TARGET_LO, CatalogTables, PanelGrid

logger = logging.getLogger(__name__)

SALES_HEADER = ["date", "date_block_num", "shop_id", "item_id", "item_price", "item_cnt_day"]
ITEMS_HEADER = ["item_name", "item_id", "item_category_id"]
CATEGORIES_HEADER = ["item_category_name", "item_category_id"]
SHOPS_HEADER = ["shop_name", "shop_id"]
TEST_HEADER = ["ID", "shop_id", "item_id"]

KAGGLE_FILES = {
    "sales": "sales_train.csv",
    "items": "items.csv",
    "categories": "item_categories.csv",
    "shops": "shops.csv",
    "test": "test.csv",
}


@dataclass
class CleaningReport:
    rows_read: int = 0
    rows_dropped: int = 0
    values_imputed: int = 0
    clip_events: int = 0

    @property
    def rows_kept(self) -> int:
        return self.rows_read - self.rows_dropped

    def summary(self) -> str:
        return (
            f"rows read {self.rows_read}, kept {self.rows_kept}, dropped {self.rows_dropped}, "
            f"imputed {self.values_imputed}, clipped {self.clip_events}"
        )


def _read_table(path, header: list[str], **kwargs) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, **kwargs)
    except pd.errors.EmptyDataError:
        return pd.DataFrame({c: pd.Series(dtype=str) for c in header})
    df.columns = [c.strip() for c in df.columns]
    for col in header:
        if col not in df.columns:
            raise SchemaError(f"{path}: missing column '{col}' (have {list(df.columns)})")
    return df


def _count_data_lines(path: Path) -> int:
    with open(path, "rb") as fh:
        lines = sum(1 for line in fh if line.strip())
    return max(lines - 1, 0)


def _parse_dates(raw: pd.Series) -> pd.Series:
    dates = pd.to_datetime(raw, format="%d.%m.%Y", errors="coerce")
    retry = dates.isna()
    if retry.any():
        dates[retry] = pd.to_datetime(raw[retry], format="%Y-%m-%d", errors="coerce")
    return dates


def load_sales(path) -> tuple[pd.DataFrame, CleaningReport]:
    """Parse ``sales_train.csv`` and clean it.

    Malformed rows (unparseable date or numbers, negative block, negative or
    non-integer ids) are dropped. A negative price is replaced by the median
    of the valid prices of the same (shop, item); without such siblings the
    row is dropped. Returns the cleaned table and a :class:`CleaningReport`.
    """
    path = Path(path)
    df = _read_table(path, SALES_HEADER, on_bad_lines="skip")
    report = CleaningReport(rows_read=_count_data_lines(path))

    out = pd.DataFrame(
        {
            "date": _parse_dates(df["date"].str.strip()),
            "date_block": pd.to_numeric(df["date_block_num"], errors="coerce"),
            "shop_id": pd.to_numeric(df["shop_id"], errors="coerce"),
            "item_id": pd.to_numeric(df["item_id"], errors="coerce"),
            "item_price": pd.to_numeric(df["item_price"], errors="coerce"),
            "item_cnt_day": pd.to_numeric(df["item_cnt_day"], errors="coerce"),
        }
    )
    ok = out.notna().all(axis=1)
    numeric = out[["item_price", "item_cnt_day"]].to_numpy(dtype=np.float64, na_value=np.nan)
    ok &= np.isfinite(numeric).all(axis=1)
    for col in ("date_block", "shop_id", "item_id"):
        vals = out[col]
        ok &= (vals >= 0) & (vals == np.floor(vals))
    out = out[ok].copy()

    bad_price = out["item_price"] < 0
    if bad_price.any():
        good = out.loc[~bad_price]
        medians = good.groupby(["shop_id", "item_id"])["item_price"].median()
        keys = pd.MultiIndex.from_frame(out.loc[bad_price, ["shop_id", "item_id"]])
        fill = medians.reindex(keys).to_numpy()
        has_fill = ~np.isnan(fill)
        idx = out.index[bad_price]
        out.loc[idx[has_fill], "item_price"] = fill[has_fill]
        out = out.drop(index=idx[~has_fill])
        report.values_imputed += int(has_fill.sum())

    out = out.astype(
        {"date_block": np.int64, "shop_id": np.int64, "item_id": np.int64,
         "item_price": np.float64, "item_cnt_day": np.float64}
    ).reset_index(drop=True)
    report.rows_dropped = report.rows_read - len(out)
    logger.info("%s: %s", path.name, report.summary())
    return out, report


def load_catalog(items_path, categories_path, shops_path) -> CatalogTables:
    items = _read_table(items_path, ITEMS_HEADER)
    cats = _read_table(categories_path, CATEGORIES_HEADER)
    shops = _read_table(shops_path, SHOPS_HEADER)
    try:
        item_ids = items["item_id"].astype(np.int64).to_numpy()
        item_cats = items["item_category_id"].astype(np.int64).to_numpy()
        cat_ids = frozenset(cats["item_category_id"].astype(np.int64).tolist())
        shop_ids = frozenset(shops["shop_id"].astype(np.int64).tolist())
    except ValueError as exc:
        raise SchemaError(f"non-integer id in catalog tables: {exc}") from exc
    dangling = sorted({int(i) for i, c in zip(item_ids, item_cats) if int(c) not in cat_ids})
    if dangling:
        raise ReferentialIntegrityError(
            f"items reference undefined categories: item ids {dangling[:50]}"
        )
    mapping = {int(i): int(c) for i, c in zip(item_ids, item_cats)}
    return CatalogTables(items=mapping, categories=cat_ids, shops=shop_ids)


def load_test(path) -> pd.DataFrame:
    df = _read_table(path, TEST_HEADER)
    try:
        return df[TEST_HEADER].astype(np.int64).reset_index(drop=True)
    except ValueError as exc:
        raise SchemaError(f"{path}: non-integer id: {exc}") from exc


def load_kaggle_dir(data_dir) -> tuple[pd.DataFrame, CleaningReport, CatalogTables]:
    data_dir = Path(data_dir)
    records, report = load_sales(data_dir / KAGGLE_FILES["sales"])
    catalog = load_catalog(
        data_dir / KAGGLE_FILES["items"],
        data_dir / KAGGLE_FILES["categories"],
        data_dir / KAGGLE_FILES["shops"],
    )
    return records, report, catalog


def _block_universe(records: pd.DataFrame) -> pd.DataFrame:
    parts = []
    for block, grp in records.groupby("date_block", sort=True):
        shops = np.unique(grp["shop_id"].to_numpy())
        items = np.unique(grp["item_id"].to_numpy())
        parts.append(
            pd.DataFrame(
                {
                    "date_block": np.full(len(shops) * len(items), block, dtype=np.int64),
                    "shop_id": np.repeat(shops, len(items)),
                    "item_id": np.tile(items, len(shops)),
                }
            )
        )
    if not parts:
        return pd.DataFrame({c: pd.Series(dtype=np.int64) for c in ("date_block", "shop_id", "item_id")})
    return pd.concat(parts, ignore_index=True)


def build_grid(
    records: pd.DataFrame,
    catalog: CatalogTables,
    clip: tuple[float, float] = (TARGET_LO, TARGET_HI),
    report: CleaningReport | None = None,
) -> PanelGrid:
    """Aggregate daily rows into a zero-filled monthly grid.

    The universe of a block is every shop seen in that block crossed with
    every item seen in that block. Monthly counts are summed (returns
    included) and then clipped to ``clip``.
    """
    lo, hi = clip
    if len(records):
        catalog.category_of(np.unique(records["item_id"].to_numpy()))
    keyed = records.assign(revenue=records["item_price"] * records["item_cnt_day"])
    monthly = (
        keyed.groupby(["date_block", "shop_id", "item_id"], sort=True)[["item_cnt_day", "revenue"]]
        .sum()
        .reset_index()
        .rename(columns={"item_cnt_day": "item_cnt_month"})
    )
    cells = _block_universe(records).merge(
        monthly, on=["date_block", "shop_id", "item_id"], how="left"
    )
    cells[["item_cnt_month", "revenue"]] = cells[["item_cnt_month", "revenue"]].fillna(0.0)
    raw = cells["item_cnt_month"].to_numpy()
    clipped = np.clip(raw, lo, hi)
    if report is not None:
        report.clip_events = int(np.count_nonzero(clipped != raw))
    cells["item_cnt_month"] = clipped
    cells = cells.sort_values(["date_block", "shop_id", "item_id"], kind="mergesort")
    return PanelGrid(cells[GRID_COLUMNS].reset_index(drop=True), clip=(lo, hi))


def append_forecast_block(grid: PanelGrid, pairs: pd.DataFrame, block: int) -> PanelGrid:
    """Add unlabeled cells (NaN target and revenue) for ``pairs`` at ``block``."""
    if block in set(grid.blocks.tolist()):
        raise ValueError(f"block {block} already present in the grid")
    new = pd.DataFrame(
        {
            "date_block": np.full(len(pairs), block, dtype=np.int64),
            "shop_id": pairs["shop_id"].to_numpy(dtype=np.int64),
            "item_id": pairs["item_id"].to_numpy(dtype=np.int64),
            "item_cnt_month": np.nan,
            "revenue": np.nan,
        }
    ).drop_duplicates(["shop_id", "item_id"])
    cells = pd.concat([grid.cells, new], ignore_index=True)
    cells = cells.sort_values(["date_block", "shop_id", "item_id"], kind="mergesort")
    return PanelGrid(cells.reset_index(drop=True), clip=grid.clip)


def write_grid(grid: PanelGrid, path) -> None:
    grid.cells[GRID_COLUMNS].to_csv(path, index=False, lineterminator="\n", na_rep="")


def read_grid(path) -> PanelGrid:
    df = pd.read_csv(path, float_precision="round_trip")
    for col in GRID_COLUMNS:
        if col not in df.columns:
            raise SchemaError(f"{path}: missing column '{col}'")
    df = df.astype({"date_block": np.int64, "shop_id": np.int64, "item_id": np.int64,
                    "item_cnt_month": np.float64, "revenue": np.float64})
    return PanelGrid(df[GRID_COLUMNS])


def revenue_by_month(records: pd.DataFrame) -> pd.DataFrame:
    """Total revenue per date block (the one EDA summary kept)."""
    rev = (records["item_price"] * records["item_cnt_day"]).groupby(records["date_block"]).sum()
    return rev.rename("revenue").reset_index()
