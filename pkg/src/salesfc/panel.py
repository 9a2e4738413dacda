"""Shared data model: sales records, catalog, monthly grid, feature matrix, splits."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from salesfc.errors import EmptyPartitionError, ReferentialIntegrityError

#: Missing-value sentinel for feature cells. Distinct from 0 (a real sales value).
MISSING = np.nan

TARGET_LO = 0.0
TARGET_HI = 20.0

SALES_COLUMNS = ["date", "date_block", "shop_id", "item_id", "item_price", "item_cnt_day"]
GRID_COLUMNS = ["date_block", "shop_id", "item_id", "item_cnt_month", "revenue"]


def clip_target(x, lo: float = TARGET_LO, hi: float = TARGET_HI):
    """Clamp ``x`` into ``[lo, hi]``; works on scalars and arrays."""
    if lo > hi:
        raise ValueError(f"clip bounds reversed: lo={lo} > hi={hi}")
    if np.isscalar(x):
        return min(hi, max(lo, x))
    return np.minimum(hi, np.maximum(lo, x))


@dataclass(frozen=True)
class SalesRecord:
    date: dt.date
    date_block: int
    shop_id: int
    item_id: int
    item_price: float
    item_cnt_day: float

    def __post_init__(self):
        if self.date_block < 0:
            raise ValueError(f"date_block must be >= 0, got {self.date_block}")


def sales_frame(records: Iterable[SalesRecord]) -> pd.DataFrame:
    """Build the columnar sales table used throughout from individual records."""
    rows = [
        (pd.Timestamp(r.date), r.date_block, r.shop_id, r.item_id, r.item_price, r.item_cnt_day)
        for r in records
    ]
    df = pd.DataFrame(rows, columns=SALES_COLUMNS)
    return df.astype(
        {
            "date_block": np.int64,
            "shop_id": np.int64,
            "item_id": np.int64,
            "item_price": np.float64,
            "item_cnt_day": np.float64,
        }
    )


@dataclass(frozen=True)
class CatalogTables:
    items: dict[int, int]
    categories: frozenset[int]
    shops: frozenset[int]

    def category_of(self, item_ids) -> np.ndarray:
        """Vectorised item -> category lookup; raises on unknown items."""
        item_ids = np.asarray(item_ids, dtype=np.int64)
        mapped = pd.Series(item_ids).map(self.items)
        if mapped.isna().any():
            bad = sorted(set(item_ids[mapped.isna().to_numpy()].tolist()))
            raise ReferentialIntegrityError(f"items without a category: {bad[:20]}")
        return mapped.to_numpy(dtype=np.int64)


@dataclass(frozen=True)
class PanelGrid:
    """Dense month x (shop, item) grid.

    ``cells`` is a DataFrame with :data:`GRID_COLUMNS`, sorted by
    (date_block, shop_id, item_id) and unique on that key. Cells for unsold
    pairs carry a zero count; rows of an unlabeled forecast month carry NaN.
    """

    cells: pd.DataFrame
    clip: tuple[float, float] = (TARGET_LO, TARGET_HI)

    def __post_init__(self):
        missing = [c for c in GRID_COLUMNS if c not in self.cells.columns]
        if missing:
            raise ValueError(f"grid missing columns {missing}")
        if self.cells.duplicated(["date_block", "shop_id", "item_id"]).any():
            raise ValueError("grid has duplicate (date_block, shop_id, item_id) cells")

    @property
    def blocks(self) -> np.ndarray:
        return np.unique(self.cells["date_block"].to_numpy())

    def __len__(self) -> int:
        return len(self.cells)


@dataclass(frozen=True)
class SplitSpec:
    train_blocks: range = range(0, 33)
    validation_block: int = 33
    test_block: int = 34

    def __post_init__(self):
        if len(self.train_blocks) == 0:
            raise ValueError("train_blocks is empty")
        if not max(self.train_blocks) < self.validation_block < self.test_block:
            raise ValueError(
                "split must satisfy max(train_blocks) < validation_block < test_block, got "
                f"train={self.train_blocks}, val={self.validation_block}, test={self.test_block}"
            )

    @classmethod
    def from_last_train(cls, last_train: int, first_train: int = 0) -> "SplitSpec":
        return cls(range(first_train, last_train + 1), last_train + 1, last_train + 2)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    feature_names: tuple[str, ...]
    values: np.ndarray
    target: np.ndarray
    date_block: np.ndarray
    row_keys: np.ndarray
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        names = tuple(self.feature_names)
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate feature names: {dupes}")
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(names):
            raise ValueError(f"values shape {values.shape} does not match {len(names)} features")
        target = np.asarray(self.target, dtype=np.float64)
        blocks = np.asarray(self.date_block, dtype=np.int64)
        keys = np.asarray(self.row_keys, dtype=np.int64).reshape(-1, 2)
        n = values.shape[0]
        if not (len(target) == len(blocks) == len(keys) == n):
            raise ValueError("values, target, date_block and row_keys must have equal row counts")
        for arr in (values, target, blocks, keys):
            arr.setflags(write=False)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "date_block", blocks)
        object.__setattr__(self, "row_keys", keys)
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self._index[name]]

    def columns(self, names: Sequence[str]) -> np.ndarray:
        """Values for ``names`` in the given order; raises KeyError listing absent names."""
        absent = [n for n in names if n not in self._index]
        if absent:
            raise KeyError(f"feature columns not present: {absent[:10]}")
        return self.values[:, [self._index[n] for n in names]]

    def has(self, name: str) -> bool:
        return name in self._index

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        return FeatureMatrix(
            self.feature_names,
            self.values[rows],
            self.target[rows],
            self.date_block[rows],
            self.row_keys[rows],
        )

    def with_target(self, target) -> "FeatureMatrix":
        return FeatureMatrix(self.feature_names, self.values, target, self.date_block, self.row_keys)


def split_rows(m: FeatureMatrix, s: SplitSpec) -> tuple[FeatureMatrix, FeatureMatrix, FeatureMatrix]:
    """Partition rows by date block into (train, validation, test).

    Rows whose block belongs to no partition are dropped. Raises
    :class:`EmptyPartitionError` if any partition ends up empty.
    """
    blocks = m.date_block
    train_mask = (blocks >= s.train_blocks.start) & (blocks < s.train_blocks.stop)
    if s.train_blocks.step != 1:
        train_mask &= np.isin(blocks, np.asarray(s.train_blocks))
    parts = []
    for name, mask in (
        ("train", train_mask),
        ("validation", blocks == s.validation_block),
        ("test", blocks == s.test_block),
    ):
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            raise EmptyPartitionError(f"empty partition: {name} has no rows under {s}")
        parts.append(m.take(idx))
    return tuple(parts)
