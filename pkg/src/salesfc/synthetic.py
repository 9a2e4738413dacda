"""Seeded synthetic sales panel in the competition file layout.

Monthly counts follow ``y[t] ~ Poisson(a * y[t-1] + shop_effect + season[t % 12])``
clipped to the target range, then are spread over a few daily
transactions with item-specific prices.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from salesfc.panel import SALES_COLUMNS, TARGET_HI, CatalogTables


@dataclass
class SyntheticPanel:
    counts: np.ndarray  # (months, shops, items), clipped monthly targets
    records: pd.DataFrame
    catalog: CatalogTables
    shop_effect: np.ndarray
    season: np.ndarray

    @property
    def n_months(self) -> int:
        return self.counts.shape[0]


def generate(
    n_months: int = 24,
    n_shops: int = 20,
    n_items: int = 50,
    n_categories: int = 5,
    lag_coef: float = 0.6,
    seed: int = 0,
) -> SyntheticPanel:
    rng = np.random.default_rng(seed)
    shop_effect = rng.uniform(0.2, 2.5, size=n_shops)
    season = 1.0 + 0.9 * np.sin(2 * np.pi * np.arange(12) / 12)
    item_cat = rng.integers(0, n_categories, size=n_items)
    base_price = rng.uniform(50, 500, size=n_items).round(2)

    counts = np.zeros((n_months, n_shops, n_items))
    prev = rng.poisson(2.0 * shop_effect[:, None], size=(n_shops, n_items)).astype(float)
    for t in range(n_months):
        mu = lag_coef * prev + shop_effect[:, None] + season[t % 12]
        y = np.minimum(rng.poisson(mu).astype(float), TARGET_HI)
        counts[t] = y
        prev = y

    rows = []
    start = dt.date(2013, 1, 1)
    for t in range(n_months):
        year, month = start.year + t // 12, t % 12 + 1
        for s in range(n_shops):
            for i in range(n_items):
                c = int(counts[t, s, i])
                if c == 0:
                    continue
                n_tx = int(min(c, rng.integers(1, 4)))
                parts = rng.multinomial(c - n_tx, np.full(n_tx, 1.0 / n_tx)) + 1
                days = np.sort(rng.integers(1, 29, size=n_tx))
                drift = 1.0 + 0.01 * t
                for q, d in zip(parts, days):
                    price = round(base_price[i] * drift * rng.uniform(0.95, 1.05), 2)
                    rows.append((pd.Timestamp(year, month, int(d)), t, s, i, price, float(q)))
    records = pd.DataFrame(rows, columns=SALES_COLUMNS)
    catalog = CatalogTables(
        items={int(i): int(c) for i, c in enumerate(item_cat)},
        categories=frozenset(range(n_categories)),
        shops=frozenset(range(n_shops)),
    )
    return SyntheticPanel(counts, records, catalog, shop_effect, season)


def write_kaggle_dir(panel: SyntheticPanel, out_dir, forecast_month: int | None = None) -> Path:
    """Write the five competition CSVs plus ``test_labels.csv``.

    Sales of ``forecast_month`` (default: the last month) are withheld from
    ``sales_train.csv``; ``test.csv`` lists every shop x item pair of that
    month and ``test_labels.csv`` holds the true clipped counts by ID.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fm = panel.n_months - 1 if forecast_month is None else forecast_month
    rec = panel.records[panel.records["date_block"] < fm]
    sales = pd.DataFrame(
        {
            "date": rec["date"].dt.strftime("%d.%m.%Y"),
            "date_block_num": rec["date_block"],
            "shop_id": rec["shop_id"],
            "item_id": rec["item_id"],
            "item_price": rec["item_price"],
            "item_cnt_day": rec["item_cnt_day"],
        }
    )
    sales.to_csv(out / "sales_train.csv", index=False, lineterminator="\n")
    items = sorted(panel.catalog.items.items())
    pd.DataFrame(
        {
            "item_name": [f"item {i}" for i, _ in items],
            "item_id": [i for i, _ in items],
            "item_category_id": [c for _, c in items],
        }
    ).to_csv(out / "items.csv", index=False, lineterminator="\n")
    cats = sorted(panel.catalog.categories)
    pd.DataFrame({"item_category_name": [f"category {c}" for c in cats], "item_category_id": cats}).to_csv(
        out / "item_categories.csv", index=False, lineterminator="\n"
    )
    shops = sorted(panel.catalog.shops)
    pd.DataFrame({"shop_name": [f"shop {s}" for s in shops], "shop_id": shops}).to_csv(
        out / "shops.csv", index=False, lineterminator="\n"
    )
    n_shops, n_items = panel.counts.shape[1:]
    shop_ids = np.repeat(np.arange(n_shops), n_items)
    item_ids = np.tile(np.arange(n_items), n_shops)
    ids = np.arange(len(shop_ids))
    pd.DataFrame({"ID": ids, "shop_id": shop_ids, "item_id": item_ids}).to_csv(
        out / "test.csv", index=False, lineterminator="\n"
    )
    pd.DataFrame({"ID": ids, "item_cnt_month": panel.counts[fm][shop_ids, item_ids]}).to_csv(
        out / "test_labels.csv", index=False, lineterminator="\n"
    )
    return out
