import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from salesfc import synthetic  # noqa: E402
from salesfc.features import FeatureSpec  # noqa: E402
from salesfc.panel import CatalogTables, SplitSpec  # noqa: E402
from salesfc.pipeline import prepare  # noqa: E402

# Synthetic panel: 24 months, the last one held out as the test block.
SYNTH_SPLIT = SplitSpec(range(0, 22), 22, 23)


@pytest.fixture(scope="session")
def synth_panel():
    return synthetic.generate(24, 20, 50, seed=0)


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory, synth_panel):
    return synthetic.write_kaggle_dir(synth_panel, tmp_path_factory.mktemp("kaggle"))


@pytest.fixture(scope="session")
def synth_prepared(synth_panel):
    """Grid and features over all 24 months (test block labelled from the generator)."""
    return prepare(synth_panel.records, synth_panel.catalog, FeatureSpec(), SYNTH_SPLIT)


@pytest.fixture(scope="session")
def small_panel():
    """A 16-month panel of 4 shops x 6 items, small enough for naive oracles."""
    return synthetic.generate(16, 4, 6, n_categories=3, seed=7)


def make_records(rows):
    """rows: (date_block, shop, item, price, count[, day])."""
    out = []
    for r in rows:
        block, shop, item, price, cnt = r[:5]
        day = r[5] if len(r) > 5 else 1
        out.append((pd.Timestamp(2013 + block // 12, block % 12 + 1, day), block, shop, item, float(price), float(cnt)))
    return pd.DataFrame(out, columns=["date", "date_block", "shop_id", "item_id", "item_price", "item_cnt_day"])


def make_catalog(items: dict, shops=None):
    return CatalogTables(
        items=dict(items),
        categories=frozenset(items.values()),
        shops=frozenset(shops if shops is not None else []),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
