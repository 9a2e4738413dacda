import numpy as np
import pandas as pd
import pytest

from conftest import make_catalog, make_records
from salesfc import ingest
from salesfc.errors import ReferentialIntegrityError, SchemaError

HEADER = "date,date_block_num,shop_id,item_id,item_price,item_cnt_day\n"


def write(path, text):
    path.write_text(text)
    return path


def test_negative_price_imputed_with_sibling_median(tmp_path):
    p = write(tmp_path / "s.csv", HEADER + "".join(
        f"0{d}.01.2013,0,5,7,{price},1\n" for d, price in [(1, 10), (2, 20), (3, 30), (4, -1)]
    ))
    records, report = ingest.load_sales(p)
    assert records["item_price"].tolist() == [10.0, 20.0, 30.0, 20.0]
    assert report.values_imputed == 1 and report.rows_dropped == 0
    assert report.rows_read == report.rows_kept + report.rows_dropped


def test_negative_price_without_siblings_is_dropped(tmp_path):
    p = write(tmp_path / "s.csv", HEADER + "01.01.2013,0,5,7,-1,1\n02.01.2013,0,5,8,4.5,2\n")
    records, report = ingest.load_sales(p)
    assert records["item_id"].tolist() == [8]
    assert report.rows_dropped == 1


def test_well_formed_row_passes_through(tmp_path):
    p = write(tmp_path / "s.csv", HEADER + "02.01.2013,0,59,22154,999.0,1.0\n")
    records, report = ingest.load_sales(p)
    row = records.iloc[0]
    assert (row["date"], row["date_block"], row["shop_id"], row["item_id"]) == (pd.Timestamp(2013, 1, 2), 0, 59, 22154)
    assert (row["item_price"], row["item_cnt_day"]) == (999.0, 1.0)
    assert report.rows_dropped == 0


def test_malformed_rows_dropped_and_counted(tmp_path):
    p = write(tmp_path / "s.csv", HEADER + "02.01.2013,0,5,7,3,1\nnot-a-date,0,5,7,3,1\n02.01.2013,0,x,7,3,1\n02.01.2013,0,5,7.5,3,1\n")
    records, report = ingest.load_sales(p)
    assert len(records) == 1
    assert report.rows_read == 4 and report.rows_dropped == 3


def test_missing_header_column_names_it(tmp_path):
    p = write(tmp_path / "s.csv", "date,date_block_num,shop_id,item_id,item_price\n02.01.2013,0,5,7,3\n")
    with pytest.raises(SchemaError, match="item_cnt_day"):
        ingest.load_sales(p)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        ingest.load_sales(tmp_path / "nope.csv")


def catalog_files(tmp_path, items_rows, cat_ids):
    items = write(tmp_path / "items.csv", "item_name,item_id,item_category_id\n"
                  + "".join(f'"item, {i}",{i},{c}\n' for i, c in items_rows))
    cats = write(tmp_path / "cats.csv", "item_category_name,item_category_id\n"
                 + "".join(f"cat {c},{c}\n" for c in cat_ids))
    shops = write(tmp_path / "shops.csv", 'shop_name,shop_id\n"Shop, A",0\n')
    return items, cats, shops


def test_load_catalog_single_row(tmp_path):
    cat = ingest.load_catalog(*catalog_files(tmp_path, [(32, 40)], [40]))
    assert cat.items == {32: 40}
    assert cat.shops == frozenset({0})


def test_load_catalog_dangling_category(tmp_path):
    with pytest.raises(ReferentialIntegrityError, match="32"):
        ingest.load_catalog(*catalog_files(tmp_path, [(32, 99)], [40]))


def test_load_catalog_empty_items(tmp_path):
    cat = ingest.load_catalog(*catalog_files(tmp_path, [], [40]))
    assert cat.items == {}


def test_build_grid_sums_daily_counts():
    rec = make_records([(0, 1, 1, 2.0, 3, 1), (0, 1, 1, 2.0, 4, 2)])
    grid = ingest.build_grid(rec, make_catalog({1: 0}))
    assert grid.cells["item_cnt_month"].tolist() == [7.0]
    assert grid.cells["revenue"].tolist() == [14.0]


def test_build_grid_clips_monthly_sum():
    rec = make_records([(0, 1, 1, 2.0, 15, 1), (0, 1, 1, 2.0, 10, 2)])
    report = ingest.CleaningReport(rows_read=2)
    grid = ingest.build_grid(rec, make_catalog({1: 0}), (0, 20), report)
    assert grid.cells["item_cnt_month"].tolist() == [20.0]
    assert report.clip_events == 1


def test_build_grid_zero_fills_universe():
    # shop A=1 sells item B=2 in block 5; shop 3 sells item C=4 in block 5
    rec = make_records([(5, 1, 2, 1.0, 2), (5, 3, 4, 1.0, 1)])
    grid = ingest.build_grid(rec, make_catalog({2: 0, 4: 0}))
    cells = grid.cells.set_index(["date_block", "shop_id", "item_id"])["item_cnt_month"]
    assert len(cells) == 4
    assert cells[(5, 1, 4)] == 0.0
    assert cells[(5, 1, 2)] == 2.0


def test_grid_conservation_and_uniqueness(small_panel):
    grid = ingest.build_grid(small_panel.records, small_panel.catalog, clip=(-1e9, 1e9))
    daily = small_panel.records.groupby("date_block")["item_cnt_day"].sum()
    monthly = grid.cells.groupby("date_block")["item_cnt_month"].sum()
    np.testing.assert_allclose(monthly.to_numpy(), daily.to_numpy())
    assert not grid.cells.duplicated(["date_block", "shop_id", "item_id"]).any()


def test_returns_floored_by_monthly_clip():
    rec = make_records([(0, 1, 1, 5.0, 1, 1), (0, 1, 1, 5.0, -3, 2)])
    grid = ingest.build_grid(rec, make_catalog({1: 0}))
    assert grid.cells["item_cnt_month"].tolist() == [0.0]
    assert grid.cells["revenue"].tolist() == [-10.0]


def test_grid_roundtrip_and_determinism(tmp_path, small_panel):
    g1 = ingest.build_grid(small_panel.records, small_panel.catalog)
    g2 = ingest.build_grid(small_panel.records, small_panel.catalog)
    ingest.write_grid(g1, tmp_path / "a.csv")
    ingest.write_grid(g2, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "date_block,shop_id,item_id,item_cnt_month,revenue"
    back = ingest.read_grid(tmp_path / "a.csv")
    pd.testing.assert_frame_equal(back.cells, g1.cells)


def test_forecast_block_carries_missing_targets(small_panel):
    grid = ingest.build_grid(small_panel.records, small_panel.catalog)
    pairs = pd.DataFrame({"ID": [0, 1], "shop_id": [0, 1], "item_id": [0, 3]})
    out = ingest.append_forecast_block(grid, pairs, 16)
    new = out.cells[out.cells["date_block"] == 16]
    assert len(new) == 2 and new["item_cnt_month"].isna().all()
    with pytest.raises(ValueError):
        ingest.append_forecast_block(out, pairs, 16)


def test_load_kaggle_dir(synth_dir):
    records, report, catalog = ingest.load_kaggle_dir(synth_dir)
    assert report.rows_dropped == 0 and len(records) == report.rows_read
    assert set(records["item_id"]).issubset(catalog.items)
    test = ingest.load_test(synth_dir / "test.csv")
    assert list(test.columns) == ["ID", "shop_id", "item_id"]
