import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from salesfc import evalharness as eh
from salesfc import gbt
from salesfc.errors import SchemaError
from salesfc.panel import FeatureMatrix

finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_rmse_examples():
    assert eh.rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert eh.rmse([0.0, 2.0], [1.0, 1.0]) == 1.0
    with pytest.raises(ValueError):
        eh.rmse([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        eh.rmse([], [])


def test_mean_is_best_constant(rng):
    t = rng.normal(3, 2, size=200)
    best = eh.rmse(np.full_like(t, t.mean()), t)
    for c in np.linspace(t.mean() - 1, t.mean() + 1, 41):
        assert eh.rmse(np.full_like(t, c), t) >= best - 1e-12


@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=50), st.floats(-1e3, 1e3))
def test_rmse_symmetry_and_translation(pairs, c):
    p, t = np.array(pairs).T
    assert eh.rmse(p, t) == eh.rmse(t, p)
    assert eh.rmse(p + c, t + c) == pytest.approx(eh.rmse(p, t), rel=1e-9, abs=1e-6)


def test_search_singleton_and_determinism():
    space = eh.SearchSpace({"a": [3], "b": 1.0}, n_samples=4, seed=1)
    res = eh.random_search(space, lambda p: (0.0, p["a"] * p["b"]))
    assert res.best_params == {"a": 3, "b": 1.0}
    space = eh.SearchSpace({"a": {"low": 0, "high": 1}, "k": {"low": 1, "high": 5, "integer": True}}, 10, seed=7)
    r1 = eh.random_search(space, lambda p: (0.0, (p["a"] - 0.3) ** 2 + p["k"]))
    r2 = eh.random_search(space, lambda p: (0.0, (p["a"] - 0.3) ** 2 + p["k"]))
    assert r1.trial_frame().equals(r2.trial_frame().assign(seconds=r1.trial_frame()["seconds"]))
    assert r1.best_params == r2.best_params
    assert all(r1.best_val_rmse <= t["val_rmse"] for t in r1.trials)


def test_search_ties_pick_earliest_and_failures_skipped():
    space = eh.SearchSpace({"a": [1, 2, 3]}, n_samples=12, seed=0)

    def score(p):
        if p["a"] == 3:
            raise RuntimeError("boom")
        return 0.0, 1.0

    res = eh.random_search(space, score)
    ok = [t for t in res.trials if t["error"] is None]
    assert res.best_params == ok[0]["params"]
    assert any(t["error"] for t in res.trials)
    with pytest.raises(RuntimeError, match="all"):
        eh.random_search(eh.SearchSpace({"a": [3]}, 2), score)


def test_search_threads_match_serial():
    space = eh.default_gbt_space(n_samples=8, seed=3, n_rounds=5)
    fn = lambda p: (0.0, p["eta"] * p["max_depth"])  # noqa: E731
    a = eh.random_search(space, fn, n_jobs=1)
    b = eh.random_search(space, fn, n_jobs=4)
    assert [t["params"] for t in a.trials] == [t["params"] for t in b.trials]
    assert a.best_params == b.best_params


def test_search_space_validation():
    with pytest.raises(ValueError):
        eh.SearchSpace({"a": [1]}, n_samples=0)
    with pytest.raises(ValueError):
        eh.SearchSpace({"a": {"low": 2, "high": 1}})


def test_planted_optimum_on_stump():
    x = np.array([[0.0], [0.0], [1.0], [1.0]])
    m = FeatureMatrix(("x",), x, [0.0, 0.0, 2.0, 2.0], [0, 0, 0, 0], np.zeros((4, 2), dtype=int))
    space = eh.SearchSpace({"eta": [1.0, 0.0001], "max_depth": 1, "n_rounds": 1, "min_child_weight": 0,
                            "reg_lambda": 0.0, "reg_alpha": 0.0}, n_samples=6, seed=0)

    def score(p):
        model = gbt.fit(m, gbt.GbtParams.from_dict(p))
        pred = gbt.predict(model, m)
        return eh.rmse(pred, m.target), eh.rmse(pred, m.target)

    res = eh.random_search(space, score)
    assert {t["params"]["eta"] for t in res.trials} == {1.0, 0.0001}
    assert res.best_params["eta"] == 1.0


def test_trial_log_columns(tmp_path):
    space = eh.SearchSpace({"a": [1, 2]}, n_samples=5, seed=0)
    res = eh.random_search(space, lambda p: (0.1, 0.2))
    res.write_log(tmp_path / "t.csv")
    df = pd.read_csv(tmp_path / "t.csv")
    assert list(df.columns) == ["trial", "a", "train_rmse", "val_rmse", "seconds"]
    assert len(df) == 5


def test_report_sorting_and_table(tmp_path):
    reports = [eh.RunReport("ARIMA", 1.0, 0.98), eh.RunReport("XGBoost-style GBT", 0.7, 0.81, 0.9),
               eh.RunReport("LSTM", 0.8, 0.89)]
    ordered = [r.model for r in eh.sort_reports(reports)]
    assert ordered == ["XGBoost-style GBT", "LSTM", "ARIMA"]
    eh.write_report(reports, tmp_path / "r.csv")
    df = pd.read_csv(tmp_path / "r.csv")
    assert list(df.columns) == ["model", "train_rmse", "val_rmse", "test_rmse"]
    assert df["model"].tolist() == ordered
    lines = eh.render_table(reports).splitlines()
    assert len(lines) == 5 and lines[2].startswith("XGBoost-style GBT")
    assert len({line.index("Validation") if "Validation" in line else None for line in lines[:1]}) == 1
    with pytest.raises(ValueError):
        eh.RunReport("x", -1.0, 0.0)


def test_zero_predictor_rmse_formula(rng):
    t = rng.poisson(2, size=100).astype(float)
    assert eh.rmse(np.zeros_like(t), t) == pytest.approx(math.sqrt(np.mean(t ** 2)), rel=1e-15)


def test_submission_format_and_clipping(tmp_path):
    ids = pd.DataFrame({"ID": [0, 1, 2], "shop_id": [5, 5, 6], "item_id": [1, 2, 1]})
    preds = {(5, 1): 31.2, (5, 2): -0.4, (6, 1): 3.25}
    values = eh.write_submission(preds, ids, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert len(lines) == 4 and lines[0] == "ID,item_cnt_month"
    assert lines[1:] == ["0,20.0", "1,0.0", "2,3.25"]
    np.testing.assert_array_equal(values, [20.0, 0.0, 3.25])
    with pytest.raises(KeyError, match="2"):
        eh.write_submission({(5, 1): 1.0, (5, 2): 1.0}, ids, tmp_path / "x.csv")


def test_submission_rescore_is_exact(tmp_path, rng):
    n = 500
    ids = pd.DataFrame({"ID": np.arange(n), "shop_id": np.arange(n) // 50, "item_id": np.arange(n) % 50})
    preds = {(int(s), int(i)): float(v) for s, i, v in zip(ids["shop_id"], ids["item_id"], rng.uniform(-1, 21, n) / 3)}
    labels = pd.DataFrame({"ID": ids["ID"], "item_cnt_month": rng.poisson(2, n).astype(float)})
    values = eh.write_submission(preds, ids, tmp_path / "s.csv")
    in_memory = eh.rmse(values, labels["item_cnt_month"])
    assert eh.score_submission(tmp_path / "s.csv", labels) == in_memory


def test_read_submission_header_check(tmp_path):
    (tmp_path / "s.csv").write_text("id,item_cnt_month\n0,1.0\n")
    with pytest.raises(SchemaError):
        eh.read_submission(tmp_path / "s.csv")


def test_compare_models_roster_and_partial_failure(synth_prepared):
    from salesfc import arima, seqnet

    reports = eh.compare_models(
        synth_prepared,
        gbt.GbtParams(n_rounds=5, max_depth=3),
        seqnet.SeqNetParams(hidden_lstm=0 + 4, hidden_static=2, hidden_merge=4, epochs=1, batch_size=256),
        arima.ArimaOrder(9, 9, 9),  # absurd order: every series falls back, still yields a row
        lstm_window=4,
        lstm_max_train_samples=500,
    )
    assert sorted(r.model for r in reports) == sorted(eh.MODEL_NAMES)
    vals = [r.val_rmse for r in reports]
    assert vals == sorted(vals)
