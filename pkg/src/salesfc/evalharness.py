"""RMSE scoring, random hyperparameter search, model comparison reports and submissions."""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import pandas as pd

from salesfc.errors import SchemaError
from salesfc.panel import TARGET_HI, TARGET_LO

logger = logging.getLogger(__name__)

MODEL_NAMES = ("XGBoost-style GBT", "LSTM", "ARIMA")


def rmse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    if p.size == 0:
        raise ValueError("rmse of an empty sequence")
    return math.sqrt(float(np.mean((p - t) ** 2)))


# --- random search ------------------------------------------------------------------


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float
    integer: bool = False

    def __post_init__(self):
        if not self.low <= self.high:
            raise ValueError(f"empty range [{self.low}, {self.high}]")

    def sample(self, rng: np.random.Generator):
        if self.integer:
            return int(rng.integers(int(self.low), int(self.high) + 1))
        return float(rng.uniform(self.low, self.high))


@dataclass(frozen=True)
class Choice:
    values: tuple

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValueError("empty grid")

    def sample(self, rng: np.random.Generator):
        v = self.values[int(rng.integers(len(self.values)))]
        return v.item() if hasattr(v, "item") else v


def _dimension(spec):
    if isinstance(spec, (Uniform, Choice)):
        return spec
    if isinstance(spec, Mapping):
        return Uniform(float(spec["low"]), float(spec["high"]), bool(spec.get("integer", False)))
    if isinstance(spec, (list, tuple)):
        return Choice(tuple(spec))
    return Choice((spec,))


@dataclass
class SearchSpace:
    """Parameter name -> grid (list), range (``{"low", "high"[, "integer"]}``) or fixed scalar."""

    dims: dict[str, Any]
    n_samples: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        self.dims = {k: _dimension(v) for k, v in self.dims.items()}

    def draws(self) -> list[dict]:
        rng = np.random.default_rng(self.seed)
        return [{k: d.sample(rng) for k, d in self.dims.items()} for _ in range(self.n_samples)]

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        return cls(dict(d.get("space", {})), int(d.get("n_samples", 60)), int(d.get("seed", 0)))


def default_gbt_space(n_samples: int = 60, seed: int = 0, n_rounds: int = 200) -> SearchSpace:
    return SearchSpace(
        {
            "eta": Uniform(0.01, 0.3),
            "max_depth": Uniform(3, 10, integer=True),
            "min_child_weight": Uniform(1, 50),
            "reg_lambda": Uniform(0.0, 1.0),
            "reg_alpha": Uniform(0.0, 1.0),
            "n_rounds": n_rounds,
        },
        n_samples,
        seed,
    )


@dataclass
class SearchResult:
    best_params: dict
    best_val_rmse: float
    trials: list[dict] = field(default_factory=list)

    def trial_frame(self) -> pd.DataFrame:
        rows = []
        for t in self.trials:
            row = {"trial": t["trial"], **t["params"]}
            row.update(train_rmse=t["train_rmse"], val_rmse=t["val_rmse"], seconds=t["seconds"])
            rows.append(row)
        return pd.DataFrame(rows)

    def write_log(self, path) -> None:
        self.trial_frame().to_csv(path, index=False, lineterminator="\n")


def random_search(
    space: SearchSpace,
    fit_and_score: Callable[[dict], tuple[float, float] | tuple[float, float, dict]],
    n_jobs: int = 1,
) -> SearchResult:
    """Evaluate ``space.n_samples`` seeded draws; lowest validation RMSE wins, earliest on ties.

    ``fit_and_score(params)`` returns ``(train_rmse, val_rmse)`` and may add a
    dict of parameter updates (e.g. the best boosting round). Failing trials
    are logged and skipped.
    """
    draws = space.draws()

    def run(i_params):
        i, params = i_params
        start = time.perf_counter()
        try:
            out = fit_and_score(dict(params))
        except Exception as exc:  # noqa: BLE001 - a failed trial must not stop the search
            logger.warning("trial %d failed: %s", i, exc)
            return {"trial": i, "params": params, "train_rmse": math.nan, "val_rmse": math.nan,
                    "seconds": time.perf_counter() - start, "error": repr(exc)}
        tr, va = out[0], out[1]
        if len(out) > 2 and out[2]:
            params = {**params, **out[2]}
        return {"trial": i, "params": params, "train_rmse": float(tr), "val_rmse": float(va),
                "seconds": time.perf_counter() - start, "error": None}

    items = list(enumerate(draws))
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trials = list(pool.map(run, items))
    else:
        trials = [run(it) for it in items]

    best = None
    for t in trials:
        if t["error"] is None and (best is None or t["val_rmse"] < best["val_rmse"]):
            best = t
    if best is None:
        raise RuntimeError(f"all {len(trials)} trials failed")
    return SearchResult(dict(best["params"]), best["val_rmse"], trials)


# --- reports ---------------------------------------------------------------------------


@dataclass
class RunReport:
    model: str
    train_rmse: float = math.nan
    val_rmse: float = math.nan
    test_rmse: float | None = None
    params: dict = field(default_factory=dict)
    wall_time: float = 0.0
    error: str | None = None

    def __post_init__(self):
        for v in (self.train_rmse, self.val_rmse, self.test_rmse):
            if v is not None and not math.isnan(v) and v < 0:
                raise ValueError("RMSE values must be >= 0")


REPORT_COLUMNS = ["model", "train_rmse", "val_rmse", "test_rmse"]


def report_frame(reports: Sequence[RunReport]) -> pd.DataFrame:
    rows = [
        {
            "model": r.model,
            "train_rmse": r.train_rmse,
            "val_rmse": r.val_rmse,
            "test_rmse": math.nan if r.test_rmse is None else r.test_rmse,
        }
        for r in sort_reports(reports)
    ]
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def sort_reports(reports: Sequence[RunReport]) -> list[RunReport]:
    """Ascending validation RMSE; failed runs last."""
    return sorted(reports, key=lambda r: (math.isnan(r.val_rmse), r.val_rmse if not math.isnan(r.val_rmse) else 0.0))


def write_report(reports: Sequence[RunReport], path) -> None:
    report_frame(reports).to_csv(path, index=False, na_rep="", lineterminator="\n")


def render_table(reports: Sequence[RunReport]) -> str:
    header = ("Model", "Training RMSE", "Validation RMSE", "Test RMSE")

    def fmt(v):
        return "-" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6f}"

    body = []
    for r in sort_reports(reports):
        row = (r.model, fmt(r.train_rmse), fmt(r.val_rmse), fmt(r.test_rmse))
        if r.error:
            row = (r.model, "FAILED", r.error[:40], "-")
        body.append(row)
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(str(c).ljust(w) for c, w in zip(row, widths)) for row in body]
    return "\n".join(lines)


# --- submissions -----------------------------------------------------------------------


def write_submission(predictions: Mapping[tuple[int, int], float] | pd.DataFrame, test_ids: pd.DataFrame, path) -> np.ndarray:
    """Write ``ID,item_cnt_month`` in ``test_ids`` order, clipped to the target range.

    ``predictions`` maps (shop_id, item_id) to a value, or is a frame with
    ``shop_id, item_id, prediction``. Returns the written (clipped) values.
    """
    if isinstance(predictions, pd.DataFrame):
        predictions = {
            (int(s), int(i)): float(p)
            for s, i, p in predictions[["shop_id", "item_id", "prediction"]].itertuples(index=False)
        }
    keys = list(zip(test_ids["shop_id"].astype(int), test_ids["item_id"].astype(int)))
    missing = [int(i) for i, k in zip(test_ids["ID"], keys) if k not in predictions]
    if missing:
        raise KeyError(f"no prediction for test ids {missing[:50]}")
    values = np.clip(np.array([predictions[k] for k in keys], dtype=np.float64), TARGET_LO, TARGET_HI)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["ID", "item_cnt_month"])
        for i, v in zip(test_ids["ID"].astype(int), values):
            out.writerow([i, repr(float(v))])
    return values


def read_submission(path) -> pd.DataFrame:
    df = pd.read_csv(path, float_precision="round_trip", dtype={"ID": np.int64, "item_cnt_month": np.float64})
    if list(df.columns) != ["ID", "item_cnt_month"]:
        raise SchemaError(f"{path}: header must be exactly ID,item_cnt_month, got {list(df.columns)}")
    return df


def score_submission(path, labels: pd.DataFrame) -> float:
    """RMSE of a written submission against ``labels`` (``ID,item_cnt_month``), in submission order."""
    sub = read_submission(path)
    truth = labels.set_index("ID")["item_cnt_month"].reindex(sub["ID"]).to_numpy(dtype=np.float64)
    if np.isnan(truth).any():
        raise KeyError("labels missing for some submission ids")
    return rmse(sub["item_cnt_month"].to_numpy(), truth)


def compare_models(
    prep,
    gbt_params=None,
    seqnet_params=None,
    arima_order=None,
    *,
    lstm_window: int = 12,
    lstm_max_train_samples: int | None = None,
    arima_min_nonzero: int = 3,
    n_jobs: int = 1,
) -> list[RunReport]:
    """Run the three learners on one prepared panel; a failing model yields a marked row."""
    from salesfc import arima, gbt, pipeline, seqnet

    runs = {
        "XGBoost-style GBT": lambda: pipeline.run_gbt(prep, gbt_params or gbt.GbtParams())[1],
        "LSTM": lambda: pipeline.run_lstm(
            prep, seqnet_params or seqnet.SeqNetParams(), lstm_window, lstm_max_train_samples
        )[1],
        "ARIMA": lambda: pipeline.run_arima(
            prep, arima_order or arima.ArimaOrder(), arima_min_nonzero, n_jobs
        )[1],
    }
    reports = []
    for name in MODEL_NAMES:
        start = time.perf_counter()
        try:
            reports.append(runs[name]())
        except Exception as exc:  # noqa: BLE001 - partial tables are allowed
            logger.exception("%s failed", name)
            reports.append(RunReport(name, wall_time=time.perf_counter() - start, error=f"{type(exc).__name__}: {exc}"))
    return sort_reports(reports)
