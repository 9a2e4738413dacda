"""Per-series ARIMA(p, d, q) by two-stage least squares (Hannan-Rissanen).

Stage 1 fits a long autoregression to get innovation proxies; stage 2
regresses the differenced series on an intercept, ``p`` own lags and ``q``
lagged proxies. Series that are too short, too sparse or give a singular
design fall back to last-value persistence.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from salesfc.errors import InsufficientDataError, NumericError
from salesfc.panel import TARGET_HI, TARGET_LO, PanelGrid, SplitSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ArimaOrder:
    p: int = 1
    d: int = 1
    q: int = 1

    def __post_init__(self):
        if min(self.p, self.d, self.q) < 0:
            raise ValueError(f"ARIMA orders must be >= 0, got {self}")

    @classmethod
    def parse(cls, value) -> "ArimaOrder":
        if isinstance(value, ArimaOrder):
            return value
        if isinstance(value, str):
            value = [int(v) for v in value.replace("(", "").replace(")", "").split(",")]
        return cls(*[int(v) for v in value])


@dataclass(frozen=True)
class ArimaFit:
    order: ArimaOrder
    phi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    theta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    intercept: float = 0.0
    sigma2: float = 0.0
    fallback_used: bool = False

    @classmethod
    def naive(cls, order: ArimaOrder, sigma2: float = 0.0) -> "ArimaFit":
        return cls(order, np.zeros(order.p), np.zeros(order.q), 0.0, sigma2, True)


def difference(series, d: int) -> np.ndarray:
    """Apply ``d`` first differences."""
    x = np.asarray(series, dtype=np.float64)
    if len(x) <= d:
        raise InsufficientDataError(f"need more than {d} points to difference {d} times, got {len(x)}")
    for _ in range(d):
        x = np.diff(x)
    return x


def min_length(order: ArimaOrder) -> int:
    return max(8, order.p + order.q + order.d + 4)


def _long_ar_order(n: int, order: ArimaOrder) -> int:
    m = max(order.p + order.q, int(math.ceil(math.log(n) ** 1.5)))
    return max(1, min(m, n // 3))


def _lagged(x: np.ndarray, lags: int, start: int) -> np.ndarray:
    """Columns x[t-1], ..., x[t-lags] for t = start .. len(x)-1."""
    return np.column_stack([x[start - k:len(x) - k] for k in range(1, lags + 1)]) if lags else np.empty((len(x) - start, 0))


def _lstsq(design: np.ndarray, y: np.ndarray):
    if design.shape[0] <= design.shape[1]:
        return None
    coef, _, rank, sv = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1] or sv[-1] <= sv[0] * 1e-10:
        return None
    return coef


def residuals(fit: ArimaFit, x: np.ndarray) -> np.ndarray:
    """Innovations of the differenced series under ``fit`` (zero before enough history)."""
    p, q = len(fit.phi), len(fit.theta)
    e = np.zeros(len(x))
    for t in range(max(p, q), len(x)):
        pred = fit.intercept
        for i in range(p):
            pred += fit.phi[i] * x[t - 1 - i]
        for j in range(q):
            pred += fit.theta[j] * e[t - 1 - j]
        e[t] = x[t] - pred
    return e


def fit_arima(series, order: ArimaOrder = ArimaOrder()) -> ArimaFit:
    y = np.asarray(series, dtype=np.float64)
    if not np.isfinite(y).all():
        raise NumericError("series contains non-finite values")
    if len(y) < min_length(order):
        return ArimaFit.naive(order)
    x = difference(y, order.d)
    p, q = order.p, order.q
    n = len(x)

    e_proxy = np.zeros(n)
    m = 0
    if q > 0:
        m = _long_ar_order(n, order)
        design = np.column_stack([np.ones(n - m), _lagged(x, m, m)])
        coef = _lstsq(design, x[m:])
        if coef is None:
            return ArimaFit.naive(order)
        e_proxy[m:] = x[m:] - design @ coef

    start = max(p, m + q)
    design = np.column_stack([np.ones(n - start), _lagged(x, p, start), _lagged(e_proxy, q, start)])
    coef = _lstsq(design, x[start:])
    if coef is None or not np.isfinite(coef).all():
        return ArimaFit.naive(order)
    resid = x[start:] - design @ coef
    dof = max(len(resid) - design.shape[1], 1)
    return ArimaFit(
        order=order,
        phi=coef[1:1 + p].copy(),
        theta=coef[1 + p:].copy(),
        intercept=float(coef[0]),
        sigma2=float(resid @ resid / dof),
        fallback_used=False,
    )


def forecast_one(fit: ArimaFit, series, clip: bool = False) -> float:
    """One-step-ahead forecast on the original scale."""
    y = np.asarray(series, dtype=np.float64)
    if fit.fallback_used:
        out = float(y[-1]) if len(y) else 0.0
    else:
        d = fit.order.d
        levels = [y]
        for _ in range(d):
            levels.append(np.diff(levels[-1]))
        x = levels[-1]
        e = residuals(fit, x)
        n = len(x)
        step = fit.intercept
        for i in range(len(fit.phi)):
            step += fit.phi[i] * x[n - 1 - i]
        for j in range(len(fit.theta)):
            step += fit.theta[j] * e[n - 1 - j]
        out = step
        for k in range(d - 1, -1, -1):
            out = levels[k][-1] + out
        out = float(out)
    if clip:
        out = min(TARGET_HI, max(TARGET_LO, out))
    return out


def fitted_values(fit: ArimaFit, series) -> np.ndarray:
    """In-sample one-step predictions aligned with ``series`` (NaN where undefined)."""
    y = np.asarray(series, dtype=np.float64)
    out = np.full(len(y), np.nan)
    if fit.fallback_used:
        out[1:] = y[:-1]
        return out
    d = fit.order.d
    x = difference(y, d)
    e = residuals(fit, x)
    warm = max(len(fit.phi), len(fit.theta))
    out[d + warm:] = y[d + warm:] - e[warm:]
    return out


@dataclass
class SeriesResult:
    shop_id: int
    item_id: int
    fit: ArimaFit
    forecast: float


@dataclass
class PanelForecast:
    """Output of :func:`fit_all`."""

    validation: pd.DataFrame  # shop_id, item_id, prediction, target
    test: pd.DataFrame  # shop_id, item_id, prediction, (target)
    train_fitted: pd.DataFrame  # shop_id, item_id, date_block, prediction, target
    fits: list[SeriesResult]

    @property
    def fallback_rate(self) -> float:
        if not self.fits:
            return 0.0
        return sum(r.fit.fallback_used for r in self.fits) / len(self.fits)

    def diagnostics(self) -> pd.DataFrame:
        order = self.fits[0].fit.order if self.fits else ArimaOrder()
        rows = []
        for r in self.fits:
            row = {"shop_id": r.shop_id, "item_id": r.item_id, "p": order.p, "d": order.d, "q": order.q}
            for i in range(order.p):
                row[f"phi_{i + 1}"] = float(r.fit.phi[i]) if len(r.fit.phi) > i else 0.0
            for j in range(order.q):
                row[f"theta_{j + 1}"] = float(r.fit.theta[j]) if len(r.fit.theta) > j else 0.0
            row["fallback_used"] = int(r.fit.fallback_used)
            row["sigma2"] = r.fit.sigma2
            rows.append(row)
        cols = ["shop_id", "item_id", "p", "d", "q"]
        cols += [f"phi_{i + 1}" for i in range(order.p)] + [f"theta_{j + 1}" for j in range(order.q)]
        cols += ["fallback_used", "sigma2"]
        return pd.DataFrame(rows, columns=cols)


def series_matrix(grid: PanelGrid, last_block: int, first_block: int = 0):
    """Dense (pairs x blocks) history with zeros where a pair is outside the universe."""
    cells = grid.cells
    cells = cells[(cells["date_block"] >= first_block) & (cells["date_block"] <= last_block)]
    cells = cells[cells["item_cnt_month"].notna()]
    pairs = cells[["shop_id", "item_id"]].drop_duplicates().sort_values(["shop_id", "item_id"])
    pairs = pairs.reset_index(drop=True)
    pair_idx = pd.MultiIndex.from_frame(pairs)
    row = pair_idx.get_indexer(pd.MultiIndex.from_frame(cells[["shop_id", "item_id"]]))
    mat = np.zeros((len(pairs), last_block - first_block + 1))
    mat[row, cells["date_block"].to_numpy() - first_block] = cells["item_cnt_month"].to_numpy()
    return pairs, mat


def _fit_chunk(args):
    mat, order, min_nonzero = args
    out = []
    for y in mat:
        if np.count_nonzero(y) < min_nonzero:
            fit = ArimaFit.naive(order)
        else:
            fit = fit_arima(y, order)
        out.append((fit, forecast_one(fit, y, clip=True), np.clip(fitted_values(fit, y), TARGET_LO, TARGET_HI)))
    return out


def _fit_matrix(mat, order, min_nonzero, n_jobs):
    if n_jobs <= 1 or len(mat) < 1000:
        return _fit_chunk((mat, order, min_nonzero))
    chunks = np.array_split(mat, n_jobs * 4)
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        parts = pool.map(_fit_chunk, [(c, order, min_nonzero) for c in chunks])
        return [r for part in parts for r in part]


def _lookup(pairs: pd.DataFrame, values, keys: pd.DataFrame, default=0.0) -> np.ndarray:
    idx = pd.MultiIndex.from_frame(pairs[["shop_id", "item_id"]])
    pos = idx.get_indexer(pd.MultiIndex.from_frame(keys[["shop_id", "item_id"]]))
    vals = np.asarray(values, dtype=np.float64)
    return np.where(pos >= 0, vals[np.maximum(pos, 0)], default)


def fit_all(
    grid: PanelGrid,
    order: ArimaOrder = ArimaOrder(),
    split: SplitSpec = SplitSpec(),
    min_nonzero: int = 3,
    first_scored_block: int = 12,
    n_jobs: int = 1,
) -> PanelForecast:
    """Fit every (shop, item) series independently and forecast one step ahead.

    The validation forecast uses blocks up to the last training block; the
    test forecast refits on history through the validation block. Pairs
    without history are predicted 0. Series with fewer than ``min_nonzero``
    non-zero months use the persistence fallback directly.
    """
    cells = grid.cells
    first = split.train_blocks.start
    last_train = max(split.train_blocks)

    pairs_v, mat_v = series_matrix(grid, last_train, first)
    res_v = _fit_matrix(mat_v, order, min_nonzero, n_jobs)
    fits = [
        SeriesResult(int(s), int(i), f, fc)
        for (s, i), (f, fc, _) in zip(pairs_v[["shop_id", "item_id"]].to_numpy(), res_v)
    ]

    val_rows = cells[cells["date_block"] == split.validation_block][["shop_id", "item_id", "item_cnt_month"]]
    validation = pd.DataFrame(
        {
            "shop_id": val_rows["shop_id"].to_numpy(),
            "item_id": val_rows["item_id"].to_numpy(),
            "prediction": _lookup(pairs_v, [fc for _, fc, _ in res_v], val_rows),
            "target": val_rows["item_cnt_month"].to_numpy(),
        }
    )

    blocks = np.arange(first, last_train + 1)
    fitted = np.vstack([fv for _, _, fv in res_v]) if res_v else np.empty((0, len(blocks)))
    tr = cells[(cells["date_block"] >= max(first_scored_block, first)) & (cells["date_block"] <= last_train)]
    pos = pd.MultiIndex.from_frame(pairs_v).get_indexer(pd.MultiIndex.from_frame(tr[["shop_id", "item_id"]]))
    col = tr["date_block"].to_numpy() - first
    pred_tr = fitted[pos, col] if len(tr) else np.empty(0)
    train_fitted = pd.DataFrame(
        {
            "shop_id": tr["shop_id"].to_numpy(),
            "item_id": tr["item_id"].to_numpy(),
            "date_block": tr["date_block"].to_numpy(),
            "prediction": np.nan_to_num(pred_tr, nan=0.0),
            "target": tr["item_cnt_month"].to_numpy(),
        }
    )

    pairs_t, mat_t = series_matrix(grid, split.validation_block, first)
    res_t = _fit_matrix(mat_t, order, min_nonzero, n_jobs)
    test_rows = cells[cells["date_block"] == split.test_block][["shop_id", "item_id", "item_cnt_month"]]
    test = pd.DataFrame(
        {
            "shop_id": test_rows["shop_id"].to_numpy(),
            "item_id": test_rows["item_id"].to_numpy(),
            "prediction": _lookup(pairs_t, [fc for _, fc, _ in res_t], test_rows),
            "target": test_rows["item_cnt_month"].to_numpy(),
        }
    )
    logger.info("ARIMA %s: %d series, fallback rate %.3f", order, len(fits),
                sum(f.fit.fallback_used for f in fits) / max(len(fits), 1))
    return PanelForecast(validation, test, train_fitted, fits)


def forecast_pairs(forecast: PanelForecast, pairs: pd.DataFrame, block: str = "test") -> np.ndarray:
    """Predictions for arbitrary (shop, item) pairs; pairs never seen get 0."""
    frame = forecast.test if block == "test" else forecast.validation
    return _lookup(frame, frame["prediction"].to_numpy(), pairs, default=0.0)
