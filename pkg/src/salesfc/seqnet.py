"""LSTM branch over monthly dynamic features joined with a dense branch over static features.

Forward: ``h_T = LSTM(dynamic)``, ``s = tanh(static @ Ws + bs)``,
``m = tanh([h_T, s] @ Wm + bm)``, ``y = m @ Wo + bo``. Loss is MSE plus
``l2_lambda * sum(W**2)`` over weight matrices (biases excluded). Gradients
are exact backpropagation through time; training uses Adam.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from salesfc.errors import NumericError
from salesfc.features import lag_join, lag_tables, with_category
from salesfc.panel import CatalogTables, FeatureMatrix, PanelGrid

logger = logging.getLogger(__name__)

WEIGHT_MATRICES = ("lstm_Wx", "lstm_Wh", "static_W", "merge_W", "out_W")
PARAM_ORDER = ("lstm_Wx", "lstm_Wh", "lstm_b", "static_W", "static_b", "merge_W", "merge_b", "out_W", "out_b")

DYNAMIC_BASES = (
    "target_item",
    "target_shop",
    "target_category",
    "target_item_all",
    "new_item",
    "target_price_mean",
)
STATIC_PREFIXES = ("month_", "year_", "item_category_id_", "shop_id_", "enc_")


@dataclass(frozen=True)
class SeqNetParams:
    hidden_lstm: int = 32
    hidden_static: int = 16
    hidden_merge: int = 32
    l2_lambda: float = 0.001
    batch_size: int = 512
    epochs: int = 5
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if min(self.hidden_lstm, self.hidden_static, self.hidden_merge, self.batch_size, self.epochs) < 1:
            raise ValueError("layer widths, batch_size and epochs must be >= 1")
        if self.l2_lambda < 0 or self.learning_rate < 0:
            raise ValueError("l2_lambda and learning_rate must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SeqNetParams":
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**d)


@dataclass(frozen=True)
class SeqSample:
    dynamic: np.ndarray  # (T, d_dyn), oldest month first
    static: np.ndarray  # (d_static,)
    target: float


@dataclass
class SeqData:
    """Column-stacked samples: dynamic (N, T, D), static (N, S), target (N,)."""

    dynamic: np.ndarray
    static: np.ndarray
    target: np.ndarray
    row_keys: np.ndarray | None = None

    def __post_init__(self):
        self.dynamic = np.asarray(self.dynamic, dtype=np.float64)
        self.static = np.asarray(self.static, dtype=np.float64).reshape(len(self.dynamic), -1)
        self.target = np.asarray(self.target, dtype=np.float64)
        if not (len(self.dynamic) == len(self.static) == len(self.target)):
            raise ValueError("dynamic, static and target must have the same number of samples")

    @classmethod
    def from_samples(cls, samples: Sequence[SeqSample]) -> "SeqData":
        return cls(
            np.stack([s.dynamic for s in samples]),
            np.stack([s.static for s in samples]),
            np.array([s.target for s in samples]),
        )

    def __len__(self) -> int:
        return len(self.target)

    def take(self, idx) -> "SeqData":
        keys = None if self.row_keys is None else self.row_keys[idx]
        return SeqData(self.dynamic[idx], self.static[idx], self.target[idx], keys)

    @property
    def window(self) -> int:
        return self.dynamic.shape[1]

    def nbytes_split(self) -> int:
        return self.dynamic.nbytes + self.static.nbytes

    def nbytes_replicated(self) -> int:
        """Size if static features were copied to every time step of a plain LSTM input."""
        n, t, d = self.dynamic.shape
        return n * t * (d + self.static.shape[1]) * self.dynamic.itemsize


@dataclass
class SeqNetModel:
    weights: dict[str, np.ndarray]
    params: SeqNetParams = field(default_factory=SeqNetParams)
    scaler: dict | None = None

    @property
    def hidden(self) -> int:
        return self.weights["lstm_Wh"].shape[0]

    def copy(self) -> "SeqNetModel":
        return SeqNetModel({k: v.copy() for k, v in self.weights.items()}, self.params, self.scaler)

    def to_dict(self) -> dict:
        return {
            "params": asdict(self.params),
            "weights": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.weights.items()},
            "scaler": self.scaler,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SeqNetModel":
        weights = {
            k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in d["weights"].items()
        }
        return cls(weights, SeqNetParams.from_dict(d["params"]), d.get("scaler"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "SeqNetModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_model(d_dyn: int, d_static: int, params: SeqNetParams = SeqNetParams(), seed: int | None = None) -> SeqNetModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) matrices, zero biases."""
    rng = np.random.default_rng(params.seed if seed is None else seed)
    H, Hs, Hm = params.hidden_lstm, params.hidden_static, params.hidden_merge

    def u(fan_in, shape):
        bound = 1.0 / math.sqrt(max(fan_in, 1))
        return rng.uniform(-bound, bound, size=shape)

    w = {
        "lstm_Wx": u(d_dyn, (d_dyn, 4 * H)),
        "lstm_Wh": u(H, (H, 4 * H)),
        "lstm_b": np.zeros(4 * H),
        "static_W": u(d_static, (d_static, Hs)),
        "static_b": np.zeros(Hs),
        "merge_W": u(H + Hs, (H + Hs, Hm)),
        "merge_b": np.zeros(Hm),
        "out_W": u(Hm, (Hm, 1)),
        "out_b": np.zeros(1),
    }
    return SeqNetModel(w, params)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_cell(x_t, h_prev, c_prev, weights: dict):
    """One step of the LSTM; gate blocks in the stacked matrices are ordered (i, f, o, g)."""
    Wx, Wh, b = weights["lstm_Wx"], weights["lstm_Wh"], weights["lstm_b"]
    x_t = np.atleast_2d(x_t)
    h_prev = np.atleast_2d(h_prev)
    c_prev = np.atleast_2d(c_prev)
    H = Wh.shape[0]
    if Wx.shape != (x_t.shape[1], 4 * H) or Wh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ValueError(f"LSTM weight shapes {Wx.shape}, {Wh.shape}, {b.shape} do not fit input width {x_t.shape[1]}")
    if h_prev.shape[1] != H or c_prev.shape[1] != H:
        raise ValueError(f"state width must be {H}")
    z = x_t @ Wx + h_prev @ Wh + b
    i = _sigmoid(z[:, :H])
    f = _sigmoid(z[:, H:2 * H])
    o = _sigmoid(z[:, 2 * H:3 * H])
    g = np.tanh(z[:, 3 * H:])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c, (i, f, o, g)


def _forward(model: SeqNetModel, dynamic, static):
    w = model.weights
    n, T, _ = dynamic.shape
    H = model.hidden
    h = np.zeros((n, H))
    c = np.zeros((n, H))
    steps = []
    for t in range(T):
        h_prev, c_prev = h, c
        h, c, gates = lstm_cell(dynamic[:, t, :], h_prev, c_prev, w)
        steps.append((h_prev, c_prev, c, gates))
    s = np.tanh(static @ w["static_W"] + w["static_b"])
    joined = np.concatenate([h, s], axis=1)
    m = np.tanh(joined @ w["merge_W"] + w["merge_b"])
    y = (m @ w["out_W"] + w["out_b"])[:, 0]
    return y, (steps, s, joined, m)


def forward(model: SeqNetModel, batch: SeqData) -> np.ndarray:
    if len(batch) == 0:
        raise ValueError("empty batch")
    return _forward(model, batch.dynamic, batch.static)[0]


def penalty(model: SeqNetModel) -> float:
    return float(sum(np.sum(model.weights[k] ** 2) for k in WEIGHT_MATRICES))


def loss(predictions, targets, model: SeqNetModel, l2_lambda: float) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError("predictions and targets differ in length")
    return float(np.mean((predictions - targets) ** 2)) + l2_lambda * penalty(model)


def backward(model: SeqNetModel, batch: SeqData, l2_lambda: float | None = None):
    """(loss, gradients) for one batch by backpropagation through time."""
    lam = model.params.l2_lambda if l2_lambda is None else l2_lambda
    w = model.weights
    x, st, target = batch.dynamic, batch.static, batch.target
    n, T, _ = x.shape
    H = model.hidden
    y, (steps, s, joined, m) = _forward(model, x, st)
    value = float(np.mean((y - target) ** 2)) + lam * penalty(model)

    grads = {k: np.zeros_like(v) for k, v in w.items()}
    dy = (2.0 / n) * (y - target)[:, None]
    grads["out_W"] = m.T @ dy
    grads["out_b"] = dy.sum(axis=0)
    dzm = (dy @ w["out_W"].T) * (1.0 - m * m)
    grads["merge_W"] = joined.T @ dzm
    grads["merge_b"] = dzm.sum(axis=0)
    djoined = dzm @ w["merge_W"].T
    dh = djoined[:, :H]
    dzs = djoined[:, H:] * (1.0 - s * s)
    grads["static_W"] = st.T @ dzs
    grads["static_b"] = dzs.sum(axis=0)

    dc = np.zeros((n, H))
    for t in range(T - 1, -1, -1):
        h_prev, c_prev, c, (i, f, o, g) = steps[t]
        tc = np.tanh(c)
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), do * o * (1.0 - o), dg * (1.0 - g * g)], axis=1
        )
        grads["lstm_Wx"] += x[:, t, :].T @ dz
        grads["lstm_Wh"] += h_prev.T @ dz
        grads["lstm_b"] += dz.sum(axis=0)
        dh = dz @ w["lstm_Wh"].T
        dc = dc * f
    for k in WEIGHT_MATRICES:
        grads[k] = grads[k] + 2.0 * lam * w[k]
    return value, grads


def _rmse(pred, target) -> float:
    return math.sqrt(float(np.mean((pred - target) ** 2)))


def predict(model: SeqNetModel, data: SeqData, batch_size: int = 4096) -> np.ndarray:
    out = np.empty(len(data))
    for start in range(0, len(data), batch_size):
        sl = slice(start, start + batch_size)
        out[sl] = _forward(model, data.dynamic[sl], data.static[sl])[0]
    return out


def train(
    train_data: SeqData,
    val_data: SeqData | None = None,
    params: SeqNetParams = SeqNetParams(),
    model: SeqNetModel | None = None,
) -> tuple[SeqNetModel, list[dict]]:
    """Adam on shuffled mini-batches; returns the model and per-epoch train/val RMSE."""
    if len(train_data) == 0:
        raise ValueError("no training samples")
    rng = np.random.default_rng(params.seed)
    if model is None:
        model = init_model(train_data.dynamic.shape[2], train_data.static.shape[1], params, seed=params.seed)
        model.weights["out_b"][:] = float(np.mean(train_data.target))
    else:
        model = model.copy()
    model.params = params
    m1 = {k: np.zeros_like(v) for k, v in model.weights.items()}
    m2 = {k: np.zeros_like(v) for k, v in model.weights.items()}
    step = 0
    log = []
    for epoch in range(params.epochs):
        order = rng.permutation(len(train_data))
        for start in range(0, len(order), params.batch_size):
            batch = train_data.take(order[start:start + params.batch_size])
            value, grads = backward(model, batch, params.l2_lambda)
            if not math.isfinite(value):
                raise NumericError(f"loss diverged at epoch {epoch + 1}, step {step}: {value}")
            step += 1
            corr1 = 1.0 - params.beta1 ** step
            corr2 = 1.0 - params.beta2 ** step
            for k, g in grads.items():
                m1[k] = params.beta1 * m1[k] + (1.0 - params.beta1) * g
                m2[k] = params.beta2 * m2[k] + (1.0 - params.beta2) * g * g
                model.weights[k] -= params.learning_rate * (m1[k] / corr1) / (np.sqrt(m2[k] / corr2) + params.epsilon)
        entry = {"epoch": epoch + 1, "train_rmse": _rmse(predict(model, train_data), train_data.target)}
        if val_data is not None and len(val_data):
            entry["val_rmse"] = _rmse(predict(model, val_data), val_data.target)
        log.append(entry)
        logger.info("seqnet epoch %s", entry)
    return model, log


# --- building samples from the panel -------------------------------------------------


def _static_columns(matrix: FeatureMatrix) -> list[str]:
    return [n for n in matrix.feature_names if n.startswith(STATIC_PREFIXES)]


def build_samples(
    grid: PanelGrid,
    catalog: CatalogTables,
    records: pd.DataFrame,
    matrix: FeatureMatrix,
    window: int = 12,
    bases: Sequence[str] = DYNAMIC_BASES,
) -> SeqData:
    """Raw (unscaled) samples aligned with ``matrix`` rows; pre-history months stay NaN."""
    rows = pd.DataFrame(
        {
            "date_block": matrix.date_block,
            "shop_id": matrix.row_keys[:, 0],
            "item_id": matrix.row_keys[:, 1],
        }
    )
    rows["item_category_id"] = catalog.category_of(rows["item_id"].to_numpy())
    tables = {t.name: t for t in lag_tables(grid, catalog, records)}
    offsets = list(range(window, 0, -1))
    dyn = np.empty((matrix.n_rows, window, len(bases)))
    for j, name in enumerate(bases):
        lags = lag_join(rows, tables[name], offsets)
        for t, k in enumerate(offsets):
            dyn[:, t, j] = lags[f"{name}_lag_{k}"]
    static = matrix.columns(_static_columns(matrix))
    return SeqData(dyn, static, matrix.target, matrix.row_keys)


def fit_scaler(data: SeqData) -> dict:
    with np.errstate(invalid="ignore"):
        dm = np.nanmean(data.dynamic.reshape(-1, data.dynamic.shape[2]), axis=0)
        ds = np.nanstd(data.dynamic.reshape(-1, data.dynamic.shape[2]), axis=0)
    sm = data.static.mean(axis=0) if len(data) else np.zeros(data.static.shape[1])
    ss = data.static.std(axis=0) if len(data) else np.ones(data.static.shape[1])
    fix = lambda a, fill: np.where(np.isfinite(a) & (a > 0), a, fill)  # noqa: E731
    return {
        "dyn_mean": np.nan_to_num(dm).tolist(),
        "dyn_std": fix(ds, 1.0).tolist(),
        "static_mean": np.nan_to_num(sm).tolist(),
        "static_std": fix(ss, 1.0).tolist(),
    }


def apply_scaler(data: SeqData, scaler: dict) -> SeqData:
    """Standardise, then impute missing months and features to 0."""
    dyn = (data.dynamic - np.asarray(scaler["dyn_mean"])) / np.asarray(scaler["dyn_std"])
    st = (data.static - np.asarray(scaler["static_mean"])) / np.asarray(scaler["static_std"])
    return SeqData(np.nan_to_num(dyn, nan=0.0), np.nan_to_num(st, nan=0.0), data.target, data.row_keys)
