"""Second-order boosted regression trees with L1/L2 leaf regularisation.

Squared loss, exact greedy depth-wise growth, learned default direction
for missing values, shrinkage applied at prediction time.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from salesfc.errors import NumericError, SchemaError
from salesfc.gbt import kernels
from salesfc.panel import FeatureMatrix, TARGET_HI, TARGET_LO

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GbtParams:
    eta: float = 0.148
    max_depth: int = 6
    min_child_weight: float = 26.0
    reg_lambda: float = 0.171
    reg_alpha: float = 0.170
    n_rounds: int = 100
    gamma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_child_weight < 0 or self.reg_lambda < 0 or self.reg_alpha < 0 or self.gamma < 0:
            raise ValueError("min_child_weight, lambda, alpha and gamma must be >= 0")
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "GbtParams":
        d = dict(d)
        # accept the short names used in configs and reports
        for short, full in (("lambda", "reg_lambda"), ("alpha", "reg_alpha")):
            if short in d:
                d[full] = d.pop(short)
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        for k in ("max_depth", "n_rounds", "seed"):
            if k in d:
                d[k] = int(d[k])
        return cls(**d)


def soft_threshold(g: float, alpha: float) -> float:
    if g > alpha:
        return g - alpha
    if g < -alpha:
        return g + alpha
    return 0.0


def leaf_weight(G: float, H: float, reg_lambda: float, reg_alpha: float) -> float:
    """Optimal leaf value ``-T_alpha(G) / (H + lambda)``."""
    if not H + reg_lambda > 0:
        raise NumericError(f"H + lambda must be positive, got H={H}, lambda={reg_lambda}")
    return -soft_threshold(G, reg_alpha) / (H + reg_lambda)


def _score(G, H, reg_lambda, reg_alpha):
    t = soft_threshold(G, reg_alpha)
    return t * t / (H + reg_lambda)


def split_gain(GL, HL, GR, HR, reg_lambda, reg_alpha, gamma=0.0) -> float:
    """Regularised loss reduction of splitting a node into (L, R)."""
    if HL < 0 or HR < 0:
        raise ValueError("hessian sums must be non-negative")
    parent = _score(GL + GR, HL + HR, reg_lambda, reg_alpha)
    return (_score(GL, HL, reg_lambda, reg_alpha) + _score(GR, HR, reg_lambda, reg_alpha) - parent) * 0.5 - gamma


def split_admissible(GL, HL, GR, HR, params: GbtParams) -> bool:
    gain = split_gain(GL, HL, GR, HR, params.reg_lambda, params.reg_alpha, params.gamma)
    return HL >= params.min_child_weight and HR >= params.min_child_weight and gain > 0


@dataclass
class Tree:
    """Flat node arrays; ``feat[i] < 0`` marks a leaf holding ``value[i]``."""

    feat: np.ndarray
    thr: np.ndarray
    default_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_splits(self) -> int:
        return int(np.count_nonzero(self.feat >= 0))

    def depth(self) -> int:
        def walk(i):
            if self.feat[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def to_dict(self, i: int = 0) -> dict:
        if self.feat[i] < 0:
            return {"leaf": float(self.value[i])}
        return {
            "feat": int(self.feat[i]),
            "thr": float(self.thr[i]),
            "default_left": bool(self.default_left[i]),
            "left": self.to_dict(int(self.left[i])),
            "right": self.to_dict(int(self.right[i])),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        nodes: list[list] = []

        def add(node):
            i = len(nodes)
            nodes.append([-1, 0.0, 0, -1, -1, 0.0])
            if "leaf" in node:
                nodes[i][5] = float(node["leaf"])
            else:
                nodes[i][0] = int(node["feat"])
                nodes[i][1] = float(node["thr"])
                nodes[i][2] = int(bool(node["default_left"]))
                nodes[i][3] = add(node["left"])
                nodes[i][4] = add(node["right"])
            return i

        add(d)
        return cls._from_rows(nodes)

    @classmethod
    def _from_rows(cls, nodes) -> "Tree":
        cols = list(zip(*nodes)) if nodes else [[]] * 6
        return cls(
            feat=np.asarray(cols[0], dtype=np.int32),
            thr=np.asarray(cols[1], dtype=np.float64),
            default_left=np.asarray(cols[2], dtype=np.uint8),
            left=np.asarray(cols[3], dtype=np.int32),
            right=np.asarray(cols[4], dtype=np.int32),
            value=np.asarray(cols[5], dtype=np.float64),
        )

    def predict(self, x: np.ndarray, backend: str | None = None) -> np.ndarray:
        k = kernels.get(backend)
        return k.predict_tree(
            np.ascontiguousarray(x, dtype=np.float64),
            self.feat, self.thr, self.default_left, self.left, self.right, self.value,
        )


@dataclass
class GbtModel:
    trees: list[Tree]
    base_score: float
    eta: float
    feature_names: tuple[str, ...]
    params: GbtParams = field(default_factory=GbtParams)
    log: list[dict] = field(default_factory=list)

    def raw_sum(self, x: np.ndarray, backend: str | None = None) -> np.ndarray:
        total = np.zeros(x.shape[0])
        for t in self.trees:
            total += t.predict(x, backend)
        return total

    def to_dict(self) -> dict:
        return {
            "params": asdict(self.params),
            "base_score": self.base_score,
            "eta": self.eta,
            "feature_names": list(self.feature_names),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbtModel":
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            base_score=float(d["base_score"]),
            eta=float(d["eta"]),
            feature_names=tuple(d["feature_names"]),
            params=GbtParams.from_dict(d.get("params", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "GbtModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _presort(xt: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per feature, non-missing values and their row indices in ascending order (stable)."""
    idx_chunks, val_chunks, offsets = [], [], [0]
    for col in xt:
        present = np.flatnonzero(~np.isnan(col))
        order = present[np.argsort(col[present], kind="stable")]
        idx_chunks.append(order.astype(np.int32))
        val_chunks.append(col[order])
        offsets.append(offsets[-1] + order.size)
    if not idx_chunks:
        return np.empty(0), np.empty(0, dtype=np.int32), np.asarray(offsets, dtype=np.int64)
    return np.concatenate(val_chunks), np.concatenate(idx_chunks), np.asarray(offsets, dtype=np.int64)


def _validate(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape[0] == 0:
        raise ValueError("training set is empty")
    if not np.isfinite(y).all():
        raise NumericError("non-finite target values")
    if np.isinf(x).any():
        raise NumericError("infinite feature values (missing must be NaN)")


def grow_tree(x, sorted_val, sorted_idx, offsets, grad, hess, params: GbtParams, kernel=None):
    """Grow one tree depth-wise; returns (tree, leaf node index per row)."""
    kernel = kernel or kernels.get()
    n = x.shape[0]
    nodes = [[-1, 0.0, 0, -1, -1, 0.0]]
    node_of_row = np.zeros(n, dtype=np.int32)
    row_node = np.zeros(n, dtype=np.int64)  # tree node id per row
    level = [0]
    for depth in range(params.max_depth + 1):
        active = node_of_row >= 0
        m = len(level)
        local = node_of_row[active]
        g_sum = np.bincount(local, weights=grad[active], minlength=m)
        h_sum = np.bincount(local, weights=hess[active], minlength=m)
        cnt = np.bincount(local, minlength=m).astype(np.int64)
        if depth == params.max_depth:
            feat = np.full(m, -1, dtype=np.int32)
        else:
            feat, thr, dleft, _ = kernel.find_splits(
                sorted_val, sorted_idx, offsets, grad, hess, node_of_row,
                g_sum, h_sum, cnt,
                float(params.reg_lambda), float(params.reg_alpha),
                float(params.gamma), float(params.min_child_weight),
            )
        next_level = []
        child_local = np.full((m, 2), -1, dtype=np.int32)
        for k, node_id in enumerate(level):
            if feat[k] < 0:
                nodes[node_id][5] = leaf_weight(g_sum[k], h_sum[k], params.reg_lambda, params.reg_alpha)
                continue
            left_id, right_id = len(nodes), len(nodes) + 1
            nodes.append([-1, 0.0, 0, -1, -1, 0.0])
            nodes.append([-1, 0.0, 0, -1, -1, 0.0])
            nodes[node_id][:5] = [int(feat[k]), float(thr[k]), int(dleft[k]), left_id, right_id]
            child_local[k] = (len(next_level), len(next_level) + 1)
            next_level.extend([left_id, right_id])
        if not next_level:
            break
        rows = np.flatnonzero(active)
        k_of = node_of_row[rows]
        f = feat[k_of]
        splitting = f >= 0
        rows, k_of, f = rows[splitting], k_of[splitting], f[splitting]
        v = x[rows, f]
        go_left = np.where(np.isnan(v), dleft[k_of].astype(bool), v < thr[k_of])
        new_local = np.where(go_left, child_local[k_of, 0], child_local[k_of, 1])
        node_of_row[:] = -1
        node_of_row[rows] = new_local
        row_node[rows] = np.asarray(next_level, dtype=np.int64)[new_local]
        level = next_level
    tree = Tree._from_rows(nodes)
    return tree, row_node


def _rmse(pred, y):
    return math.sqrt(float(np.mean((pred - y) ** 2)))


def fit(
    train: FeatureMatrix,
    params: GbtParams = GbtParams(),
    eval_set: FeatureMatrix | None = None,
    base_score: float | None = None,
    backend: str | None = None,
) -> GbtModel:
    """Boost ``params.n_rounds`` trees on squared loss.

    ``base_score`` defaults to the training target mean. The per-round
    train/eval RMSE log is kept on ``model.log``.
    """
    kernel = kernels.get(backend)
    x = np.ascontiguousarray(train.values, dtype=np.float64)
    y = np.asarray(train.target, dtype=np.float64)
    _validate(x, y)
    sorted_val, sorted_idx, offsets = _presort(np.ascontiguousarray(x.T))
    base = float(np.mean(y)) if base_score is None else float(base_score)
    raw = np.zeros(len(y))
    hess = np.ones(len(y))
    trees: list[Tree] = []
    log: list[dict] = []
    x_eval = y_eval = raw_eval = None
    if eval_set is not None:
        x_eval = np.ascontiguousarray(eval_set.columns(train.feature_names))
        y_eval = np.asarray(eval_set.target, dtype=np.float64)
        raw_eval = np.zeros(len(y_eval))
    for rnd in range(params.n_rounds):
        grad = base + params.eta * raw - y
        tree, row_node = grow_tree(x, sorted_val, sorted_idx, offsets, grad, hess, params, kernel)
        trees.append(tree)
        raw += tree.value[row_node]
        entry = {"round": rnd + 1, "train_rmse": _rmse(base + params.eta * raw, y)}
        if x_eval is not None:
            raw_eval += tree.predict(x_eval, backend)
            entry["eval_rmse"] = _rmse(base + params.eta * raw_eval, y_eval)
        log.append(entry)
        logger.debug("round %d %s", rnd + 1, entry)
    return GbtModel(trees, base, params.eta, tuple(train.feature_names), params, log)


def predict(
    model: GbtModel,
    rows: FeatureMatrix | np.ndarray,
    clip: bool = False,
    backend: str | None = None,
) -> np.ndarray:
    """``base_score + eta * sum(tree outputs)``; ``clip`` bounds to the submission range."""
    if isinstance(rows, FeatureMatrix):
        try:
            x = rows.columns(model.feature_names)
        except KeyError as exc:
            raise SchemaError(str(exc)) from exc
    else:
        x = np.asarray(rows, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != len(model.feature_names):
            raise SchemaError(f"expected {len(model.feature_names)} feature columns")
    out = model.base_score + model.eta * model.raw_sum(np.ascontiguousarray(x), backend)
    if clip:
        out = np.clip(out, TARGET_LO, TARGET_HI)
    return out


def importance(model: GbtModel) -> dict[str, int]:
    """Split counts per feature name, largest first (ties by name)."""
    counts = np.zeros(len(model.feature_names), dtype=np.int64)
    for t in model.trees:
        f = t.feat[t.feat >= 0]
        counts += np.bincount(f, minlength=len(model.feature_names))
    ranked = sorted(
        ((model.feature_names[i], int(c)) for i, c in enumerate(counts) if c > 0),
        key=lambda kv: (-kv[1], kv[0]),
    )
    return dict(ranked)


def top_features(model: GbtModel, k: int = 10) -> list[str]:
    return list(importance(model))[:k]
