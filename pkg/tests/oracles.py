"""Independent slow reference implementations used to cross-check the package.

Nothing here imports the code under test; each oracle is a direct loop over
the defining formula.
"""
from __future__ import annotations

import math

import numpy as np


def soft_threshold(g, alpha):
    if g > alpha:
        return g - alpha
    if g < -alpha:
        return g + alpha
    return 0.0


def node_score(G, H, lam, alpha):
    t = soft_threshold(G, alpha)
    return t * t / (H + lam)


def node_objective(w, G, H, lam, alpha):
    return 0.5 * H * w * w + G * w + alpha * abs(w) + 0.5 * lam * w * w


def brute_force_root_split(x, grad, hess, lam, alpha, gamma, min_child_weight):
    """Enumerate every (feature, threshold, missing direction) at the root.

    Returns (feature, threshold, default_left, gain) of the best admissible
    split, or None. Preference on ties: lower feature, lower threshold,
    missing-right before missing-left.
    """
    n, d = x.shape
    G = math.fsum(grad)
    H = math.fsum(hess)
    parent = node_score(G, H, lam, alpha)
    best = None
    for f in range(d):
        col = x[:, f]
        miss = np.isnan(col)
        vals = sorted(set(col[~miss].tolist()))
        for a, b in zip(vals[:-1], vals[1:]):
            thr = (a + b) / 2.0
            if not a < thr:
                thr = b
            for default_left in (False, True):
                left = (col < thr) & ~miss
                if default_left:
                    left |= miss
                right = ~left
                GL, HL = math.fsum(grad[left]), math.fsum(hess[left])
                GR, HR = math.fsum(grad[right]), math.fsum(hess[right])
                if HL < min_child_weight or HR < min_child_weight:
                    continue
                gain = 0.5 * (node_score(GL, HL, lam, alpha) + node_score(GR, HR, lam, alpha) - parent) - gamma
                if gain <= 0:
                    continue
                if best is None or gain > best[3] * (1 + 1e-12) + 1e-15:
                    best = (f, thr, default_left, gain)
    return best


def naive_lag(cells, base_key_cols, value_of, block, key, k):
    """Value of a quantity at (block - k, key) by scanning a list of dicts; NaN if absent."""
    target = block - k
    for c in cells:
        if c["date_block"] == target and all(c[col] == kv for col, kv in zip(base_key_cols, key)):
            return value_of(c)
    return math.nan


def scalar_sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def scalar_lstm_cell(x, h_prev, c_prev, Wx, Wh, b):
    """Element-by-element LSTM step, gate blocks ordered (i, f, o, g)."""
    H = len(h_prev)
    z = [0.0] * (4 * H)
    for j in range(4 * H):
        acc = b[j]
        for a in range(len(x)):
            acc += x[a] * Wx[a][j]
        for a in range(H):
            acc += h_prev[a] * Wh[a][j]
        z[j] = acc
    h, c = [0.0] * H, [0.0] * H
    for u in range(H):
        i = scalar_sigmoid(z[u])
        f = scalar_sigmoid(z[H + u])
        o = scalar_sigmoid(z[2 * H + u])
        g = math.tanh(z[3 * H + u])
        c[u] = f * c_prev[u] + i * g
        h[u] = o * math.tanh(c[u])
    return h, c


def central_difference(fn, arr, step=1e-4):
    """Numerical gradient of scalar ``fn()`` with respect to every entry of ``arr`` (mutated in place)."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step
        up = fn()
        flat[j] = orig - step
        down = fn()
        flat[j] = orig
        gflat[j] = (up - down) / (2 * step)
    return grad


def ar1_series(phi, n, sigma, seed, burn=100):
    rng = np.random.default_rng(seed)
    e = rng.normal(0.0, sigma, size=n + burn)
    x = np.zeros(n + burn)
    for t in range(1, n + burn):
        x[t] = phi * x[t - 1] + e[t]
    return x[burn:]


class NaivePanel:
    """Per-cell quantities recomputed straight from transaction tuples with dicts and loops."""

    def __init__(self, records, items_to_cat, clip=(0.0, 20.0)):
        self.cat = dict(items_to_cat)
        self.rows = [
            (int(b), int(s), int(i), float(p), float(q))
            for b, s, i, p, q in records[["date_block", "shop_id", "item_id", "item_price", "item_cnt_day"]].itertuples(index=False)
        ]
        self.shops, self.items = {}, {}
        raw, rev, prices, shop_prices = {}, {}, {}, {}
        for b, s, i, p, q in self.rows:
            self.shops.setdefault(b, set()).add(s)
            self.items.setdefault(b, set()).add(i)
            raw[(b, s, i)] = raw.get((b, s, i), 0.0) + q
            rev[(b, s, i)] = rev.get((b, s, i), 0.0) + p * q
            prices.setdefault((b, i), []).append((p, q))
            shop_prices.setdefault((b, s, i), []).append(p)
        lo, hi = clip
        self.cells = {}
        for b in self.shops:
            for s in self.shops[b]:
                for i in self.items[b]:
                    c = raw.get((b, s, i), 0.0)
                    self.cells[(b, s, i)] = (min(hi, max(lo, c)), rev.get((b, s, i), 0.0))
        self.prices = prices
        self.shop_prices = shop_prices

    def _cells(self, b):
        return [(s, i, v) for (bb, s, i), v in self.cells.items() if bb == b]

    def value(self, base, b, s, i):
        """Quantity ``base`` for the cell key (s, i) at block b; NaN when undefined."""
        nan = math.nan
        c = self.cat[i]
        cells = self._cells(b)
        if base == "target_item":
            return self.cells[(b, s, i)][0] if (b, s, i) in self.cells else nan
        if base == "target_shop":
            vals = [v[0] for ss, _, v in cells if ss == s]
            return sum(vals) if vals else nan
        if base == "target_shop_category":
            vals = [v[0] for ss, ii, v in cells if ss == s and self.cat[ii] == c]
            return sum(vals) if vals else nan
        if base == "target_category":
            vals = [v[0] for _, ii, v in cells if self.cat[ii] == c]
            return sum(vals) if vals else nan
        if base == "target_item_all":
            vals = [v[0] for _, ii, v in cells if ii == i]
            return sum(vals) if vals else nan
        if base == "cumulative_item":
            if i not in self.items.get(b, ()):
                return nan
            return sum(self.value("target_item_all", bb, s, i) for bb in range(b + 1) if i in self.items.get(bb, ()))
        if base == "new_item":
            if i not in self.items.get(b, ()):
                return nan
            prev = sum(self.value("target_item_all", bb, s, i) for bb in range(b) if i in self.items.get(bb, ()))
            return 1.0 if prev == 0 and self.value("target_item_all", b, s, i) > 1 else 0.0
        if base == "revenue_shop":
            vals = [v[1] for ss, _, v in cells if ss == s]
            return sum(vals) if vals else nan
        if base == "revenue_shop_category":
            vals = [v[1] for ss, ii, v in cells if ss == s and self.cat[ii] == c]
            return sum(vals) if vals else nan
        if base == "target_price_mean":
            pq = self.prices.get((b, i))
            return sum(p for p, _ in pq) / len(pq) if pq else nan
        if base == "price_weighted_item":
            pq = self.prices.get((b, i))
            if not pq:
                return nan
            w = sum(max(q, 0.0) for _, q in pq)
            if w == 0:
                return sum(p for p, _ in pq) / len(pq)
            return sum(p * max(q, 0.0) for p, q in pq) / w
        if base == "price_mean_item_shop":
            ps = self.shop_prices.get((b, s, i))
            return sum(ps) / len(ps) if ps else nan
        raise KeyError(base)

    def encoding(self, keys, s, i, train_blocks):
        vals, all_vals = [], []
        for (b, ss, ii), v in self.cells.items():
            if b not in train_blocks:
                continue
            all_vals.append(v[0])
            if keys == "shop_id" and ss == s:
                vals.append(v[0])
            if keys == "shop_id_category" and ss == s and self.cat[ii] == self.cat[i]:
                vals.append(v[0])
        pool = vals if vals else all_vals
        return sum(pool) / len(pool)
