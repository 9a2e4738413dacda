"""Pure numpy versions of the compiled kernels (same signatures, same results)."""
import numpy as np


def _soft(g, alpha):
    return np.where(g > alpha, g - alpha, np.where(g < -alpha, g + alpha, 0.0))


def _score(g, h, lam, alpha):
    t = _soft(g, alpha)
    return t * t / (h + lam)


def find_splits(sorted_val, sorted_idx, offsets, grad, hess, node_of_row, node_g, node_h, node_n,
                lam, alpha, gamma, min_child_weight):
    n_nodes = len(node_g)
    best_feat = np.full(n_nodes, -1, dtype=np.int32)
    best_thr = np.zeros(n_nodes, dtype=np.float64)
    best_left = np.zeros(n_nodes, dtype=np.uint8)
    best_gain = np.zeros(n_nodes, dtype=np.float64)
    parent = np.array([float(_score(node_g[k], node_h[k], lam, alpha)) for k in range(n_nodes)])

    for j in range(len(offsets) - 1):
        rows = sorted_idx[offsets[j]:offsets[j + 1]]
        vals = sorted_val[offsets[j]:offsets[j + 1]]
        nodes = node_of_row[rows]
        keep = nodes >= 0
        rows, nodes, vals = rows[keep], nodes[keep], vals[keep]
        if rows.size == 0:
            continue
        order = np.argsort(nodes, kind="stable")
        rows, nodes, vals = rows[order], nodes[order], vals[order]
        bounds = np.flatnonzero(np.diff(nodes)) + 1
        starts = np.concatenate(([0], bounds))
        ends = np.concatenate((bounds, [rows.size]))
        for s, e in zip(starts, ends):
            k = nodes[s]
            r = rows[s:e]
            v = vals[s:e]
            cg = np.cumsum(grad[r])
            ch = np.cumsum(hess[r])
            cand = np.flatnonzero(v[1:] > v[:-1])
            if cand.size == 0:
                continue
            lo, hi = v[cand], v[cand + 1]
            thr = 0.5 * (lo + hi)
            thr = np.where(thr > lo, thr, hi)
            run_g, run_h = cg[cand], ch[cand]
            gains = np.full((cand.size, 2), -np.inf)

            def evaluate(gl, hl):
                gr = node_g[k] - gl
                hr = node_h[k] - hl
                ok = (hl >= min_child_weight) & (hr >= min_child_weight) & (hl + lam > 0) & (hr + lam > 0)
                with np.errstate(divide="ignore", invalid="ignore"):
                    gain = (_score(gl, hl, lam, alpha) + _score(gr, hr, lam, alpha) - parent[k]) * 0.5 - gamma
                return np.where(ok, gain, -np.inf)

            gains[:, 0] = evaluate(run_g, run_h)
            if r.size < node_n[k]:
                mg = node_g[k] - cg[-1]
                mh = node_h[k] - ch[-1]
                gains[:, 1] = evaluate(run_g + mg, run_h + mh)
            flat = gains.ravel()
            i = int(np.argmax(flat))
            if flat[i] > best_gain[k]:
                best_gain[k] = flat[i]
                best_feat[k] = j
                best_thr[k] = thr[i // 2]
                best_left[k] = i % 2
    return best_feat, best_thr, best_left, best_gain


def predict_tree(x, feat, thr, default_left, left, right, value):
    node = np.zeros(x.shape[0], dtype=np.int64)
    active = np.flatnonzero(feat[node] >= 0)
    while active.size:
        nd = node[active]
        v = x[active, feat[nd]]
        go_left = np.where(np.isnan(v), default_left[nd].astype(bool), v < thr[nd])
        node[active] = np.where(go_left, left[nd], right[nd])
        active = active[feat[node[active]] >= 0]
    return value[node].astype(np.float64)
