# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled split search and tree traversal.

Arithmetic order mirrors ``_fallback.py`` operation for operation so both
backends return bit-identical results.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport isnan

cnp.import_array()


cdef inline double soft(double g, double alpha) noexcept nogil:
    if g > alpha:
        return g - alpha
    if g < -alpha:
        return g + alpha
    return 0.0


cdef inline double score(double g, double h, double lam, double alpha) noexcept nogil:
    cdef double t = soft(g, alpha)
    return t * t / (h + lam)


def find_splits(
    const double[::1] sorted_val,
    const int[::1] sorted_idx,
    const long long[::1] offsets,
    const double[::1] grad,
    const double[::1] hess,
    const int[::1] node_of_row,
    const double[::1] node_g,
    const double[::1] node_h,
    const long long[::1] node_n,
    double lam,
    double alpha,
    double gamma,
    double min_child_weight,
):
    """Best (feature, threshold, default_left, gain) per level node; feature -1 if none admissible."""
    cdef Py_ssize_t n_nodes = node_g.shape[0]
    cdef Py_ssize_t n_feat = offsets.shape[0] - 1
    best_feat_a = np.full(n_nodes, -1, dtype=np.int32)
    best_thr_a = np.zeros(n_nodes, dtype=np.float64)
    best_left_a = np.zeros(n_nodes, dtype=np.uint8)
    best_gain_a = np.zeros(n_nodes, dtype=np.float64)
    cdef int[::1] best_feat = best_feat_a
    cdef double[::1] best_thr = best_thr_a
    cdef unsigned char[::1] best_left = best_left_a
    cdef double[::1] best_gain = best_gain_a

    nm_g_a = np.empty(n_nodes, dtype=np.float64)
    nm_h_a = np.empty(n_nodes, dtype=np.float64)
    nm_n_a = np.empty(n_nodes, dtype=np.int64)
    run_g_a = np.empty(n_nodes, dtype=np.float64)
    run_h_a = np.empty(n_nodes, dtype=np.float64)
    last_a = np.empty(n_nodes, dtype=np.float64)
    seen_a = np.empty(n_nodes, dtype=np.uint8)
    parent_a = np.empty(n_nodes, dtype=np.float64)
    cdef double[::1] nm_g = nm_g_a
    cdef double[::1] nm_h = nm_h_a
    cdef long long[::1] nm_n = nm_n_a
    cdef double[::1] run_g = run_g_a
    cdef double[::1] run_h = run_h_a
    cdef double[::1] last = last_a
    cdef unsigned char[::1] seen = seen_a
    cdef double[::1] parent = parent_a

    cdef Py_ssize_t j, k, p
    cdef int r, node
    cdef double v, thr, mg, mh, gl, hl, gr, hr, gain
    cdef bint has_missing

    with nogil:
        for k in range(n_nodes):
            parent[k] = score(node_g[k], node_h[k], lam, alpha)
        for j in range(n_feat):
            for k in range(n_nodes):
                nm_g[k] = 0.0
                nm_h[k] = 0.0
                nm_n[k] = 0
                run_g[k] = 0.0
                run_h[k] = 0.0
                seen[k] = 0
            for p in range(offsets[j], offsets[j + 1]):
                r = sorted_idx[p]
                node = node_of_row[r]
                if node < 0:
                    continue
                nm_g[node] = nm_g[node] + grad[r]
                nm_h[node] = nm_h[node] + hess[r]
                nm_n[node] += 1
            for p in range(offsets[j], offsets[j + 1]):
                r = sorted_idx[p]
                node = node_of_row[r]
                if node < 0:
                    continue
                v = sorted_val[p]
                if seen[node] and v > last[node]:
                    thr = 0.5 * (last[node] + v)
                    if not (thr > last[node]):
                        thr = v
                    # missing values go right
                    gl = run_g[node]
                    hl = run_h[node]
                    gr = node_g[node] - gl
                    hr = node_h[node] - hl
                    if hl >= min_child_weight and hr >= min_child_weight and hl + lam > 0 and hr + lam > 0:
                        gain = (score(gl, hl, lam, alpha) + score(gr, hr, lam, alpha) - parent[node]) * 0.5 - gamma
                        if gain > best_gain[node]:
                            best_gain[node] = gain
                            best_feat[node] = <int>j
                            best_thr[node] = thr
                            best_left[node] = 0
                    has_missing = nm_n[node] < node_n[node]
                    if has_missing:
                        mg = node_g[node] - nm_g[node]
                        mh = node_h[node] - nm_h[node]
                        gl = run_g[node] + mg
                        hl = run_h[node] + mh
                        gr = node_g[node] - gl
                        hr = node_h[node] - hl
                        if hl >= min_child_weight and hr >= min_child_weight and hl + lam > 0 and hr + lam > 0:
                            gain = (score(gl, hl, lam, alpha) + score(gr, hr, lam, alpha) - parent[node]) * 0.5 - gamma
                            if gain > best_gain[node]:
                                best_gain[node] = gain
                                best_feat[node] = <int>j
                                best_thr[node] = thr
                                best_left[node] = 1
                run_g[node] = run_g[node] + grad[r]
                run_h[node] = run_h[node] + hess[r]
                last[node] = v
                seen[node] = 1
    return best_feat_a, best_thr_a, best_left_a, best_gain_a


def predict_tree(
    const double[:, ::1] x,
    const int[::1] feat,
    const double[::1] thr,
    const unsigned char[::1] default_left,
    const int[::1] left,
    const int[::1] right,
    const double[::1] value,
):
    """Leaf value reached by every row of ``x``."""
    cdef Py_ssize_t n = x.shape[0]
    out_a = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_a
    cdef Py_ssize_t i
    cdef int node, f
    cdef double v
    with nogil:
        for i in range(n):
            node = 0
            while feat[node] >= 0:
                f = feat[node]
                v = x[i, f]
                if isnan(v):
                    node = left[node] if default_left[node] else right[node]
                elif v < thr[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i] = value[node]
    return out_a
