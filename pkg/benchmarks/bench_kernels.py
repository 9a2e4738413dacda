"""Time the compiled GBT kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--rows 200000] [--features 40] [--repeat 3]

Both backends must agree bit for bit; the script checks that before timing.
"""
import argparse
import time

import numpy as np

from salesfc import gbt
from salesfc.gbt import kernels
from salesfc.gbt.booster import _presort
from salesfc.panel import FeatureMatrix


def make_data(n, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 50, size=(n, d)).astype(float)
    x[rng.random((n, d)) < 0.2] = np.nan
    y = np.nan_to_num(x[:, 0]) * 0.1 + np.sin(np.nan_to_num(x[:, 1])) + rng.normal(size=n)
    return x, y


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench(n, d, repeat, seed=0):
    x, y = make_data(n, d, seed)
    sorted_val, sorted_idx, offsets = _presort(np.ascontiguousarray(x.T))
    grad, hess = y.mean() - y, np.ones(n)
    node_of_row = np.zeros(n, dtype=np.int32)
    args = (sorted_val, sorted_idx, offsets, grad, hess, node_of_row,
            np.array([grad.sum()]), np.array([hess.sum()]), np.array([n], dtype=np.int64),
            1.0, 0.1, 0.0, 1.0)
    m = FeatureMatrix(tuple(f"f{j}" for j in range(d)), x, y, np.zeros(n, dtype=int), np.zeros((n, 2), dtype=int))
    params = gbt.GbtParams(eta=0.3, max_depth=6, n_rounds=5)

    rows = []
    results = {}
    for name in kernels.available():
        k = kernels.get(name)
        t_split, split = best_of(lambda: k.find_splits(*args), repeat)
        t_fit, model = best_of(lambda: gbt.fit(m, params, backend=name), 1)
        t_pred, pred = best_of(lambda: gbt.predict(model, x, backend=name), repeat)
        results[name] = (split, pred)
        rows.append((name, t_split, t_fit, t_pred))

    if len(results) == 2:
        (sa, pa), (sb, pb) = results["cython"], results["numpy"]
        for u, v in zip(sa, sb):
            assert np.array_equal(u, v), "backends disagree on find_splits"
        assert np.array_equal(pa, pb), "backends disagree on predictions"

    print(f"rows={n} features={d} (best of {repeat})")
    print(f"{'backend':<8} {'find_splits':>12} {'fit 5x6':>10} {'predict':>10}")
    for name, a, b, c in rows:
        print(f"{name:<8} {a:>11.4f}s {b:>9.3f}s {c:>9.4f}s")
    if len(rows) == 2:
        (_, a1, b1, c1), (_, a2, b2, c2) = rows
        print(f"{'speedup':<8} {a2 / a1:>11.1f}x {b2 / b1:>9.1f}x {c2 / c1:>9.1f}x")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=200_000)
    ap.add_argument("--features", type=int, default=40)
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args()
    bench(a.rows, a.features, a.repeat)


if __name__ == "__main__":
    main()
