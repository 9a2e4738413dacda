import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "benchmarks"))

import bench_kernels  # noqa: E402


def test_benchmark_smoke(capsys):
    bench_kernels.bench(3000, 4, 1)
    out = capsys.readouterr().out
    assert "find_splits" in out and "numpy" in out
