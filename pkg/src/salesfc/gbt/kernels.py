"""Backend selection for the split-search and traversal kernels.

The compiled extension is used when it was built; setting
``SALESFC_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from salesfc.gbt import _fallback

fallback = _fallback

if os.environ.get("SALESFC_PURE_PYTHON"):
    compiled = None
else:
    try:
        from salesfc.gbt import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

BACKEND = "cython" if compiled is not None else "numpy"
_impl = compiled if compiled is not None else _fallback

find_splits = _impl.find_splits
predict_tree = _impl.predict_tree


def get(backend: str | None = None):
    """Kernel module by name (``"cython"``, ``"numpy"`` or None for the default)."""
    if backend in (None, BACKEND):
        return _impl
    if backend == "numpy":
        return _fallback
    if backend == "cython":
        if compiled is not None:
            return compiled
        try:
            from salesfc.gbt import _kernels
        except ImportError as exc:
            raise ImportError("compiled kernels are not built; run `pip install -e .`") from exc
        return _kernels
    raise ValueError(f"unknown kernel backend {backend!r}")


def available() -> tuple[str, ...]:
    """Backends that can be requested explicitly."""
    try:
        from salesfc.gbt import _kernels  # noqa: F401
    except ImportError:
        return ("numpy",)
    return ("cython", "numpy")
