"""Sweep kernels: a compiled extension for the hot Metropolis loop with a
NumPy fallback, selected at import time.

`run_block(evaluator, state, randoms)` advances every chain by the sweeps
covered by `randoms` in place and returns the number of accepted moves.  Both
backends consume the same pre-drawn per-chain random layout, so a chain's
trajectory is backend independent up to floating-point rounding.
"""

from . import numpy_backend

try:  # pragma: no cover - exercised only when the extension is built
    from . import cython_backend

    HAVE_COMPILED = cython_backend.AVAILABLE
except ImportError:  # pragma: no cover
    cython_backend = None
    HAVE_COMPILED = False

BACKENDS = ["numpy"] + (["compiled"] if HAVE_COMPILED else [])


def default_backend() -> str:
    return "compiled" if HAVE_COMPILED else "numpy"


def resolve_backend(name: str, evaluator) -> str:
    """Pick the concrete backend for a request ("auto" prefers compiled)."""
    if name == "auto":
        if HAVE_COMPILED and cython_backend.supports(evaluator):
            return "compiled"
        return "numpy"
    if name == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled kernel not built")
        if not cython_backend.supports(evaluator):
            raise RuntimeError("compiled kernel does not support this evaluator")
        return "compiled"
    if name == "numpy":
        return "numpy"
    raise ValueError(f"unknown backend {name!r}")


def run_block(backend: str, evaluator, state, randoms) -> int:
    if backend == "numpy":
        return numpy_backend.run_block(evaluator, state, randoms)
    return cython_backend.run_block(evaluator, state, randoms)
