"""Minimal weak upper gradients, plans and differentiable structure on metric graphs."""
import os as _os

_threads = _os.environ.get("MODGRAD_THREADS")
if _threads and _threads.isdigit() and int(_threads) > 0:
    # must precede the first numpy import to bound BLAS pools
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
