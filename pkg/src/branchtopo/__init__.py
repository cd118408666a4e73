"""Synthetic branching structures, a point-cloud instance segmentation network
and topology metrics, with a small autodiff engine underneath."""
import os as _os

__version__ = "0.1.0"

_threads = _os.environ.get("BRANCHTOPO_THREADS")
if _threads:
    # must run before numpy loads its BLAS
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)


def thread_cap() -> int:
    """Worker count allowed by ``BRANCHTOPO_THREADS`` (default 1)."""
    raw = _os.environ.get("BRANCHTOPO_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)
