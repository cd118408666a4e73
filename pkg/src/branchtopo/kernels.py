"""Backend selection for the point kernels.

The compiled extension is used when it imports; otherwise (or when
``BRANCHTOPO_PURE_PYTHON=1``) the numpy implementations are used.  Both
backends share the same tie-breaking rules and produce identical indices.
"""
import os

from . import _pykernels

python_backend = _pykernels

if os.environ.get("BRANCHTOPO_PURE_PYTHON") == "1":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"

compiled_backend = _impl if BACKEND == "cython" else None

fps_sorted = _impl.fps_sorted
ball_query_sorted = _impl.ball_query_sorted
knn_sorted = _impl.knn_sorted
scatter_add_rows = _impl.scatter_add_rows
bn_forward_train = _impl.bn_forward_train
bn_backward = _impl.bn_backward
