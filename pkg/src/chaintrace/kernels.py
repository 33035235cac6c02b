"""Hot-kernel dispatch: compiled extension when built, numpy otherwise.

Set ``CHAINTRACE_PURE=1`` in the environment to force the numpy path.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("CHAINTRACE_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # extension not built
        pass

im2col = _impl.im2col
col2im = _impl.col2im
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
best_gini_split = _impl.best_gini_split
batchnorm_forward = _impl.batchnorm_forward
batchnorm_backward = _impl.batchnorm_backward

__all__ = ["BACKEND", "im2col", "col2im", "maxpool_forward", "maxpool_backward",
           "best_gini_split", "batchnorm_forward", "batchnorm_backward"]
