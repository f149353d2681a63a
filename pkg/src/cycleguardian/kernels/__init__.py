"""Hot numeric kernels with two interchangeable backends.

The numba backend is used when available; set ``CG_NO_NUMBA=1`` to force the
pure-numpy fallback. Both backends expose the same four functions and agree
to floating-point tolerance (see tests/test_kernels.py and
benchmarks/bench_kernels.py).
"""

import os

from . import conv_numpy

if os.environ.get("CG_NO_NUMBA", "").strip() in ("1", "true", "yes"):
    _impl = conv_numpy
    BACKEND = "numpy"
else:
    try:
        from . import conv_numba as _impl

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _impl = conv_numpy
        BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_grad_weight = _impl.conv2d_grad_weight
conv2d_grad_input = _impl.conv2d_grad_input
resample_apply = _impl.resample_apply

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_grad_weight",
    "conv2d_grad_input",
    "resample_apply",
]
