"""Backend dispatch for the hot numeric kernels.

``DATAPATHS_KERNELS=numpy`` forces the pure-numpy path; ``numba`` (the
default) uses the jitted kernels and silently falls back to numpy when numba
cannot be imported. The active backend name is exposed as ``BACKEND``.
"""

import os

_requested = os.environ.get("DATAPATHS_KERNELS", "numba").lower()

if _requested not in ("numba", "numpy"):
    raise ValueError(f"DATAPATHS_KERNELS must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba":
    try:
        from . import _numba as _impl

        BACKEND = "numba"
    except ImportError:
        from . import _numpy as _impl

        BACKEND = "numpy"
else:
    from . import _numpy as _impl

    BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_weights = _impl.conv2d_backward_weights
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_backward_input",
    "conv2d_backward_weights",
    "maxpool_forward",
    "maxpool_backward",
]
