"""Numeric kernels with two interchangeable backends.

``fast`` is a compiled extension built at install time; ``numpy`` is a pure
im2col/stride-tricks implementation. The compiled backend is preferred when
present. Set ``BLINDRX_KERNELS=numpy`` or ``BLINDRX_KERNELS=fast`` to force
one (forcing ``fast`` without the extension raises ImportError).

All five entry points take and return contiguous arrays:
    conv1d_fwd(x, w, b)            real batched conv, same padding, odd K
    conv1d_bwd(x, w, gy)           -> (gx, gw, gb)
    cfir_fwd(x, t, center)         per-row complex FIR
    cfir_bwd_x(t, gy, center)
    cfir_bwd_t(x, gy, center, K)
"""

from __future__ import annotations

import os

from . import _np

_choice = os.environ.get("BLINDRX_KERNELS", "").strip().lower()

if _choice == "numpy":
    _impl = _np
    BACKEND = "numpy"
elif _choice == "fast":
    from . import _fast as _impl  # type: ignore[no-redef]

    BACKEND = "fast"
elif _choice == "":
    try:
        from . import _fast as _impl  # type: ignore[no-redef]

        BACKEND = "fast"
    except ImportError:
        _impl = _np
        BACKEND = "numpy"
else:
    raise ValueError(f"BLINDRX_KERNELS must be 'fast' or 'numpy', got {_choice!r}")

conv1d_fwd = _impl.conv1d_fwd
conv1d_bwd = _impl.conv1d_bwd
cfir_fwd = _impl.cfir_fwd
cfir_bwd_x = _impl.cfir_bwd_x
cfir_bwd_t = _impl.cfir_bwd_t

__all__ = [
    "BACKEND",
    "conv1d_fwd",
    "conv1d_bwd",
    "cfir_fwd",
    "cfir_bwd_x",
    "cfir_bwd_t",
]
