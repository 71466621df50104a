"""Hot kernels with import-time backend selection.

The compiled Cython module is used when its extension was built; otherwise
the pure-Python/numpy fallback takes over transparently. Both expose the
same three functions with identical (bit-for-bit) semantics. The active
choice is reported in ``BACKEND`` ("compiled" or "python").
"""

from . import pykernels

try:
    from . import ckernels as _impl

    BACKEND = "compiled"
except ImportError:  # extension not built; run from source tree
    _impl = pykernels
    BACKEND = "python"

nms_kernel = _impl.nms_kernel
nmw_kernel = _impl.nmw_kernel
greedy_match_kernel = _impl.greedy_match_kernel

__all__ = ["BACKEND", "nms_kernel", "nmw_kernel", "greedy_match_kernel", "pykernels"]
