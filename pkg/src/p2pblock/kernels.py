"""Backend selection for the power-flow kernels.

The compiled extension is used when it imports; setting
``P2PBLOCK_PURE_PYTHON=1`` forces the NumPy fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("P2PBLOCK_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass

power_injections = _impl.power_injections
jacobian_blocks = _impl.jacobian_blocks
