"""Backend selection for the hot loops.

The compiled extension is used when it imports; set ``HOLOIDET_PURE_PYTHON=1``
to force the numpy fallback. Both backends share one signature per kernel.
"""
import os

from holoidet import _pykernels

if os.environ.get("HOLOIDET_PURE_PYTHON"):
    _impl = _pykernels
    BACKEND = "numpy"
else:
    try:
        from holoidet import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "numpy"

holo_gain_map = _impl.holo_gain_map
border_correlation = _impl.border_correlation

BACKENDS = {"numpy": _pykernels}
if BACKEND == "cython":
    BACKENDS["cython"] = _impl
