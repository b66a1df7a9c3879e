"""Emitter-tip micrograph pipeline: synthetic data, attention CNN regression,
and a classical contour/circle-fit measurement oracle.

The heavy lifting lives in the compiled ``_simic`` extension. An installed
wheel carries it inside this package; a source tree can point at a CMake build
directory through the ``SIMIC_MODULE_DIR`` environment variable instead.
"""

import os as _os
import sys as _sys

try:
    from . import _simic as _backend
except ImportError:  # in-tree build: extension lives next to the CMake outputs
    _dir = _os.environ.get("SIMIC_MODULE_DIR")
    if not _dir:
        raise
    if _dir not in _sys.path:
        _sys.path.insert(0, _dir)
    import _simic as _backend

__all__ = [_n for _n in dir(_backend) if not _n.startswith("_")]
globals().update({_n: getattr(_backend, _n) for _n in __all__})
__version__ = _backend.__version__
