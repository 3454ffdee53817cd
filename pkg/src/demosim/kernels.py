"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when
``DEMOSIM_PURE_PYTHON=1`` is set, the pure-Python versions are used.
"""

import os

from . import _fallback

if os.environ.get("DEMOSIM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _fallback

BACKEND = "cython" if _impl is not _fallback else "python"

relative_sd = _impl.relative_sd
rank_scores = _impl.rank_scores
partner_weights = _impl.partner_weights
