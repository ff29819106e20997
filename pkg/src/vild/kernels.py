"""Box-kernel backend selection.

Imports the compiled extension when present, otherwise the pure-numpy
twin. Set ``VILD_PURE_PYTHON=1`` to force the fallback. Both backends
produce identical outputs; only speed differs.
"""

from __future__ import annotations

import os

from vild import _kernels_py

try:
    from vild import _kernels as _compiled
except ImportError:
    _compiled = None

if _compiled is None or os.environ.get("VILD_PURE_PYTHON"):
    _active = _kernels_py
    BACKEND = "python"
else:
    _active = _compiled
    BACKEND = "compiled"

iou_matrix = _active.iou_matrix
nms_keep = _active.nms_keep
greedy_match = _active.greedy_match

__all__ = ["BACKEND", "iou_matrix", "nms_keep", "greedy_match"]
