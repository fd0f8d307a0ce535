"""Kernel backend selection.

The compiled ``_core`` extension is used when it imports; otherwise the
pure-Python ``_fallback`` module. Set ``WMSPOT_BACKEND=python`` to force the
fallback (``compiled`` makes a missing extension an ImportError).
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _fallback


def _select() -> tuple[ModuleType, str]:
    choice = os.environ.get("WMSPOT_BACKEND", "auto").lower()
    if choice == "python":
        return _fallback, "python"
    try:
        from . import _core
    except ImportError:
        if choice == "compiled":
            raise
        return _fallback, "python"
    return _core, "compiled"


impl, BACKEND = _select()

beta_fill = impl.beta_fill
clip_area = impl.clip_area
iou_matrix = impl.iou_matrix
edit_counts = impl.edit_counts


def compiled_available() -> bool:
    try:
        from . import _core  # noqa: F401
    except ImportError:
        return False
    return True
