"""Kernel backend selection.

The compiled extension (`layerflow._backend._fast`) is used when it
imported cleanly; otherwise the numpy backend takes over. Set
LAYERFLOW_BACKEND=pure or =fast to force a choice ("fast" raises if the
extension is unavailable).
"""
import os

from . import pure

fast = None
_choice = os.environ.get("LAYERFLOW_BACKEND", "auto").lower()
if _choice not in ("auto", "pure", "fast"):
    raise ValueError(f"LAYERFLOW_BACKEND must be auto, pure or fast, got {_choice!r}")

if _choice in ("auto", "fast"):
    try:
        from . import _fast as fast  # type: ignore[no-redef]
    except ImportError:
        fast = None
        if _choice == "fast":
            raise ImportError(
                "LAYERFLOW_BACKEND=fast but the compiled backend is not built"
            )

active = pure if (_choice == "pure" or fast is None) else fast


def backend_name():
    return active.NAME
