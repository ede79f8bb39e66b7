"""Kernel backend selection.

The compiled ``_q15core`` extension is used when it imports; otherwise the
numpy fallback.  ``EGRU_KERNEL=python`` forces the fallback.
"""
import os

from . import _q15py as python_backend

try:
    from . import _q15core as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("EGRU_KERNEL", "").lower() != "python":
    backend = compiled_backend
    BACKEND_NAME = "compiled"
else:
    backend = python_backend
    BACKEND_NAME = "python"

BACKENDS = {"python": python_backend}
if compiled_backend is not None:
    BACKENDS["compiled"] = compiled_backend

__all__ = ["backend", "BACKEND_NAME", "BACKENDS", "compiled_backend", "python_backend"]
