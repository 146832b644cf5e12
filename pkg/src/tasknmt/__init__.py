"""Desk-scale multilingual GRU translation with task-selected attention."""

__version__ = "0.1.0"

from . import kernels  # noqa: F401  (fixes the backend at import time)
