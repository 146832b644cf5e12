"""Numeric kernel layer with a compiled core and a pure-numpy fallback.

The backend is chosen once at import time: the Cython extension if it built,
otherwise the numpy implementations.  ``TASKNMT_KERNELS=python`` or
``TASKNMT_KERNELS=compiled`` forces a lane (the latter raises if the
extension is unavailable).  Callers must go through the module attributes
(``kernels.sigmoid(...)``) so that :func:`set_backend` can rebind them, which
the benchmark suite uses to time both lanes in one process.
"""

import os

from . import _python

try:
    from . import _speedups
except ImportError:  # extension not built
    _speedups = None

_KERNEL_NAMES = (
    "sigmoid",
    "sigmoid_grad",
    "tanh",
    "tanh_grad",
    "gru_blend",
    "gru_blend_grad",
    "gru_gates_fwd",
    "gru_out_fwd",
    "gru_out_bwd",
    "gru_gates_bwd",
    "softmax_columns",
    "softmax_columns_grad",
    "softmax_xent_columns",
    "softmax_xent_columns_grad",
    "attention_energy",
    "attention_energy_grad",
    "context_combine",
    "context_combine_grad",
    "embedding_scatter_add",
    "adam_step",
)

BACKEND = None


def available_backends():
    names = ["python"]
    if _speedups is not None:
        names.insert(0, "compiled")
    return names


def set_backend(name):
    """Bind the module-level kernel functions to one lane."""
    global BACKEND
    if name == "compiled":
        if _speedups is None:
            raise RuntimeError(
                "compiled kernels requested via TASKNMT_KERNELS but the "
                "tasknmt.kernels._speedups extension is not built"
            )
        impl = _speedups
    elif name == "python":
        impl = _python
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    for fname in _KERNEL_NAMES:
        globals()[fname] = getattr(impl, fname)
    BACKEND = name
    return name


_requested = os.environ.get("TASKNMT_KERNELS", "").strip().lower()
if _requested:
    set_backend(_requested)
else:
    set_backend("compiled" if _speedups is not None else "python")
