"""Backend selection for the loss-program kernel.

The compiled extension is used when it was built; otherwise the numpy
implementation takes over. The compiled loop wins on small batches (per-call
overhead dominates), numpy's vectorized transcendentals win on large ones,
so by default large inputs go to numpy. ``benchmarks/bench_kernel.py``
measures the crossover.

``LOSSFORGE_BACKEND`` overrides the choice: ``python`` or ``cython`` pins
one backend for every size, ``auto`` (the default) splits by size.
"""
from __future__ import annotations

import os

import numpy as np

from lossforge import _pykernel

try:
    from lossforge import _ckernel
except ImportError:  # extension not built
    _ckernel = None

BACKENDS = {"python": _pykernel}
if _ckernel is not None:
    BACKENDS["cython"] = _ckernel

# element counts from which numpy is faster
FORWARD_CUTOFF = 1024
GRAD_CUTOFF = 4096

_mode = os.environ.get("LOSSFORGE_BACKEND", "auto").lower()
if _mode not in ("auto", "python", "cython"):
    raise ImportError(f"LOSSFORGE_BACKEND must be auto, python or cython, not {_mode!r}")
if _ckernel is None or _mode == "python":
    BACKEND = "python"
elif _mode == "cython":
    BACKEND = "cython"
else:
    BACKEND = "auto"


def _pick(y, cutoff: int):
    if BACKEND == "python" or (BACKEND == "auto" and np.size(y) >= cutoff):
        return _pykernel
    return _ckernel


def forward(program, y, yhat):
    """Per-element value of the program's root."""
    return _pick(y, FORWARD_CUTOFF).forward(program, y, yhat)


def forward_grad(program, y, yhat):
    """Per-element value and its derivative with respect to ``yhat``."""
    return _pick(y, GRAD_CUTOFF).forward_grad(program, y, yhat)
