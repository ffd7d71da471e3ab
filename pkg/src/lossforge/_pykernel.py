"""Pure numpy evaluation of compiled loss programs.

A program is an ``(m, 3)`` int array of ``(opcode, arg1_slot, arg2_slot)``
rows in topological order. Slots 0..3 hold the inputs ``y, yhat, 1, -1``;
row ``j`` writes slot ``4 + j``; the last row is the root. ``arg2_slot`` is
-1 for unary opcodes.
"""
from __future__ import annotations

import numpy as np

from lossforge import ops

YHAT_SLOT = 1


def _inputs(y, yhat):
    y = np.ascontiguousarray(y, dtype=np.float64)
    yhat = np.ascontiguousarray(yhat, dtype=np.float64)
    return [y, yhat, np.ones_like(y), -np.ones_like(y)]


def _run(program, slots):
    for op, a1, a2 in program:
        b = slots[a2] if a2 >= 0 else None
        slots.append(np.asarray(ops.apply(int(op), slots[a1], b), dtype=np.float64))
    return slots


def forward(program, y, yhat):
    slots = _run(program, _inputs(y, yhat))
    return slots[-1]


def forward_grad(program, y, yhat):
    """Elementwise values and their derivative with respect to ``yhat``."""
    slots = _run(program, _inputs(y, yhat))
    adj = [np.zeros_like(slots[0]) for _ in slots]
    adj[-1] = np.ones_like(slots[0])
    with np.errstate(all="ignore"):
        for j in range(len(program) - 1, -1, -1):
            op, a1, a2 = (int(v) for v in program[j])
            upstream = adj[4 + j]
            b = slots[a2] if a2 >= 0 else None
            grads = ops.partials(op, slots[a1], b)
            for slot, g in zip((a1, a2), grads):
                # zero adjoint never meets an infinite partial (0 * inf)
                adj[slot] = adj[slot] + np.where(upstream == 0.0, 0.0, upstream * g)
    return slots[-1], adj[YHAT_SLOT]
