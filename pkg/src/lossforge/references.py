"""Built-in reference losses as ordinary 4-node genotypes.

Every NeuroLoss shares the subexpression ``q = yhat / sqrt(1 + (yhat/(y+eps))^2)``
built from two hidden nodes, which leaves two nodes for the remaining terms.
Label-smoothed cross-entropy uses the graph's ``smoothing`` field.
"""
from __future__ import annotations

import re

from lossforge.graph import LossGraph, Node

LABEL_SMOOTHING_PRESETS = {"ce_ls010": 0.10, "ce_ls00003": 0.00003}


def _g(hidden, root, sign=-1, smoothing=0.0) -> LossGraph:
    nodes = [Node(op, tuple(args)) for op, *args in hidden]
    while len(nodes) < 4:  # unused slots
        nodes.append(Node("neg", ("y",)))
    return LossGraph(tuple(nodes), Node(root[0], tuple(root[1:])), sign, smoothing)


# h0 = yhat/(y+eps), h1 = yhat/sqrt(1+h0^2)
_Q = [("div_eps", "yhat", "y"), ("div_sqrt1p", "yhat", "h0")]


def _ce(smoothing: float = 0.0) -> LossGraph:
    return _g([("ln_abs_eps", "yhat")], ("mul", "y", "h0"), smoothing=smoothing)


_BUILDERS = {
    "ce": _ce,
    "neuroloss1": lambda: _g(_Q + [("ln_abs_eps", "h1"), ("mul", "yhat", "h1")], ("add", "h2", "h3")),
    "neuroloss2": lambda: _g(_Q + [("log10_abs_eps", "h1"), ("sin", "h1")], ("add", "h2", "h3")),
    "neuroloss3": lambda: _g(_Q + [("ln_abs_eps", "h1"), ("min", "y", "h0")], ("add", "h2", "h3")),
    "bessel": lambda: _g([("bessel_i0e", "yhat"), ("min", "h0", "y")], ("add", "h1", "h0"), sign=1),
    "hm1": lambda: _g(
        [("div_sqrt1p", "yhat", "y"), ("ln_abs_eps", "h0"), ("div_eps", "yhat", "y"), ("max", "y", "h2")],
        ("div_sqrt1p", "h1", "h3")),
    "hm2": lambda: _g(_Q + [("ln_abs_eps", "h1"), ("arcsinh", "h1")], ("max", "h2", "h3")),
    "hm3": lambda: _g(_Q + [("ln_abs_eps", "h1"), ("square", "h1")], ("add", "h2", "h3")),
    "hm4": lambda: _g(_Q + [("ln_abs_eps", "h1"), ("sinh", "h1")], ("add", "h2", "h3")),
    "hm5": lambda: _g(_Q + [("ln_abs_eps", "h1"), ("erf", "h0")], ("add", "h2", "h3")),
    "hm6": lambda: _g(_Q + [("ln_abs_eps", "h1"), ("tanh", "h0")], ("add", "h2", "h3")),
    "hm7": lambda: _g(
        [("mul", "y", "yhat"), ("ln_abs_eps", "h0"), ("div_eps", "yhat", "y")],
        ("div_sqrt1p", "h1", "h2")),
}

NAMES = tuple(_BUILDERS) + ("ce_smoothed",) + tuple(LABEL_SMOOTHING_PRESETS)
_SMOOTHED = re.compile(r"ce_smoothed\(([^)]+)\)$")


def reference_loss(name: str, alpha: float | None = None) -> LossGraph:
    """Look up a reference loss.

    ``ce_smoothed`` takes ``alpha`` (default 0.10), also accepted inline as
    ``"ce_smoothed(0.00003)"``; ``ce_ls010`` and ``ce_ls00003`` are presets.
    """
    key = name.strip().lower()
    match = _SMOOTHED.match(key)
    if match:
        return _ce(float(match.group(1)))
    if key == "ce_smoothed":
        return _ce(0.10 if alpha is None else alpha)
    if key in LABEL_SMOOTHING_PRESETS:
        return _ce(LABEL_SMOOTHING_PRESETS[key])
    try:
        return _BUILDERS[key]()
    except KeyError:
        raise ValueError(f"unknown reference loss {name!r}") from None
