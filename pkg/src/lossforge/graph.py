"""Loss-function genotype: four hidden nodes and a root over ``y, yhat, 1, -1``.

Nodes name their arguments with string refs: ``"y"``, ``"yhat"``, ``"one"``,
``"neg_one"`` or ``"h0"`` .. ``"h3"``. The root is never a valid target.
Hidden nodes may reference each other freely, including themselves, so an
arbitrary graph can contain cycles; only graphs whose active part is acyclic
can be evaluated.

The per-element value is computed by a compiled program (see
:mod:`lossforge.kernel`); the batch loss is ``sign * mean(elementwise)``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from lossforge import kernel, ops

INPUT_REFS = ("y", "yhat", "one", "neg_one")
N_HIDDEN = 4
HIDDEN_REFS = tuple(f"h{i}" for i in range(N_HIDDEN))
ALL_REFS = INPUT_REFS + HIDDEN_REFS
_SLOT = {ref: i for i, ref in enumerate(INPUT_REFS)}
FORMAT_VERSION = 1


class StructuralError(ValueError):
    """The active subgraph cannot be evaluated (it contains a cycle)."""


class ParseError(ValueError):
    pass


def is_hidden(ref: str) -> bool:
    return ref in HIDDEN_REFS


@dataclass(frozen=True)
class Node:
    op: str
    args: tuple[str, ...]

    def __post_init__(self):
        kind = ops.get(self.op)
        if len(self.args) != kind.arity:
            raise ValueError(f"{self.op} takes {kind.arity} argument(s), got {len(self.args)}")
        for ref in self.args:
            if ref not in ALL_REFS:
                raise ValueError(f"bad node reference {ref!r}")

    @property
    def arity(self) -> int:
        return len(self.args)


@dataclass(frozen=True)
class LossGraph:
    """Immutable genotype.

    ``smoothing`` is only used by label-smoothed reference losses: targets
    become ``y * (1 - smoothing) + smoothing / K`` before evaluation. Evolved
    graphs always have ``smoothing == 0``.
    """

    hidden: tuple[Node, ...]
    root: Node
    sign: int = 1
    smoothing: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if len(self.hidden) != N_HIDDEN:
            raise ValueError(f"expected {N_HIDDEN} hidden nodes, got {len(self.hidden)}")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if not any(is_hidden(a) for a in self.root.args):
            raise ValueError("root needs at least one hidden-node argument")
        if not 0.0 <= self.smoothing < 1.0:
            raise ValueError("smoothing must lie in [0, 1)")

    def node(self, ref: str) -> Node:
        return self.hidden[int(ref[1:])]

    def with_sign(self, sign: int) -> "LossGraph":
        return replace(self, sign=sign)

    def flipped(self) -> "LossGraph":
        return replace(self, sign=-self.sign)

    @cached_property
    def program(self) -> np.ndarray:
        return compile_program(self)


def active_nodes(graph: LossGraph) -> set[str]:
    """Refs reachable from the root along argument edges."""
    seen: set[str] = set()
    stack = list(graph.root.args)
    while stack:
        ref = stack.pop()
        if ref in seen:
            continue
        seen.add(ref)
        if is_hidden(ref):
            stack.extend(graph.node(ref).args)
    return seen


def topological_order(graph: LossGraph) -> list[str]:
    """Active hidden refs, dependencies first. Raises StructuralError on a cycle."""
    order: list[str] = []
    state: dict[str, int] = {}  # 1 = on stack, 2 = done

    def visit(ref: str) -> None:
        mark = state.get(ref)
        if mark == 2:
            return
        if mark == 1:
            raise StructuralError(f"cycle through {ref}")
        state[ref] = 1
        for arg in graph.node(ref).args:
            if is_hidden(arg):
                visit(arg)
        state[ref] = 2
        order.append(ref)

    for arg in graph.root.args:
        if is_hidden(arg):
            visit(arg)
    return order


def compile_program(graph: LossGraph) -> np.ndarray:
    """Flatten the active subgraph into kernel instructions (root last)."""
    slot = dict(_SLOT)
    rows = []
    for ref in topological_order(graph):
        rows.append(_instruction(graph.node(ref), slot))
        slot[ref] = 3 + len(rows)
    rows.append(_instruction(graph.root, slot))
    return np.array(rows, dtype=np.intc)


def _instruction(node: Node, slot: dict[str, int]) -> tuple[int, int, int]:
    a2 = slot[node.args[1]] if node.arity == 2 else -1
    return ops.get(node.op).index, slot[node.args[0]], a2


# --- evaluation -------------------------------------------------------------

def elementwise(graph: LossGraph, y: float, yhat: float) -> float:
    """Root value for one (y, yhat) pair; no sign, no mean, no smoothing."""
    return float(kernel.forward(graph.program, np.array([y], float), np.array([yhat], float))[0])


def _prepare(graph: LossGraph, y, yhat):
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ValueError(f"shape mismatch: y {y.shape} vs yhat {yhat.shape}")
    if y.size == 0:
        raise ValueError("empty input")
    if graph.smoothing:
        k = y.shape[-1] if y.ndim else 1
        y = y * (1.0 - graph.smoothing) + graph.smoothing / k
    return y, yhat


def _mean(values: np.ndarray) -> float:
    # fsum is correctly rounded, so the mean does not depend on element order
    flat = values.ravel()
    if np.isfinite(flat).all():
        return math.fsum(flat.tolist()) / flat.size
    with np.errstate(all="ignore"):
        return float(np.mean(flat))


def loss(graph: LossGraph, y, yhat) -> float:
    y, yhat = _prepare(graph, y, yhat)
    return graph.sign * _mean(kernel.forward(graph.program, y, yhat))


def loss_gradient(graph: LossGraph, y, yhat) -> np.ndarray:
    """d loss / d yhat, same shape as ``yhat``."""
    return loss_and_gradient(graph, y, yhat)[1]


def loss_and_gradient(graph: LossGraph, y, yhat) -> tuple[float, np.ndarray]:
    y, yhat = _prepare(graph, y, yhat)
    values, dvalues = kernel.forward_grad(graph.program, y, yhat)
    n = values.size
    value = graph.sign * _mean(values)
    with np.errstate(all="ignore"):
        grad = np.reshape(dvalues * (graph.sign / n), yhat.shape)
    return value, grad


# --- phenotype --------------------------------------------------------------

@dataclass(eq=False)
class Phenotype:
    grid: np.ndarray
    values: np.ndarray
    finite: bool = field(init=False)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.grid.shape != self.values.shape:
            raise ValueError("grid and values differ in length")
        self.finite = bool(np.all(np.isfinite(self.values)))


def standard_grid(points: int = 2001, tail: range = range(2, 8)) -> np.ndarray:
    """Uniform grid on [0, 1] plus geometric tails 10^-j and 1 - 10^-j."""
    uniform = np.arange(points, dtype=np.float64) / (points - 1)
    extra = [10.0 ** -j for j in tail] + [1.0 - 10.0 ** -j for j in tail]
    grid = np.unique(np.concatenate([uniform, extra]))
    keep = np.concatenate([[True], np.diff(grid) > 1e-12])
    return grid[keep]


STANDARD_GRID = standard_grid()
STANDARD_GRID.flags.writeable = False


def phenotype(graph: LossGraph, grid=None) -> Phenotype:
    """Loss on y = (1, 0), yhat = (p, 1 - p) for every grid point p."""
    grid = STANDARD_GRID if grid is None else np.asarray(grid, dtype=np.float64)
    y = np.zeros((grid.size, 2))
    y[:, 0] = 1.0
    yhat = np.stack([grid, 1.0 - grid], axis=1)
    y, yhat = _prepare(graph, y, yhat)
    values = kernel.forward(graph.program, y, yhat)
    with np.errstate(all="ignore"):
        values = graph.sign * values.mean(axis=1)
    return Phenotype(grid, values)


def normalize_phenotype(ph: Phenotype) -> Phenotype:
    """Min-max rescale to [0, 1]; a constant phenotype becomes all zeros."""
    if not ph.finite:
        raise ValueError("cannot normalize a non-finite phenotype")
    lo, hi = ph.values.min(), ph.values.max()
    if hi - lo == 0:
        return Phenotype(ph.grid, np.zeros_like(ph.values))
    return Phenotype(ph.grid, (ph.values - lo) / (hi - lo))


def write_phenotype_csv(ph: Phenotype, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "loss"])
        for p, v in zip(ph.grid, ph.values):
            w.writerow([repr(float(p)), repr(float(v))])


# --- serialization ----------------------------------------------------------

def _node_doc(node: Node) -> dict:
    doc = {"op": node.op, "arg1": node.args[0]}
    if node.arity == 2:
        doc["arg2"] = node.args[1]
    return doc


def to_document(graph: LossGraph) -> dict:
    doc = {
        "version": FORMAT_VERSION,
        "sign": graph.sign,
        "hidden": [_node_doc(n) for n in graph.hidden],
        "root": _node_doc(graph.root),
    }
    if graph.smoothing:
        doc["smoothing"] = graph.smoothing
    return doc


def serialize(graph: LossGraph) -> str:
    return json.dumps(to_document(graph), indent=2)


def _parse_node(doc, where: str) -> Node:
    if not isinstance(doc, dict):
        raise ParseError(f"{where}: expected an object")
    op = doc.get("op")
    if op not in ops.BY_ID:
        raise ParseError(f"{where}.op: unknown operation {op!r}")
    arity = ops.BY_ID[op].arity
    keys = ["arg1", "arg2"][:arity]
    extra = {"arg1", "arg2"} - set(keys)
    if any(k in doc for k in extra):
        raise ParseError(f"{where}: arity mismatch, {op} takes {arity} argument(s)")
    args = []
    for k in keys:
        if k not in doc:
            raise ParseError(f"{where}: arity mismatch, {op} needs {k}")
        ref = doc[k]
        if ref not in ALL_REFS:
            raise ParseError(f"{where}.{k}: bad reference {ref!r}")
        args.append(ref)
    return Node(op, tuple(args))


def from_document(doc) -> LossGraph:
    if not isinstance(doc, dict):
        raise ParseError("document: expected an object")
    if doc.get("version") != FORMAT_VERSION:
        raise ParseError(f"version: unsupported {doc.get('version')!r}")
    sign = doc.get("sign")
    if sign not in (1, -1) or isinstance(sign, bool):
        raise ParseError(f"sign: expected 1 or -1, got {sign!r}")
    hidden = doc.get("hidden")
    if not isinstance(hidden, list) or len(hidden) != N_HIDDEN:
        raise ParseError(f"hidden: expected a list of {N_HIDDEN} nodes")
    nodes = [_parse_node(h, f"hidden[{i}]") for i, h in enumerate(hidden)]
    root = _parse_node(doc.get("root"), "root")
    smoothing = doc.get("smoothing", 0.0)
    if not isinstance(smoothing, (int, float)) or isinstance(smoothing, bool):
        raise ParseError("smoothing: expected a number")
    try:
        return LossGraph(tuple(nodes), root, sign, float(smoothing))
    except ValueError as exc:
        raise ParseError(f"root: {exc}") from None


def parse(text: str) -> LossGraph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return from_document(doc)


def load(path: str | Path) -> LossGraph:
    try:
        return parse(Path(path).read_text())
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from None


def save(graph: LossGraph, path: str | Path) -> None:
    Path(path).write_text(serialize(graph) + "\n")


# --- rendering --------------------------------------------------------------

_ATOM, _MUL, _ADD = 3, 2, 1

_CALL_NAMES = {
    "exp": "exp", "sigmoid": "sigmoid", "d_sigmoid": "d_sigmoid",
    "softsign": "softsign", "d_softsign": "d_softsign", "softplus": "softplus",
    "erf": "erf", "erfc": "erfc", "sin": "sin", "sinh": "sinh",
    "arcsinh": "arcsinh", "tanh": "tanh", "d_tanh": "d_tanh",
    "arctanh": "arctanh", "abs": "abs", "sqrt": "sqrt",
    "bessel_i0": "bessel_i0", "bessel_i1": "bessel_i1",
    "bessel_i0e": "bessel_i0e", "bessel_i1e": "bessel_i1e",
}
_INPUT_TEXT = {"y": ("y", _ATOM), "yhat": ("yhat", _ATOM), "one": ("1", _ATOM),
               "neg_one": ("(-1)", _ATOM)}


def _wrap(term: tuple[str, int], min_prec: int) -> str:
    text, prec = term
    return text if prec >= min_prec else f"({text})"


def _render(graph: LossGraph, ref: str, y_text: str) -> tuple[str, int]:
    if ref == "y":
        return y_text, _ATOM
    if ref in _INPUT_TEXT:
        return _INPUT_TEXT[ref]
    return _render_node(graph, graph.node(ref), y_text)


def _render_node(graph: LossGraph, node: Node, y_text: str) -> tuple[str, int]:
    a = _render(graph, node.args[0], y_text)
    b = _render(graph, node.args[1], y_text) if node.arity == 2 else None
    op = node.op
    if op in _CALL_NAMES:
        return f"{_CALL_NAMES[op]}({a[0]})", _ATOM
    simple = {
        "neg": (f"-{_wrap(a, _MUL)}", _ADD),
        "recip_eps": (f"1/({a[0]}+eps)", _MUL),
        "square": (f"{_wrap(a, _ATOM)}^2", _ATOM),
        "ln_abs_eps": (f"ln(abs({a[0]})+eps)", _ATOM),
        "log10_abs_eps": (f"log10(abs({a[0]})+eps)", _ATOM),
        "relu": (f"max({a[0]},0)", _ATOM),
        "neg_relu": (f"min({a[0]},0)", _ATOM),
    }
    if op in simple:
        return simple[op]
    if op == "add":
        return f"{a[0]}+{b[0]}", _ADD
    if op == "sub":
        return f"{a[0]}-{_wrap(b, _MUL)}", _ADD
    if op == "mul":
        return f"{_wrap(a, _MUL)}*{_wrap(b, _MUL)}", _MUL
    if op == "div_eps":
        return f"{_wrap(a, _MUL)}/({b[0]}+eps)", _MUL
    if op == "div_sqrt1p":
        return f"{_wrap(a, _MUL)}/sqrt(1+{_wrap(b, _ATOM)}^2)", _MUL
    if op in ("max", "min"):
        return f"{op}({a[0]},{b[0]})", _ATOM
    raise AssertionError(op)


def to_expression(graph: LossGraph) -> str:
    """Infix text of the active subgraph, wrapped in the sign and mean.

    Shared hidden nodes are expanded at every use. Cyclic graphs render the
    repeated node as ``<cycle:hK>``.
    """
    try:
        topological_order(graph)
    except StructuralError:
        return _cyclic_expression(graph)
    y_text = "y"
    if graph.smoothing:
        y_text = f"(y*(1-{graph.smoothing!r})+{graph.smoothing!r}/K)"
    body = _render_node(graph, graph.root, y_text)[0]
    prefix = "-(1/n)" if graph.sign < 0 else "(1/n)"
    return f"{prefix}*sum({body})"


def _cyclic_expression(graph: LossGraph) -> str:
    def go(ref: str, stack: tuple[str, ...]) -> str:
        if not is_hidden(ref):
            return _INPUT_TEXT[ref][0]
        if ref in stack:
            return f"<cycle:{ref}>"
        node = graph.node(ref)
        inner = ",".join(go(a, stack + (ref,)) for a in node.args)
        return f"{node.op}({inner})"

    inner = ",".join(go(a, ()) for a in graph.root.args)
    prefix = "-(1/n)" if graph.sign < 0 else "(1/n)"
    return f"{prefix}*sum({graph.root.op}({inner}))"
