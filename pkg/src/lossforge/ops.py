"""Elementwise operation catalog for loss-function graphs.

Every operation works on numpy arrays (vectorized) and on plain floats via
:func:`eval_op` / :func:`grad_op`. Values never raise: domain violations and
overflow come back as ``nan``/``inf`` and are left for the integrity check
to reject.

The catalog order below is stable. It is the order used for uniform
sampling and the integer opcode used by the compiled kernel, so do not
reorder it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

EPS = 1e-7
ARCTANH_CLAMP = 1.0 - 1e-7
_LN10 = np.log(10.0)
_TWO_OVER_SQRT_PI = 2.0 / np.sqrt(np.pi)


@dataclass(frozen=True)
class OperationKind:
    id: str
    arity: int
    index: int


def _sign(x):
    return np.sign(x)


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _d_sigmoid(x):
    # sigma * (1 - sigma) without cancellation for large |x|
    e = np.exp(-np.abs(x))
    return e / ((1.0 + e) * (1.0 + e))


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _softsign(x):
    return x / (1.0 + np.abs(x))


def _d_softsign(x):
    d = 1.0 + np.abs(x)
    return 1.0 / (d * d)


def _d_tanh(x):
    t = np.tanh(x)
    return 1.0 - t * t


def _clamp_unit(x):
    return np.clip(x, -ARCTANH_CLAMP, ARCTANH_CLAMP)


def _gauss(x):
    return _TWO_OVER_SQRT_PI * np.exp(-x * x)


def _d_i1(x):
    # I1'(x) = I0(x) - I1(x)/x, written on the scaled functions so that
    # large |x| overflows to inf instead of inf - inf.
    safe = np.where(x == 0, 1.0, x)
    body = np.exp(np.abs(x)) * (special.i0e(x) - special.i1e(x) / safe)
    return np.where(x == 0, 0.5, body)


def _d_i1e(x):
    safe = np.where(x == 0, 1.0, x)
    i1e = special.i1e(x)
    body = special.i0e(x) - i1e / safe - _sign(x) * i1e
    return np.where(x == 0, 0.5, body)


# (id, value, partial derivative(s)). Binary partials return a pair.
_UNARY: list[tuple[str, Callable, Callable]] = [
    ("neg", lambda x: -x, lambda x: -np.ones_like(x)),
    ("exp", np.exp, np.exp),
    ("sigmoid", _sigmoid, _d_sigmoid),
    ("d_sigmoid", _d_sigmoid, lambda x: _d_sigmoid(x) * (1.0 - 2.0 * _sigmoid(x))),
    ("softsign", _softsign, _d_softsign),
    ("d_softsign", _d_softsign, lambda x: -2.0 * _sign(x) * _d_softsign(x) / (1.0 + np.abs(x))),
    ("softplus", _softplus, _sigmoid),
    ("erf", special.erf, _gauss),
    ("erfc", special.erfc, lambda x: -_gauss(x)),
    ("sin", np.sin, np.cos),
    ("sinh", np.sinh, np.cosh),
    ("arcsinh", np.arcsinh, lambda x: 1.0 / np.sqrt(1.0 + x * x)),
    ("tanh", np.tanh, _d_tanh),
    ("d_tanh", _d_tanh, lambda x: -2.0 * np.tanh(x) * _d_tanh(x)),
    ("arctanh", lambda x: np.arctanh(_clamp_unit(x)),
     lambda x: 1.0 / (1.0 - _clamp_unit(x) ** 2)),
    ("recip_eps", lambda x: 1.0 / (x + EPS), lambda x: -1.0 / ((x + EPS) * (x + EPS))),
    ("abs", np.abs, _sign),
    ("square", lambda x: x * x, lambda x: 2.0 * x),
    ("sqrt", np.sqrt, lambda x: 0.5 / np.sqrt(x)),
    ("ln_abs_eps", lambda x: np.log(np.abs(x) + EPS), lambda x: _sign(x) / (np.abs(x) + EPS)),
    ("log10_abs_eps", lambda x: np.log10(np.abs(x) + EPS),
     lambda x: _sign(x) / ((np.abs(x) + EPS) * _LN10)),
    ("bessel_i0", special.i0, special.i1),
    ("bessel_i1", special.i1, _d_i1),
    ("bessel_i0e", special.i0e, lambda x: special.i1e(x) - _sign(x) * special.i0e(x)),
    ("bessel_i1e", special.i1e, _d_i1e),
    # ties route the gradient to x (the first argument of max/min)
    ("relu", lambda x: np.maximum(x, 0.0), lambda x: (x >= 0).astype(float)),
    ("neg_relu", lambda x: np.minimum(x, 0.0), lambda x: (x <= 0).astype(float)),
]


def _div_sqrt1p_grad(a, b):
    s = 1.0 + b * b
    r = np.sqrt(s)
    return 1.0 / r, -a * b / (s * r)


_BINARY: list[tuple[str, Callable, Callable]] = [
    ("add", lambda a, b: a + b, lambda a, b: (np.ones_like(a), np.ones_like(b))),
    ("sub", lambda a, b: a - b, lambda a, b: (np.ones_like(a), -np.ones_like(b))),
    ("mul", lambda a, b: a * b, lambda a, b: (b, a)),
    ("div_eps", lambda a, b: a / (b + EPS),
     lambda a, b: (1.0 / (b + EPS), -a / ((b + EPS) * (b + EPS)))),
    ("div_sqrt1p", lambda a, b: a / np.sqrt(1.0 + b * b), _div_sqrt1p_grad),
    ("max", np.maximum,
     lambda a, b: ((a >= b).astype(float), (a < b).astype(float))),
    ("min", np.minimum,
     lambda a, b: ((a <= b).astype(float), (a > b).astype(float))),
]

_CATALOG: tuple[OperationKind, ...] = tuple(
    OperationKind(name, 1, i) for i, (name, _, _) in enumerate(_UNARY)
) + tuple(
    OperationKind(name, 2, len(_UNARY) + i) for i, (name, _, _) in enumerate(_BINARY)
)
_VALUE = [v for _, v, _ in _UNARY] + [v for _, v, _ in _BINARY]
_GRAD = [g for _, _, g in _UNARY] + [g for _, _, g in _BINARY]

BY_ID: dict[str, OperationKind] = {k.id: k for k in _CATALOG}
UNARY_IDS: tuple[str, ...] = tuple(k.id for k in _CATALOG if k.arity == 1)
BINARY_IDS: tuple[str, ...] = tuple(k.id for k in _CATALOG if k.arity == 2)


def catalog() -> list[OperationKind]:
    """All 34 operations: the 27 unary ones first, then the 7 binary ones."""
    return list(_CATALOG)


def get(kind: str | OperationKind) -> OperationKind:
    if isinstance(kind, OperationKind):
        return kind
    try:
        return BY_ID[kind]
    except KeyError:
        raise ValueError(f"unknown operation {kind!r}") from None


def apply(index: int, a, b=None):
    """Vectorized value of operation ``index``; ``b`` is ignored for unary ops."""
    with np.errstate(all="ignore"):
        if index < len(_UNARY):
            return _VALUE[index](a)
        return _VALUE[index](a, b)


def partials(index: int, a, b=None):
    """Vectorized partial derivatives as a tuple with one array per argument."""
    with np.errstate(all="ignore"):
        if index < len(_UNARY):
            return (_GRAD[index](a),)
        return _GRAD[index](a, b)


def _check_args(kind: OperationKind, args: Sequence[float]) -> list[np.ndarray]:
    if len(args) != kind.arity:
        raise ValueError(f"{kind.id} takes {kind.arity} argument(s), got {len(args)}")
    return [np.float64(a) for a in args]


def eval_op(kind: str | OperationKind, args: Sequence[float]) -> float:
    kind = get(kind)
    xs = _check_args(kind, args)
    return float(apply(kind.index, *xs))


def grad_op(kind: str | OperationKind, args: Sequence[float]) -> list[float]:
    kind = get(kind)
    xs = _check_args(kind, args)
    return [float(g) for g in partials(kind.index, *xs)]
