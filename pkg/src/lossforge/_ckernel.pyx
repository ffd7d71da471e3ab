# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled evaluation of loss programs (same contract as ``_pykernel``).

Opcodes follow ``lossforge.ops.catalog()`` order.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport (exp, log, log10, log1p, sin, cos, sinh, cosh, asinh,
                        tanh, atanh, sqrt, fabs, isnan, NAN)
from scipy.special.cython_special cimport i0, i1, i0e, i1e, erf, erfc

cnp.import_array()

cdef double EPS = 1e-7
cdef double CLAMP = 1.0 - 1e-7
cdef double LN10 = 2.302585092994045684
cdef double TWO_OVER_SQRT_PI = 1.1283791670955126


cdef inline double _sign(double x) noexcept nogil:
    if x > 0:
        return 1.0
    if x < 0:
        return -1.0
    return x  # keeps 0 and nan


cdef inline double _sigmoid(double x) noexcept nogil:
    cdef double e = exp(-fabs(x))
    if x >= 0:
        return 1.0 / (1.0 + e)
    return e / (1.0 + e)


cdef inline double _d_sigmoid(double x) noexcept nogil:
    cdef double e = exp(-fabs(x))
    return e / ((1.0 + e) * (1.0 + e))


cdef inline double _d_softsign(double x) noexcept nogil:
    cdef double d = 1.0 + fabs(x)
    return 1.0 / (d * d)


cdef inline double _clamp(double x) noexcept nogil:
    if x > CLAMP:
        return CLAMP
    if x < -CLAMP:
        return -CLAMP
    return x


cdef inline double _max(double a, double b) noexcept nogil:
    if isnan(a) or isnan(b):
        return NAN
    return a if a >= b else b


cdef inline double _min(double a, double b) noexcept nogil:
    if isnan(a) or isnan(b):
        return NAN
    return a if a <= b else b


cdef double value(int op, double a, double b) noexcept nogil:
    cdef double t
    if op == 0:
        return -a
    elif op == 1:
        return exp(a)
    elif op == 2:
        return _sigmoid(a)
    elif op == 3:
        return _d_sigmoid(a)
    elif op == 4:
        return a / (1.0 + fabs(a))
    elif op == 5:
        return _d_softsign(a)
    elif op == 6:
        return (a if a > 0 else 0.0) + log1p(exp(-fabs(a)))
    elif op == 7:
        return erf(a)
    elif op == 8:
        return erfc(a)
    elif op == 9:
        return sin(a)
    elif op == 10:
        return sinh(a)
    elif op == 11:
        return asinh(a)
    elif op == 12:
        return tanh(a)
    elif op == 13:
        t = tanh(a)
        return 1.0 - t * t
    elif op == 14:
        return atanh(_clamp(a))
    elif op == 15:
        return 1.0 / (a + EPS)
    elif op == 16:
        return fabs(a)
    elif op == 17:
        return a * a
    elif op == 18:
        return sqrt(a) if a >= 0 else NAN
    elif op == 19:
        return log(fabs(a) + EPS)
    elif op == 20:
        return log10(fabs(a) + EPS)
    elif op == 21:
        return i0(a)
    elif op == 22:
        return i1(a)
    elif op == 23:
        return i0e(a)
    elif op == 24:
        return i1e(a)
    elif op == 25:
        return _max(a, 0.0)
    elif op == 26:
        return _min(a, 0.0)
    elif op == 27:
        return a + b
    elif op == 28:
        return a - b
    elif op == 29:
        return a * b
    elif op == 30:
        return a / (b + EPS)
    elif op == 31:
        return a / sqrt(1.0 + b * b)
    elif op == 32:
        return _max(a, b)
    elif op == 33:
        return _min(a, b)
    return NAN


cdef void partial(int op, double a, double b, double *da, double *db) noexcept nogil:
    cdef double t, s, r
    db[0] = 0.0
    if op == 0:
        da[0] = -1.0
    elif op == 1:
        da[0] = exp(a)
    elif op == 2:
        da[0] = _d_sigmoid(a)
    elif op == 3:
        da[0] = _d_sigmoid(a) * (1.0 - 2.0 * _sigmoid(a))
    elif op == 4:
        da[0] = _d_softsign(a)
    elif op == 5:
        da[0] = -2.0 * _sign(a) * _d_softsign(a) / (1.0 + fabs(a))
    elif op == 6:
        da[0] = _sigmoid(a)
    elif op == 7:
        da[0] = TWO_OVER_SQRT_PI * exp(-a * a)
    elif op == 8:
        da[0] = -TWO_OVER_SQRT_PI * exp(-a * a)
    elif op == 9:
        da[0] = cos(a)
    elif op == 10:
        da[0] = cosh(a)
    elif op == 11:
        da[0] = 1.0 / sqrt(1.0 + a * a)
    elif op == 12:
        t = tanh(a)
        da[0] = 1.0 - t * t
    elif op == 13:
        t = tanh(a)
        da[0] = -2.0 * t * (1.0 - t * t)
    elif op == 14:
        t = _clamp(a)
        da[0] = 1.0 / (1.0 - t * t)
    elif op == 15:
        da[0] = -1.0 / ((a + EPS) * (a + EPS))
    elif op == 16:
        da[0] = _sign(a)
    elif op == 17:
        da[0] = 2.0 * a
    elif op == 18:
        da[0] = 0.5 / sqrt(a) if a >= 0 else NAN
    elif op == 19:
        da[0] = _sign(a) / (fabs(a) + EPS)
    elif op == 20:
        da[0] = _sign(a) / ((fabs(a) + EPS) * LN10)
    elif op == 21:
        da[0] = i1(a)
    elif op == 22:
        da[0] = 0.5 if a == 0 else exp(fabs(a)) * (i0e(a) - i1e(a) / a)
    elif op == 23:
        da[0] = i1e(a) - _sign(a) * i0e(a)
    elif op == 24:
        if a == 0:
            da[0] = 0.5
        else:
            t = i1e(a)
            da[0] = i0e(a) - t / a - _sign(a) * t
    elif op == 25:
        da[0] = 1.0 if a >= 0 else 0.0
    elif op == 26:
        da[0] = 1.0 if a <= 0 else 0.0
    elif op == 27:
        da[0] = 1.0
        db[0] = 1.0
    elif op == 28:
        da[0] = 1.0
        db[0] = -1.0
    elif op == 29:
        da[0] = b
        db[0] = a
    elif op == 30:
        da[0] = 1.0 / (b + EPS)
        db[0] = -a / ((b + EPS) * (b + EPS))
    elif op == 31:
        s = 1.0 + b * b
        r = sqrt(s)
        da[0] = 1.0 / r
        db[0] = -a * b / (s * r)
    elif op == 32:
        da[0] = 1.0 if a >= b else 0.0
        db[0] = 1.0 if a < b else 0.0
    elif op == 33:
        da[0] = 1.0 if a <= b else 0.0
        db[0] = 1.0 if a > b else 0.0
    else:
        da[0] = NAN


cdef double[:, ::1] _sweep(const int[:, ::1] prog, const double[::1] yv, const double[::1] pv):
    # instruction-major: one opcode dispatch per row keeps the branch predictable
    cdef Py_ssize_t n = yv.shape[0], m = prog.shape[0], i, j
    cdef int op, a1, a2
    cdef double[:, ::1] s = np.empty((4 + m, n), dtype=np.float64)
    with nogil:
        for i in range(n):
            s[0, i] = yv[i]
            s[1, i] = pv[i]
            s[2, i] = 1.0
            s[3, i] = -1.0
        for j in range(m):
            op, a1, a2 = prog[j, 0], prog[j, 1], prog[j, 2]
            if a2 >= 0:
                for i in range(n):
                    s[4 + j, i] = value(op, s[a1, i], s[a2, i])
            else:
                for i in range(n):
                    s[4 + j, i] = value(op, s[a1, i], 0.0)
    return s


def _as_program(program):
    prog = np.ascontiguousarray(program, dtype=np.intc)
    if prog.ndim != 2 or prog.shape[1] != 3 or prog.shape[0] == 0:
        raise ValueError("program must be a non-empty (m, 3) array")
    return prog


def _flat(x):
    return np.ascontiguousarray(x, dtype=np.float64).ravel()


def forward(program, y, yhat):
    cdef const int[:, ::1] prog = _as_program(program)
    s = _sweep(prog, _flat(y), _flat(yhat))
    return np.array(s[prog.shape[0] + 3]).reshape(np.shape(y))


def forward_grad(program, y, yhat):
    cdef const int[:, ::1] prog = _as_program(program)
    cdef double[:, ::1] s = _sweep(prog, _flat(y), _flat(yhat))
    cdef Py_ssize_t n = s.shape[1], m = prog.shape[0], i, j
    cdef double[:, ::1] adj = np.zeros((4 + m, n), dtype=np.float64)
    cdef double up, da, db
    cdef int op, a1, a2
    with nogil:
        for i in range(n):
            adj[3 + m, i] = 1.0
        for j in range(m - 1, -1, -1):
            op, a1, a2 = prog[j, 0], prog[j, 1], prog[j, 2]
            for i in range(n):
                up = adj[4 + j, i]
                if up == 0.0:
                    continue  # nothing flows back; also avoids 0 * inf
                if a2 >= 0:
                    partial(op, s[a1, i], s[a2, i], &da, &db)
                    adj[a1, i] += up * da
                    adj[a2, i] += up * db
                else:
                    partial(op, s[a1, i], 0.0, &da, &db)
                    adj[a1, i] += up * da
    shape = np.shape(y)
    return np.array(s[3 + m]).reshape(shape), np.array(adj[1]).reshape(shape)
