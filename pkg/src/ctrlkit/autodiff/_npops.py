"""Pure-numpy kernels for dual-number arithmetic.

Every kernel takes (value, partials) pairs and returns a new pair.
``value`` is either a python float (scalar dual) or a 1-D float64 array
(batched dual); ``partials`` has shape (K,) respectively (B, K).  The
compiled extension ``_fastops`` implements the same interface; this module
is the fallback and the reference semantics.

Scalar values go through the ``math`` module so that a zero-seeded dual
evaluation is bit-identical to plain-float evaluation of the same
expression.
"""

import math

import numpy as np


def _ex(v):
    # expand value for broadcasting against a (B, K) partials array
    if isinstance(v, np.ndarray) and v.ndim:
        return v[..., None]
    return v


def _val1(fm, fn, x):
    # scalar values use math.*, arrays use np.*
    if isinstance(x, np.ndarray):
        return fn(x)
    return fm(x)


def add(va, pa, vb, pb):
    return va + vb, pa + pb


def sub(va, pa, vb, pb):
    return va - vb, pa - pb


def add_c(va, pa, c):
    return va + c, pa


def rsub_c(va, pa, c):
    return c - va, -pa


def sub_c(va, pa, c):
    return va - c, pa


def neg(va, pa):
    return -va, -pa


def mul(va, pa, vb, pb):
    return va * vb, _ex(va) * pb + _ex(vb) * pa


def mul_c(va, pa, c):
    return va * c, _ex(c) * pa


def div(va, pa, vb, pb):
    v = va / vb
    return v, (pa - _ex(v) * pb) / _ex(vb)


def div_c(va, pa, c):
    return va / c, pa / _ex(c)


def rdiv_c(va, pa, c):
    v = c / va
    return v, (-_ex(v) / _ex(va)) * pa


def pow_c(va, pa, e):
    if e == 2.0:
        return va * va, _ex(2.0 * va) * pa
    v = va**e
    return v, _ex(e * va ** (e - 1.0)) * pa


def sin(va, pa):
    return _val1(math.sin, np.sin, va), _ex(_val1(math.cos, np.cos, va)) * pa


def cos(va, pa):
    return _val1(math.cos, np.cos, va), -_ex(_val1(math.sin, np.sin, va)) * pa


def tan(va, pa):
    v = _val1(math.tan, np.tan, va)
    return v, _ex(1.0 + v * v) * pa


def exp(va, pa):
    v = _val1(math.exp, np.exp, va)
    return v, _ex(v) * pa


def log(va, pa):
    return _val1(math.log, np.log, va), pa / _ex(va)


def sqrt(va, pa):
    v = _val1(math.sqrt, np.sqrt, va)
    return v, pa / _ex(2.0 * v)


def tanh(va, pa):
    v = _val1(math.tanh, np.tanh, va)
    return v, _ex(1.0 - v * v) * pa


def absval(va, pa):
    # derivative at 0 is defined as 0
    return abs(va), _ex(np.sign(va)) * pa
