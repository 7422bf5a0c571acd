# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for dual-number arithmetic.

Same interface as ``_npops``; fast paths cover the layouts produced by the
Dual class (scalar duals with (K,) partials, batched duals with (B, K)
partials, and batch-times-scalar-dual mixes).  Anything else falls back to
the numpy implementation so the two backends are always interchangeable.
"""

from libc cimport math as cm

import numpy as np

cimport numpy as cnp

from . import _npops

cnp.import_array()

DEF OP_NEG = 0
DEF OP_SIN = 1
DEF OP_COS = 2
DEF OP_TAN = 3
DEF OP_EXP = 4
DEF OP_LOG = 5
DEF OP_SQRT = 6
DEF OP_TANH = 7
DEF OP_ABS = 8


cdef inline bint _arr1(object a):
    return type(a) is np.ndarray and (<cnp.ndarray> a).ndim == 1 \
        and cnp.PyArray_TYPE(<cnp.ndarray> a) == cnp.NPY_FLOAT64 \
        and cnp.PyArray_IS_C_CONTIGUOUS(<cnp.ndarray> a)


cdef inline bint _arr2(object a):
    return type(a) is np.ndarray and (<cnp.ndarray> a).ndim == 2 \
        and cnp.PyArray_TYPE(<cnp.ndarray> a) == cnp.NPY_FLOAT64 \
        and cnp.PyArray_IS_C_CONTIGUOUS(<cnp.ndarray> a)


cdef inline bint _isfloat(object v):
    return type(v) is float


cdef inline double _uval(int op, double x) noexcept nogil:
    if op == OP_NEG:
        return -x
    elif op == OP_SIN:
        return cm.sin(x)
    elif op == OP_COS:
        return cm.cos(x)
    elif op == OP_TAN:
        return cm.tan(x)
    elif op == OP_EXP:
        return cm.exp(x)
    elif op == OP_LOG:
        return cm.log(x)
    elif op == OP_SQRT:
        return cm.sqrt(x)
    elif op == OP_TANH:
        return cm.tanh(x)
    else:
        return cm.fabs(x)


cdef inline double _uder(int op, double x, double fx) noexcept nogil:
    if op == OP_NEG:
        return -1.0
    elif op == OP_SIN:
        return cm.cos(x)
    elif op == OP_COS:
        return -cm.sin(x)
    elif op == OP_TAN:
        return 1.0 + fx * fx
    elif op == OP_EXP:
        return fx
    elif op == OP_LOG:
        return 1.0 / x
    elif op == OP_SQRT:
        return 0.5 / fx
    elif op == OP_TANH:
        return 1.0 - fx * fx
    else:
        return 0.0 if x == 0.0 else (1.0 if x > 0.0 else -1.0)


cdef _unary(int op, object va, object pa, object npfallback):
    cdef double x, fx, d
    cdef double[::1] p1, o1
    cdef double[:, ::1] p2, o2
    cdef double[::1] v1, w1
    cdef Py_ssize_t i, j, B, K
    if _isfloat(va) and _arr1(pa):
        x = <double> va
        # match math-module domain semantics on the scalar path
        if op == OP_LOG and x <= 0.0:
            raise ValueError("math domain error")
        if op == OP_SQRT and x < 0.0:
            raise ValueError("math domain error")
        fx = _uval(op, x)
        d = _uder(op, x, fx)
        p1 = pa
        K = p1.shape[0]
        out = np.empty(K, dtype=np.float64)
        o1 = out
        for i in range(K):
            o1[i] = d * p1[i]
        return fx, out
    if _arr1(va) and _arr2(pa):
        v1 = va
        p2 = pa
        B = p2.shape[0]
        K = p2.shape[1]
        if v1.shape[0] == B:
            vout = np.empty(B, dtype=np.float64)
            pout = np.empty((B, K), dtype=np.float64)
            w1 = vout
            o2 = pout
            with nogil:
                for i in range(B):
                    fx = _uval(op, v1[i])
                    d = _uder(op, v1[i], fx)
                    w1[i] = fx
                    for j in range(K):
                        o2[i, j] = d * p2[i, j]
            return vout, pout
    return npfallback(va, pa)


def neg(va, pa):
    return _unary(OP_NEG, va, pa, _npops.neg)


def sin(va, pa):
    return _unary(OP_SIN, va, pa, _npops.sin)


def cos(va, pa):
    return _unary(OP_COS, va, pa, _npops.cos)


def tan(va, pa):
    return _unary(OP_TAN, va, pa, _npops.tan)


def exp(va, pa):
    return _unary(OP_EXP, va, pa, _npops.exp)


def log(va, pa):
    return _unary(OP_LOG, va, pa, _npops.log)


def sqrt(va, pa):
    return _unary(OP_SQRT, va, pa, _npops.sqrt)


def tanh(va, pa):
    return _unary(OP_TANH, va, pa, _npops.tanh)


def absval(va, pa):
    return _unary(OP_ABS, va, pa, _npops.absval)


DEF B_ADD = 0
DEF B_SUB = 1
DEF B_MUL = 2
DEF B_DIV = 3


cdef inline double _bval(int op, double a, double b) noexcept nogil:
    if op == B_ADD:
        return a + b
    elif op == B_SUB:
        return a - b
    elif op == B_MUL:
        return a * b
    else:
        return a / b


cdef _binary(int op, object va, object pa, object vb, object pb,
             object npfallback):
    cdef double xa, xb, v
    cdef double[::1] p1a, p1b, o1, v1a, v1b, w1
    cdef double[:, ::1] p2a, p2b, o2
    cdef Py_ssize_t i, j, B, K
    if _isfloat(va) and _isfloat(vb) and _arr1(pa) and _arr1(pb):
        xa = <double> va
        xb = <double> vb
        p1a = pa
        p1b = pb
        K = p1a.shape[0]
        if p1b.shape[0] == K:
            if op == B_DIV and xb == 0.0:
                raise ZeroDivisionError("float division by zero")
            v = _bval(op, xa, xb)
            out = np.empty(K, dtype=np.float64)
            o1 = out
            if op == B_ADD:
                for i in range(K):
                    o1[i] = p1a[i] + p1b[i]
            elif op == B_SUB:
                for i in range(K):
                    o1[i] = p1a[i] - p1b[i]
            elif op == B_MUL:
                for i in range(K):
                    o1[i] = xa * p1b[i] + xb * p1a[i]
            else:
                for i in range(K):
                    o1[i] = (p1a[i] - v * p1b[i]) / xb
            return v, out
    elif _arr1(va) and _arr2(pa):
        v1a = va
        p2a = pa
        B = p2a.shape[0]
        K = p2a.shape[1]
        if v1a.shape[0] != B:
            return npfallback(va, pa, vb, pb)
        if _arr1(vb) and _arr2(pb):
            # batch (x) batch
            v1b = vb
            p2b = pb
            if v1b.shape[0] != B or p2b.shape[0] != B or p2b.shape[1] != K:
                return npfallback(va, pa, vb, pb)
            vout = np.empty(B, dtype=np.float64)
            pout = np.empty((B, K), dtype=np.float64)
            w1 = vout
            o2 = pout
            with nogil:
                for i in range(B):
                    v = _bval(op, v1a[i], v1b[i])
                    w1[i] = v
                    if op == B_ADD:
                        for j in range(K):
                            o2[i, j] = p2a[i, j] + p2b[i, j]
                    elif op == B_SUB:
                        for j in range(K):
                            o2[i, j] = p2a[i, j] - p2b[i, j]
                    elif op == B_MUL:
                        for j in range(K):
                            o2[i, j] = v1a[i] * p2b[i, j] + v1b[i] * p2a[i, j]
                    else:
                        for j in range(K):
                            o2[i, j] = (p2a[i, j] - v * p2b[i, j]) / v1b[i]
            return vout, pout
        if _isfloat(vb) and _arr1(pb):
            # batch (x) scalar dual
            xb = <double> vb
            p1b = pb
            if p1b.shape[0] != K:
                return npfallback(va, pa, vb, pb)
            vout = np.empty(B, dtype=np.float64)
            pout = np.empty((B, K), dtype=np.float64)
            w1 = vout
            o2 = pout
            with nogil:
                for i in range(B):
                    v = _bval(op, v1a[i], xb)
                    w1[i] = v
                    if op == B_ADD:
                        for j in range(K):
                            o2[i, j] = p2a[i, j] + p1b[j]
                    elif op == B_SUB:
                        for j in range(K):
                            o2[i, j] = p2a[i, j] - p1b[j]
                    elif op == B_MUL:
                        for j in range(K):
                            o2[i, j] = v1a[i] * p1b[j] + xb * p2a[i, j]
                    else:
                        for j in range(K):
                            o2[i, j] = (p2a[i, j] - v * p1b[j]) / xb
            return vout, pout
    return npfallback(va, pa, vb, pb)


def add(va, pa, vb, pb):
    return _binary(B_ADD, va, pa, vb, pb, _npops.add)


def sub(va, pa, vb, pb):
    return _binary(B_SUB, va, pa, vb, pb, _npops.sub)


def mul(va, pa, vb, pb):
    return _binary(B_MUL, va, pa, vb, pb, _npops.mul)


def div(va, pa, vb, pb):
    return _binary(B_DIV, va, pa, vb, pb, _npops.div)


def add_c(va, pa, c):
    cdef double[::1] v1, w1
    cdef Py_ssize_t i, B
    cdef double xc
    if _isfloat(va) or not _isfloat(c):
        return _npops.add_c(va, pa, c)
    if _arr1(va):
        v1 = va
        xc = <double> c
        B = v1.shape[0]
        vout = np.empty(B, dtype=np.float64)
        w1 = vout
        for i in range(B):
            w1[i] = v1[i] + xc
        return vout, pa
    return _npops.add_c(va, pa, c)


def sub_c(va, pa, c):
    return _npops.sub_c(va, pa, c)


def rsub_c(va, pa, c):
    return _npops.rsub_c(va, pa, c)


def mul_c(va, pa, c):
    cdef double xa, xc
    cdef double[::1] p1, o1, v1, w1
    cdef double[:, ::1] p2, o2
    cdef Py_ssize_t i, j, B, K
    if not _isfloat(c):
        return _npops.mul_c(va, pa, c)
    xc = <double> c
    if _isfloat(va) and _arr1(pa):
        p1 = pa
        K = p1.shape[0]
        out = np.empty(K, dtype=np.float64)
        o1 = out
        for i in range(K):
            o1[i] = xc * p1[i]
        return (<double> va) * xc, out
    if _arr1(va) and _arr2(pa):
        v1 = va
        p2 = pa
        B = p2.shape[0]
        K = p2.shape[1]
        if v1.shape[0] == B:
            vout = np.empty(B, dtype=np.float64)
            pout = np.empty((B, K), dtype=np.float64)
            w1 = vout
            o2 = pout
            with nogil:
                for i in range(B):
                    w1[i] = v1[i] * xc
                    for j in range(K):
                        o2[i, j] = xc * p2[i, j]
            return vout, pout
    return _npops.mul_c(va, pa, c)


def div_c(va, pa, c):
    if _isfloat(c):
        if c == 0.0:
            raise ZeroDivisionError("float division by zero")
        return mul_c(va, pa, 1.0 / c)
    return _npops.div_c(va, pa, c)


def rdiv_c(va, pa, c):
    return _npops.rdiv_c(va, pa, c)


def pow_c(va, pa, e):
    cdef double xa, xe, v, d
    cdef double[::1] p1, o1, v1, w1
    cdef double[:, ::1] p2, o2
    cdef Py_ssize_t i, j, B, K
    xe = <double> e
    if _isfloat(va) and _arr1(pa):
        xa = <double> va
        v = xa * xa if xe == 2.0 else cm.pow(xa, xe)
        d = 2.0 * xa if xe == 2.0 else xe * cm.pow(xa, xe - 1.0)
        p1 = pa
        K = p1.shape[0]
        out = np.empty(K, dtype=np.float64)
        o1 = out
        for i in range(K):
            o1[i] = d * p1[i]
        return v, out
    if _arr1(va) and _arr2(pa):
        v1 = va
        p2 = pa
        B = p2.shape[0]
        K = p2.shape[1]
        if v1.shape[0] == B:
            vout = np.empty(B, dtype=np.float64)
            pout = np.empty((B, K), dtype=np.float64)
            w1 = vout
            o2 = pout
            with nogil:
                for i in range(B):
                    if xe == 2.0:
                        w1[i] = v1[i] * v1[i]
                        d = 2.0 * v1[i]
                    else:
                        w1[i] = cm.pow(v1[i], xe)
                        d = xe * cm.pow(v1[i], xe - 1.0)
                    for j in range(K):
                        o2[i, j] = d * p2[i, j]
            return vout, pout
    return _npops.pow_c(va, pa, e)
