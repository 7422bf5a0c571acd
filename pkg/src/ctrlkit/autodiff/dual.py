"""Forward-mode dual numbers.

A ``Dual`` carries a value and a vector of partial derivatives, one entry
per active seed direction.  The value may also be a 1-D array, in which
case the dual represents a whole batch of points at once (partials then
have shape ``(batch, seeds)``); this is what the batched network evaluation
in the MPC module uses.  Arithmetic is delegated to the kernel backend.
"""

import math

import numpy as np

from ..errors import DimensionError
from ._kernels import impl as K


def _norm_value(v):
    if isinstance(v, np.ndarray):
        return np.ascontiguousarray(v, dtype=np.float64)
    return float(v)


class Dual:
    __slots__ = ("value", "partials")

    def __init__(self, value, partials):
        self.value = _norm_value(value)
        p = np.ascontiguousarray(partials, dtype=np.float64)
        self.partials = p

    @property
    def nseeds(self):
        return self.partials.shape[-1]

    @staticmethod
    def constant(value, nseeds):
        v = _norm_value(value)
        if isinstance(v, np.ndarray):
            return Dual(v, np.zeros((v.shape[0], nseeds)))
        return Dual(v, np.zeros(nseeds))

    @staticmethod
    def _raw(value, partials):
        d = Dual.__new__(Dual)
        d.value = value
        d.partials = partials
        return d

    def _check(self, other):
        if self.partials.shape[-1] != other.partials.shape[-1]:
            raise DimensionError(
                "mixing duals with %d and %d seed directions"
                % (self.partials.shape[-1], other.partials.shape[-1])
            )

    # -- arithmetic ---------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual):
            self._check(other)
            return Dual._raw(*K.add(self.value, self.partials,
                                    other.value, other.partials))
        return Dual._raw(*K.add_c(self.value, self.partials, _c(other)))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            self._check(other)
            return Dual._raw(*K.sub(self.value, self.partials,
                                    other.value, other.partials))
        return Dual._raw(*K.sub_c(self.value, self.partials, _c(other)))

    def __rsub__(self, other):
        return Dual._raw(*K.rsub_c(self.value, self.partials, _c(other)))

    def __mul__(self, other):
        if isinstance(other, Dual):
            self._check(other)
            return Dual._raw(*K.mul(self.value, self.partials,
                                    other.value, other.partials))
        return Dual._raw(*K.mul_c(self.value, self.partials, _c(other)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            self._check(other)
            return Dual._raw(*K.div(self.value, self.partials,
                                    other.value, other.partials))
        return Dual._raw(*K.div_c(self.value, self.partials, _c(other)))

    def __rtruediv__(self, other):
        return Dual._raw(*K.rdiv_c(self.value, self.partials, _c(other)))

    def __neg__(self):
        return Dual._raw(*K.neg(self.value, self.partials))

    def __pos__(self):
        return self

    def __pow__(self, e):
        if isinstance(e, Dual):
            return (e * self.log()).exp()
        return Dual._raw(*K.pow_c(self.value, self.partials, float(e)))

    def __rpow__(self, base):
        return (self * math.log(base)).exp()

    def __abs__(self):
        return Dual._raw(*K.absval(self.value, self.partials))

    # -- elementary functions ------------------------------------------

    def sin(self):
        return Dual._raw(*K.sin(self.value, self.partials))

    def cos(self):
        return Dual._raw(*K.cos(self.value, self.partials))

    def tan(self):
        return Dual._raw(*K.tan(self.value, self.partials))

    def exp(self):
        return Dual._raw(*K.exp(self.value, self.partials))

    def log(self):
        return Dual._raw(*K.log(self.value, self.partials))

    def sqrt(self):
        return Dual._raw(*K.sqrt(self.value, self.partials))

    def tanh(self):
        return Dual._raw(*K.tanh(self.value, self.partials))

    # -- comparisons operate on values only -----------------------------

    def __lt__(self, other):
        return self.value < _cmpv(other)

    def __le__(self, other):
        return self.value <= _cmpv(other)

    def __gt__(self, other):
        return self.value > _cmpv(other)

    def __ge__(self, other):
        return self.value >= _cmpv(other)

    def __float__(self):
        if isinstance(self.value, np.ndarray):
            raise TypeError("batched dual has no single float value")
        return self.value

    def __repr__(self):
        return f"Dual({self.value!r}, {self.partials!r})"


def _c(other):
    if isinstance(other, np.ndarray):
        return np.ascontiguousarray(other, dtype=np.float64)
    return float(other)


def _cmpv(other):
    return other.value if isinstance(other, Dual) else other


def value_of(x):
    """Value of a scalar that may or may not be a dual."""
    return x.value if isinstance(x, Dual) else float(x)


def partials_of(x, nseeds):
    if isinstance(x, Dual):
        return x.partials
    return np.zeros(nseeds)


def seed_vector(x):
    """Duals for the entries of x, seeded with the identity matrix."""
    n = len(x)
    eye = np.eye(n)
    return [Dual(float(x[j]), eye[j]) for j in range(n)]


# generic elementary functions usable on floats, arrays and duals


def _generic(name, mathfn, npfn):
    def fn(x):
        if isinstance(x, Dual):
            return getattr(x, name)()
        if isinstance(x, np.ndarray):
            return npfn(x)
        return mathfn(x)

    fn.__name__ = name
    return fn


sin = _generic("sin", math.sin, np.sin)
cos = _generic("cos", math.cos, np.cos)
tan = _generic("tan", math.tan, np.tan)
exp = _generic("exp", math.exp, np.exp)
log = _generic("log", math.log, np.log)
sqrt = _generic("sqrt", math.sqrt, np.sqrt)
tanh = _generic("tanh", math.tanh, np.tanh)
