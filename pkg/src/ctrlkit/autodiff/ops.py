"""Jacobian/gradient operations over user-supplied vector functions."""

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import DimensionError, NonFiniteError
from .dual import Dual, value_of


@dataclass(frozen=True)
class VectorFunction:
    """A function R^n x R^p -> R^m, generic over the scalar type.

    ``fn(x, params)`` receives a sequence of scalars (plain floats or
    Duals) and must return a sequence of m scalars built from arithmetic
    and the elementary functions in :mod:`ctrlkit.autodiff`.
    """

    n: int
    m: int
    fn: Callable
    p: int = 0
    name: str = ""

    def __call__(self, x, params=()):
        return self.fn(x, params)


def _check_input(f, x):
    if len(x) != f.n:
        raise DimensionError(
            f"expected input of dimension {f.n}, got {len(x)}"
        )


def eval_values(f: VectorFunction, x, params=()):
    """Plain-real evaluation of f at x."""
    _check_input(f, x)
    out = f.fn([float(v) for v in x], params)
    return np.array([value_of(v) for v in out], dtype=float)


def jacobian(f: VectorFunction, x, params=()) -> np.ndarray:
    """m x n Jacobian of f at x, by one forward pass with identity seeds."""
    _check_input(f, x)
    n = f.n
    eye = np.eye(n)
    duals = [Dual(float(x[j]), eye[j]) for j in range(n)]
    out = f.fn(duals, params)
    if len(out) != f.m:
        raise DimensionError(
            f"expected output of dimension {f.m}, got {len(out)}"
        )
    jac = np.zeros((f.m, n))
    for i, yi in enumerate(out):
        v = value_of(yi)
        if not math.isfinite(v):
            raise NonFiniteError(
                f"non-finite value in output component {i}", index=i
            )
        if isinstance(yi, Dual):
            if not np.all(np.isfinite(yi.partials)):
                raise NonFiniteError(
                    f"non-finite derivative in output component {i}", index=i
                )
            jac[i] = yi.partials
    return jac


def gradient(g: VectorFunction, x, params=()) -> np.ndarray:
    """Gradient of a scalar-valued function (output dimension 1)."""
    if g.m != 1:
        raise DimensionError(f"gradient needs a scalar function, m={g.m}")
    return jacobian(g, x, params)[0]


def batch_jacobian(f: VectorFunction, points, params=()):
    """Jacobian at every point; identical to mapping `jacobian`."""
    return [jacobian(f, x, params) for x in points]


def check_fd(f: VectorFunction, x, params=(), h: float = 1e-6) -> float:
    """Max abs deviation between the AD Jacobian and central differences."""
    if h <= 0:
        raise DimensionError("finite-difference step must be positive")
    jac = jacobian(f, x, params)
    x = np.asarray(x, dtype=float)
    fd = np.zeros_like(jac)
    for j in range(f.n):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        fd[:, j] = (eval_values(f, xp, params) - eval_values(f, xm, params)) / (2 * h)
    return float(np.max(np.abs(jac - fd))) if jac.size else 0.0
