"""Dense eigenvalues via Hessenberg reduction and shifted QR iteration.

Self-contained solver for the small matrices that arise in control design
(n of order 10).  Complex conjugate pairs are supported; the iteration runs
in complex arithmetic with Wilkinson shifts, which converges for real input
with complex spectra without the bookkeeping of the double-shift variant.
"""

import numpy as np

from ctrlkit.errors import ConvergenceError

_MAX_SWEEPS_PER_EIG = 100


def hessenberg(a):
    """Upper Hessenberg form of `a` by Householder similarity transforms."""
    h = np.array(a, dtype=float)
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1:, k]
        norm = np.linalg.norm(x)
        if norm == 0.0:
            continue
        v = x.copy()
        v[0] += np.copysign(norm, x[0] if x[0] != 0 else 1.0)
        v /= np.linalg.norm(v)
        # H <- P H P with P = I - 2 v v^T on the trailing rows/cols
        h[k + 1:, k:] -= 2.0 * np.outer(v, v @ h[k + 1:, k:])
        h[:, k + 1:] -= 2.0 * np.outer(h[:, k + 1:] @ v, v)
    return h


def _wilkinson_shift(h, m):
    a = h[m - 1, m - 1]
    b = h[m - 1, m]
    c = h[m, m - 1]
    d = h[m, m]
    tr = a + d
    det = a * d - b * c
    disc = np.sqrt(tr * tr / 4.0 - det + 0j)
    r1 = tr / 2.0 + disc
    r2 = tr / 2.0 - disc
    return r1 if abs(r1 - d) < abs(r2 - d) else r2


def eigenvalues(a, tol=1e-12):
    """All eigenvalues of a real square matrix, as a complex array sorted
    by (real part, imaginary part)."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if n == 0:
        return np.array([], dtype=complex)
    if n == 1:
        return np.array([a[0, 0]], dtype=complex)
    h = hessenberg(a).astype(complex)
    scale = max(np.max(np.abs(h)), 1.0)
    eigs = []
    m = n - 1
    sweeps = 0
    budget = _MAX_SWEEPS_PER_EIG * n
    while m > 0:
        if abs(h[m, m - 1]) <= tol * scale:
            eigs.append(h[m, m])
            m -= 1
            continue
        if sweeps >= budget:
            raise ConvergenceError("qr iteration did not converge",
                                   residual=float(abs(h[m, m - 1])))
        mu = _wilkinson_shift(h, m)
        q, r = np.linalg.qr(h[: m + 1, : m + 1] - mu * np.eye(m + 1))
        h[: m + 1, : m + 1] = r @ q + mu * np.eye(m + 1)
        sweeps += 1
    eigs.append(h[0, 0])
    out = np.array(eigs, dtype=complex)
    # snap tiny imaginary parts from real eigenvalues of real matrices
    out.imag[np.abs(out.imag) <= tol * scale * 10] = 0.0
    return np.array(sorted(out, key=lambda z: (z.real, z.imag)))
