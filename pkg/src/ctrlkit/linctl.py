"""Equilibria, linearization, controllability and pole placement."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ctrlkit import autodiff
from ctrlkit.autodiff import VectorFunction, jacobian
from ctrlkit.eigen import eigenvalues
from ctrlkit.errors import ConvergenceError, CtrlkitError
from ctrlkit.errors import ConditioningError

EQ_TOL = 1e-12
EQ_MAX_ITER = 100
EQ_CHECK_TOL = 1e-9
POLE_TOL = 1e-6
PLACE_SEED = 7
PLACE_RETRIES = 10


@dataclass
class Equilibrium:
    x_ss: np.ndarray
    u_ss: np.ndarray
    pinned: dict = field(default_factory=dict)

    @property
    def point(self):
        return np.concatenate([self.x_ss, self.u_ss])


@dataclass
class LinearModel:
    A: np.ndarray
    B: np.ndarray
    equilibrium: Optional[Equilibrium] = None

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]


@dataclass
class FeedbackLaw:
    K: np.ndarray
    equilibrium: Optional[Equilibrium] = None
    poles: Optional[np.ndarray] = None


def find_equilibrium(f: VectorFunction, n_states, pinned=None, guess=None,
                     names=None) -> Equilibrium:
    """Solve f(x,u) = 0 together with user pins by damped-free Newton.

    `f` maps the concatenated [states; inputs] vector to the state
    derivatives.  `pinned` maps coordinate names (when `names` is given)
    or indices to fixed values; the pins become extra residuals, and the
    step is the least-squares solution so over-determined but consistent
    pinning is fine.
    """
    total = f.n
    pins = {}
    for key, val in (pinned or {}).items():
        if isinstance(key, str):
            if names is None or key not in names:
                raise CtrlkitError(f"unknown pinned coordinate {key!r}")
            pins[names.index(key)] = float(val)
        else:
            pins[int(key)] = float(val)
    v = np.zeros(total) if guess is None else np.array(guess, dtype=float)
    for i, val in pins.items():
        v[i] = val

    def residual(w, params):
        r = list(f.fn(w, ()))
        for i, val in pins.items():
            r.append(w[i] - val)
        return r

    g = VectorFunction(total, f.m + len(pins), residual)
    for _ in range(EQ_MAX_ITER):
        r = np.array(g.fn(list(v), ()), dtype=float)
        if np.max(np.abs(r)) <= EQ_TOL:
            break
        jac = jacobian(g, v)
        step, _, rank, _ = np.linalg.lstsq(jac, r, rcond=None)
        if rank < total:
            raise CtrlkitError(
                "under-determined equilibrium problem: add pins")
        v = v - step
    r = np.array(f.fn(list(v), ()), dtype=float)
    if np.max(np.abs(r)) > EQ_CHECK_TOL:
        raise ConvergenceError("equilibrium search did not converge",
                               residual=float(np.max(np.abs(r))))
    return Equilibrium(x_ss=v[:n_states], u_ss=v[n_states:],
                       pinned=dict(pinned or {}))


def linearize(f: VectorFunction, eq: Equilibrium) -> LinearModel:
    """First-order model dDx/dt = A Dx + B Du around the equilibrium."""
    n = len(eq.x_ss)
    jac = jacobian(f, eq.point)
    return LinearModel(A=jac[:, :n], B=jac[:, n:], equilibrium=eq)


def controllability(lm: LinearModel):
    """Controllability matrix [B AB ... A^(n-1)B] and its numerical rank."""
    n = lm.n
    cols = [lm.B]
    for _ in range(n - 1):
        cols.append(lm.A @ cols[-1])
    ctrb = np.hstack(cols)
    sv = np.linalg.svd(ctrb, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return ctrb, 0
    rank = int(np.sum(sv > n * np.finfo(float).eps * sv[0]))
    return ctrb, rank


def _check_poles(poles):
    """Poles must be closed under conjugation; returns a complex array."""
    p = np.array(poles, dtype=complex)
    rest = list(p[np.abs(p.imag) > 0])
    while rest:
        z = rest.pop(0)
        for j, w in enumerate(rest):
            if abs(w - np.conj(z)) <= 1e-12 * max(1.0, abs(z)):
                rest.pop(j)
                break
        else:
            raise CtrlkitError(
                f"poles are not closed under conjugation: {z} unpaired")
    return p


def _spectrum_matches(A, poles, tol=POLE_TOL):
    got = list(eigenvalues(A))
    for p in poles:
        j = int(np.argmin([abs(p - z) for z in got]))
        if abs(p - got.pop(j)) > tol:
            return False
    return True


def _ackermann(A, b, poles):
    n = A.shape[0]
    ctrb = np.hstack([np.linalg.matrix_power(A, k) @ b for k in range(n)])
    phi = np.eye(n, dtype=complex)
    for p in poles:
        phi = phi @ (A - p * np.eye(n))
    en = np.zeros(n)
    en[-1] = 1.0
    k = en @ np.linalg.solve(ctrb, phi.real)
    return k.reshape(1, n)


def _pole_block_diagonal(poles):
    """Real block-diagonal matrix with the requested spectrum."""
    n = len(poles)
    lam = np.zeros((n, n))
    used = [False] * n
    i = 0
    for j, p in enumerate(poles):
        if used[j]:
            continue
        if p.imag == 0:
            lam[i, i] = p.real
            used[j] = True
            i += 1
            continue
        for k in range(j + 1, n):
            if not used[k] and abs(poles[k] - np.conj(p)) <= 1e-12 * max(
                    1.0, abs(p)):
                used[j] = used[k] = True
                break
        lam[i, i] = lam[i + 1, i + 1] = p.real
        lam[i, i + 1] = abs(p.imag)
        lam[i + 1, i] = -abs(p.imag)
        i += 2
    return lam


def pole_place(lm: LinearModel, poles) -> FeedbackLaw:
    """Gain K with eig(A - BK) at the requested poles.

    Single-input systems use Ackermann's formula; multi-input systems use
    the Sylvester-equation method with a seeded random right-hand side,
    retried with a fresh draw if the solvent is singular.
    """
    A, B = lm.A, lm.B
    n = lm.n
    p = _check_poles(poles)
    if len(p) != n:
        raise CtrlkitError(f"need {n} poles, got {len(p)}")
    _, rank = controllability(lm)
    if rank < n:
        raise CtrlkitError(f"uncontrollable pair: rank {rank} < {n}")
    eigs = eigenvalues(A)
    for pole in p:
        if np.min(np.abs(eigs - pole)) <= 1e-9 * max(1.0, abs(pole)):
            raise CtrlkitError(
                f"pole {pole} coincides with an open-loop eigenvalue")
    if lm.m == 1:
        K = _ackermann(A, B, p)
        if not _spectrum_matches(A - B @ K, p):
            raise ConvergenceError("pole placement verification failed")
        return FeedbackLaw(K=K, equilibrium=lm.equilibrium, poles=p)
    lam = _pole_block_diagonal(p)
    rng = np.random.default_rng(PLACE_SEED)
    for _ in range(PLACE_RETRIES):
        G = rng.standard_normal((lm.m, n))
        # A X - X Lam = B G, solved through the Kronecker form
        lhs = np.kron(np.eye(n), A) - np.kron(lam.T, np.eye(n))
        try:
            x = np.linalg.solve(lhs, (B @ G).flatten(order="F"))
        except np.linalg.LinAlgError:
            continue
        X = x.reshape((n, n), order="F")
        if np.linalg.cond(X) > 1e12:
            continue
        K = G @ np.linalg.inv(X)
        if _spectrum_matches(A - B @ K, p):
            return FeedbackLaw(K=K, equilibrium=lm.equilibrium, poles=p)
    raise ConvergenceError(
        f"pole placement failed after {PLACE_RETRIES} attempts")


def feedback_control(law: FeedbackLaw, x):
    """u = u_ss - K (x - x_ss)."""
    eq = law.equilibrium
    x = np.asarray(x, dtype=float)
    if eq is None:
        return -law.K @ x
    return eq.u_ss - law.K @ (x - eq.x_ss)
