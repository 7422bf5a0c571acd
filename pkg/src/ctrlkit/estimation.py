"""Extended Kalman filtering with AD-supplied Jacobians."""

from dataclasses import dataclass

import numpy as np

from ctrlkit.autodiff import VectorFunction, jacobian
from ctrlkit.errors import ConditioningError, NonFiniteError


@dataclass
class EkfState:
    x_hat: np.ndarray
    P: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.x_hat = np.asarray(self.x_hat, dtype=float)
        self.P = np.asarray(self.P, dtype=float)


def _symmetrize(P):
    return (P + P.T) / 2.0


def _field_at(f: VectorFunction, x, u):
    v = list(np.concatenate([np.asarray(x, float), np.asarray(u, float)]))
    return np.array(f.fn(v, ()), dtype=float)


def ekf_predict(s: EkfState, f: VectorFunction, u, Q, dt) -> EkfState:
    """Propagate mean by an RK4 step of f and covariance by the
    first-order transition Phi = I + A dt, with A the AD Jacobian of f
    at the pre-step estimate."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = s.x_hat
    u = np.asarray(u, dtype=float)
    n = x.size
    A = jacobian(f, np.concatenate([x, u]))[:, :n]
    k1 = _field_at(f, x, u)
    k2 = _field_at(f, x + dt / 2 * k1, u)
    k3 = _field_at(f, x + dt / 2 * k2, u)
    k4 = _field_at(f, x + dt * k3, u)
    x_new = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(x_new)):
        bad = int(np.argmax(~np.isfinite(x_new)))
        raise NonFiniteError("non-finite predicted state", index=bad)
    phi = np.eye(n) + np.asarray(A) * dt
    P_new = _symmetrize(phi @ s.P @ phi.T + np.asarray(Q, float) * dt)
    return EkfState(x_hat=x_new, P=P_new, t=s.t + dt)


def ekf_update(s: EkfState, h: VectorFunction, z, R) -> EkfState:
    """Measurement update with H from AD; Joseph-form covariance."""
    x = s.x_hat
    z = np.asarray(z, dtype=float)
    R = np.asarray(R, dtype=float)
    H = jacobian(h, x)
    y = z - np.array(h.fn(list(x), ()), dtype=float)
    S = H @ s.P @ H.T + R
    try:
        L = np.linalg.cholesky(_symmetrize(S))
    except np.linalg.LinAlgError:
        raise ConditioningError(
            "innovation covariance is not positive definite") from None
    # K = P H^T S^-1 through the Cholesky factor
    K = np.linalg.solve(L.T, np.linalg.solve(L, H @ s.P)).T
    x_new = x + K @ y
    n = x.size
    IKH = np.eye(n) - K @ H
    P_new = _symmetrize(IKH @ s.P @ IKH.T + K @ R @ K.T)
    return EkfState(x_hat=x_new, P=P_new, t=s.t)
