"""Fixed-step simulation of open- and closed-loop systems."""

from dataclasses import dataclass, field

import numpy as np

from ctrlkit.autodiff import VectorFunction
from ctrlkit.errors import NonFiniteError
from ctrlkit.linctl import FeedbackLaw, LinearModel, feedback_control

DEFAULT_DT = 0.01


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (steps, n)
    inputs: np.ndarray  # (steps, m)
    state_labels: list = field(default_factory=list)
    input_labels: list = field(default_factory=list)
    error: str = ""  # non-empty if the rollout aborted early

    def __len__(self):
        return self.times.size

    def final_state(self):
        return self.states[-1]

    def write_csv(self, path):
        labels = (["t"] + list(self.state_labels)
                  + list(self.input_labels))
        with open(path, "w") as fh:
            fh.write(",".join(labels) + "\n")
            for i in range(len(self)):
                row = [self.times[i], *self.states[i], *self.inputs[i]]
                fh.write(",".join("%.17g" % v for v in row) + "\n")


def _eval(f, x, u):
    v = list(np.concatenate([np.asarray(x, float), np.asarray(u, float)]))
    return np.array(f.fn(v, ()), dtype=float)


def rk4_step(f: VectorFunction, x, u, dt):
    """Classical fourth-order step with the input held constant."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = _eval(f, x, u)
    k2 = _eval(f, x + dt / 2 * k1, u)
    k3 = _eval(f, x + dt / 2 * k2, u)
    k4 = _eval(f, x + dt * k3, u)
    out = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("non-finite state after integration step",
                             index=int(np.argmax(~np.isfinite(out))))
    return out


def simulate(f: VectorFunction, controller, x0, T, dt=DEFAULT_DT,
             state_labels=None, input_labels=None) -> Trajectory:
    """Closed-loop rollout with the controller sampled once per step
    (zero-order hold).  `controller` maps the state to the input vector;
    pass None for an autonomous system."""
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    steps = int(round(T / dt))
    x = np.asarray(x0, dtype=float)
    times = [0.0]
    states = [x.copy()]
    u = np.asarray(controller(x) if controller else [], dtype=float).ravel()
    inputs = [u.copy()]
    error = ""
    for k in range(steps):
        try:
            x = rk4_step(f, x, u, dt)
        except NonFiniteError as e:
            error = str(e)
            break
        times.append((k + 1) * dt)
        states.append(x.copy())
        u = np.asarray(controller(x) if controller else [],
                       dtype=float).ravel()
        inputs.append(u.copy())
    return Trajectory(
        times=np.array(times),
        states=np.array(states),
        inputs=np.array(inputs).reshape(len(times), u.size),
        state_labels=list(state_labels or []),
        input_labels=list(input_labels or []),
        error=error,
    )


def simulate_linear(lm: LinearModel, law, x0, T, dt=DEFAULT_DT,
                    state_labels=None, input_labels=None) -> Trajectory:
    """Closed-loop rollout of the linearized model in deviation
    coordinates, reported in absolute coordinates."""
    eq = lm.equilibrium
    x_ss = eq.x_ss if eq is not None else np.zeros(lm.n)
    u_ss = eq.u_ss if eq is not None else np.zeros(lm.m)

    def f(v, params):
        dx = np.asarray(v[:lm.n], dtype=float) - x_ss
        du = np.asarray(v[lm.n:], dtype=float) - u_ss
        return list(lm.A @ dx + lm.B @ du)

    field_fn = VectorFunction(lm.n + lm.m, lm.n, f)
    if law is None:
        law = FeedbackLaw(K=np.zeros((lm.m, lm.n)), equilibrium=eq)
    return simulate(field_fn, lambda x: feedback_control(law, x), x0, T, dt,
                    state_labels=state_labels, input_labels=input_labels)
