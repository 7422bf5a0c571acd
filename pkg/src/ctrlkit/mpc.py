"""Trajectory optimization with neural-network parameterization.

State and input trajectories over the whole horizon are represented by
small one-hidden-layer tanh networks of time.  Dynamics enter as one
aggregated mean-squared equality constraint over the time grid, boundary
conditions as equalities, and input bounds as linear inequalities; the
resulting program (minimum-norm weights subject to those constraints) is
solved by SQP with an identity Hessian and an l1 merit line search.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ctrlkit.autodiff import Dual, VectorFunction
from ctrlkit.errors import CtrlkitError, NonFiniteError
from ctrlkit.sim import Trajectory


@dataclass(frozen=True)
class Mlp:
    """1 -> hidden(tanh) -> d network; weights flattened as
    [W1 (hidden), b1 (hidden), W2 (hidden*d, row-major), b2 (d)]."""

    hidden: int = 30
    d: int = 1

    @property
    def n_params(self):
        return 2 * self.hidden + self.hidden * self.d + self.d

    def unpack(self, w):
        h, d = self.hidden, self.d
        if len(w) != self.n_params:
            raise CtrlkitError(
                f"expected {self.n_params} parameters, got {len(w)}")
        w1 = w[:h]
        b1 = w[h: 2 * h]
        w2 = w[2 * h: 2 * h + h * d]  # w2[i*d + j]: unit i -> output j
        b2 = w[2 * h + h * d:]
        return w1, b1, w2, b2


def _forward(net: Mlp, w, ts):
    """Outputs and their time derivatives on the grid `ts`.

    Returns (y, dy): two length-d lists.  With float weights the entries
    are (|ts|,) arrays; with Dual weights they are batched Duals.  The
    derivative uses the closed-form chain rule of the one-layer net, so
    only the weights ever carry seeds (no nesting needed when the caller
    differentiates with respect to w).
    """
    ts = np.asarray(ts, dtype=float)
    h, d = net.hidden, net.d
    w1, b1, w2, b2 = net.unpack(w)
    if not any(isinstance(v, Dual) for v in w):
        w1 = np.asarray(w1, float)
        b1 = np.asarray(b1, float)
        w2m = np.asarray(w2, float).reshape(h, d)
        b2 = np.asarray(b2, float)
        act = np.tanh(np.outer(ts, w1) + b1)  # (B, h)
        dact = (1.0 - act * act) * w1
        # accumulate over hidden units in a fixed order (instead of a BLAS
        # matmul) so results are bitwise independent of the batch size
        y = np.tile(b2, (ts.size, 1))
        dy = np.zeros((ts.size, d))
        for i in range(h):
            y += act[:, i:i + 1] * w2m[i]
            dy += dact[:, i:i + 1] * w2m[i]
        return [y[:, j] for j in range(d)], [dy[:, j] for j in range(d)]
    hid, dhid = [], []
    for i in range(h):
        a = w1[i] * ts + b1[i]
        v = a.tanh() if isinstance(a, Dual) else np.tanh(a)
        hid.append(v)
        dhid.append((1.0 - v * v) * w1[i])
    ys, dys = [], []
    for j in range(d):
        acc = b2[j]
        dacc = 0.0
        for i in range(h):
            acc = acc + hid[i] * w2[i * d + j]
            dacc = dacc + dhid[i] * w2[i * d + j]
        ys.append(acc)
        dys.append(dacc)
    return ys, dys


def net_eval(net: Mlp, w, ts):
    """Batched forward pass, (|ts|, d)."""
    y, _ = _forward(net, w, ts)
    return np.column_stack(y) if not isinstance(y[0], Dual) else y


def net_dt(net: Mlp, w, ts):
    """Time derivative of the forward pass, (|ts|, d)."""
    _, dy = _forward(net, w, ts)
    return np.column_stack(dy) if not isinstance(dy[0], Dual) else dy


@dataclass
class MpcProblem:
    f: VectorFunction  # dynamics over [z; u]
    z0: np.ndarray
    zN: np.ndarray
    u_max: float
    t_grid: np.ndarray
    state_net: Mlp
    input_net: Mlp

    def __post_init__(self):
        self.z0 = np.asarray(self.z0, dtype=float)
        self.zN = np.asarray(self.zN, dtype=float)
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        if self.t_grid[0] >= self.t_grid[-1]:
            raise CtrlkitError("time grid must span a positive horizon")
        if self.u_max <= 0:
            raise CtrlkitError("u_max must be positive")

    @property
    def n(self):
        return self.state_net.d

    @property
    def m(self):
        return self.input_net.d

    @property
    def n_params(self):
        return self.state_net.n_params + self.input_net.n_params

    @property
    def horizon(self):
        return self.t_grid[-1] - self.t_grid[0]

    def split(self, w):
        k = self.state_net.n_params
        return w[:k], w[k:]

    def nets_on_grid(self, w, ts=None):
        """(z, dz/dt, u) on the grid; time is fed to the nets normalized
        to [0, 1], derivatives are rescaled back to real time."""
        ts = self.t_grid if ts is None else np.asarray(ts, dtype=float)
        s = (ts - self.t_grid[0]) / self.horizon
        wz, wu = self.split(w)
        z, dz = _forward(self.state_net, wz, s)
        u, _ = _forward(self.input_net, wu, s)
        dz = [v * (1.0 / self.horizon) for v in dz]
        return z, dz, u


def _at(v, i):
    """Sample i of a batched value (Dual or array)."""
    if isinstance(v, Dual):
        p = v.partials
        return Dual._raw(float(v.value[i]),
                         p[i] if p.ndim == 2 else p)
    return float(np.asarray(v)[i])


def _batch_mean(v, n):
    """Mean over the batch axis of a Dual or array."""
    if isinstance(v, Dual):
        p = v.partials
        return Dual._raw(float(np.sum(v.value)) / n,
                         (np.sum(p, axis=0) if p.ndim == 2 else p * n) / n)
    return float(np.sum(v)) / n


def _constraint_parts(p: MpcProblem, w, ts=None):
    """(dynamics residuals r_j batched, boundary equalities, input-bound
    inequalities) at w; entries are Duals when w carries seeds."""
    z, dz, u = p.nets_on_grid(w, ts)
    B = (len(p.t_grid) if ts is None else len(ts))
    zu = list(z) + list(u)
    fz = p.f.fn(zu, ())
    resids = [dz[j] - fz[j] for j in range(p.n)]
    boundary = []
    for j in range(p.n):
        boundary.append(_at(z[j], 0) - p.z0[j])
    for j in range(p.n):
        boundary.append(_at(z[j], B - 1) - p.zN[j])
    ineq = []
    for j in range(p.m):
        for k in range(B):
            uu = _at(u[j], k)
            ineq.append(p.u_max - uu)
            ineq.append(p.u_max + uu)
    return resids, boundary, ineq, B


def nlp_constraints(p: MpcProblem, w, ts=None):
    """Equality and inequality constraint vectors at w.

    eq = [mean-squared dynamics residual over the grid,
          z(t0) - z0  (n entries),
          z(tN) - zN  (n entries)]
    ineq = [u_max - u_j(t_k), u_max + u_j(t_k)  for every sample]  (>= 0)
    """
    resids, boundary, ineq, B = _constraint_parts(p, w, ts)
    agg = 0.0
    for r in resids:
        agg = agg + _batch_mean(r * r, B - 1)
    eq = [agg] + boundary
    vals = [v.value if isinstance(v, Dual) else v for v in eq + ineq]
    flat = np.concatenate([np.atleast_1d(v) for v in vals])
    if not np.all(np.isfinite(flat)):
        raise NonFiniteError("non-finite constraint value",
                             index=int(np.argmax(~np.isfinite(flat))))
    return eq, ineq


def constraints_with_jacobian(p: MpcProblem, w):
    """Constraint values plus AD Jacobians with respect to w."""
    K = p.n_params
    duals = []
    for k, v in enumerate(w):
        seed = np.zeros(K)
        seed[k] = 1.0
        duals.append(Dual._raw(float(v), seed))
    eq, ineq = nlp_constraints(p, duals)

    def unpack(items):
        vals = np.array([c.value if isinstance(c, Dual) else float(c)
                         for c in items])
        jac = np.vstack([c.partials if isinstance(c, Dual) else np.zeros(K)
                         for c in items])
        return vals, jac

    ce, Je = unpack(eq)
    ci, Ji = unpack(ineq)
    return ce, Je, ci, Ji


@dataclass
class SqpConfig:
    max_iter: int = 2000
    constraint_tol: float = 1e-4
    boundary_tol: float = 1e-3
    step_tol: float = 1e-8
    penalty_growth: float = 2.0
    init_low: float = 1e-6
    init_high: float = 1e-2
    seed: int = 0
    # The aggregated mean-squared dynamics constraint is a squared
    # quantity, so its plain linearization degenerates (zero gradient at
    # feasibility).  The QP therefore works on the per-sample residual
    # rows, which is exactly the Gauss-Newton model of the aggregated
    # constraint; set aggregated_qp=True to force the naive linearization.
    aggregated_qp: bool = False

    def __post_init__(self):
        if self.constraint_tol <= 0 or self.step_tol <= 0:
            raise CtrlkitError("tolerances must be positive")


@dataclass
class SqpReport:
    rows: list = field(default_factory=list)  # (it, merit, viol, step, act)
    converged: bool = False
    iterations: int = 0
    final_violation: float = float("inf")
    regularized: bool = False
    message: str = ""

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iteration,merit,max_violation,step_norm,active_set\n")
            for r in self.rows:
                fh.write("%d,%.17g,%.17g,%.17g,%d\n" % r)


def _violation(ce, ci):
    v = np.max(np.abs(ce)) if ce.size else 0.0
    if ci.size:
        v = max(v, float(np.max(np.maximum(0.0, -ci))))
    return float(v)


def _merit(w, ce, ci, mu_eq, mu_ineq):
    """l1 merit with per-constraint penalties (Han-Powell): scalars
    broadcast, so a single mu still works."""
    pen = float(np.sum(np.asarray(mu_eq) * np.abs(ce)))
    if ci.size:
        pen += float(np.sum(np.asarray(mu_ineq) * np.maximum(0.0, -ci)))
    return 0.5 * float(w @ w) + pen


def _solve_kkt(w, rows, rhs, report, damping=0.0, prox=0.0):
    """min 0.5||w+d||^2 + 0.5*prox*||d||^2 s.t. rows d = rhs (relaxed);
    returns (d, multipliers).

    Per-row damping relaxes constraints proximally (lower-right KKT block
    -diag(damping)), which bounds both the step and the multipliers when a
    row family is ill-conditioned, while a tiny floor keeps selected rows
    (e.g. boundary conditions) effectively hard.  The prox term shortens
    the step like a trust region without biasing it toward w = 0."""
    nw = w.size
    na = rows.shape[0]
    kkt = np.zeros((nw + na, nw + na))
    kkt[:nw, :nw] = (1.0 + prox) * np.eye(nw)
    kkt[:nw, nw:] = rows.T
    kkt[nw:, :nw] = rows
    damping = np.broadcast_to(np.asarray(damping, dtype=float), (na,))
    kkt[nw:, nw:] = -np.diag(damping)
    b = np.concatenate([-w, rhs])
    try:
        sol = np.linalg.solve(kkt, b)
    except np.linalg.LinAlgError:
        report.regularized = True
        kkt[np.diag_indices(nw + na)] += 1e-8
        sol = np.linalg.solve(kkt, b)
    if not np.all(np.isfinite(sol)):
        report.regularized = True
        kkt[np.diag_indices(nw + na)] += 1e-8
        sol = np.linalg.solve(kkt, b)
    return sol[:nw], sol[nw:]


def _qp_step(w, ce, Je, ci, Ji, report, damping=0.0, prox=0.0,
             n_damped=None, max_rounds=30):
    """Identity-Hessian QP with linearized constraints via an active set
    on the inequalities.  Returns (d, eq multipliers, ineq multipliers).

    Damping applies to the first n_damped equality rows (all of them when
    None); the remaining equalities and active inequalities stay hard up
    to a tiny floor that keeps the KKT system solvable."""
    active = set(np.nonzero(ci < 0.0)[0])
    n_eq = ce.size
    if n_damped is None:
        n_damped = n_eq
    for _ in range(max_rounds):
        idx = sorted(active)
        rows = np.vstack([Je, Ji[idx]]) if idx else Je
        rhs = np.concatenate([-ce, -ci[idx]]) if idx else -ce
        damp = np.full(rows.shape[0], 1e-10)
        damp[:n_damped] = max(damping, 1e-10)
        d, lam = _solve_kkt(w, rows, rhs, report, damp, prox)
        lam_ineq = dict(zip(idx, lam[n_eq:]))
        # drop one active constraint pushing in the wrong direction
        neg = [i for i in idx if lam_ineq[i] < -1e-10]
        if neg:
            active.remove(min(neg, key=lambda i: lam_ineq[i]))
            continue
        # add the most violated inactive linearized inequality
        slack = ci + Ji @ d
        cand = [i for i in range(ci.size)
                if i not in active and slack[i] < -1e-10]
        if not cand:
            return d, lam[:n_eq], lam_ineq
        active.add(min(cand, key=lambda i: slack[i]))
    return d, lam[:n_eq], lam_ineq


def init_weights(p: MpcProblem, cfg: SqpConfig):
    """Uniform draw from (init_low, init_high]."""
    rng = np.random.default_rng(cfg.seed)
    return cfg.init_low + rng.uniform(0.0, 1.0, p.n_params) * (
        cfg.init_high - cfg.init_low)


def _solver_values(p: MpcProblem, w, aggregated):
    """(eq rows, ineq values, dyn_resid metric, boundary metric) at plain w."""
    resids, boundary, ineq, B = _constraint_parts(p, list(w))
    n_grid = B - 1
    dyn_resid = float(sum(np.sum(np.asarray(r) ** 2) for r in resids)) / n_grid
    if aggregated:
        ce = np.array([dyn_resid] + list(boundary))
    else:
        rows = [np.asarray(r) / np.sqrt(n_grid) for r in resids]
        ce = np.concatenate(rows + [np.asarray(boundary)])
    return ce, np.asarray(ineq, dtype=float), dyn_resid, \
        float(np.max(np.abs(boundary)))


def _solver_rows(p: MpcProblem, w, aggregated):
    """As _solver_values but with AD Jacobians of the eq/ineq rows."""
    K = p.n_params
    duals = []
    for k, v in enumerate(w):
        seed = np.zeros(K)
        seed[k] = 1.0
        duals.append(Dual._raw(float(v), seed))
    resids, boundary, ineq, B = _constraint_parts(p, duals)
    n_grid = B - 1
    dyn_resid = float(sum(np.sum(r.value ** 2) for r in resids)) / n_grid
    bnd = np.array([c.value for c in boundary])
    jb = np.vstack([c.partials for c in boundary])
    if aggregated:
        grad = np.zeros(K)
        for r in resids:
            grad += 2.0 * (r.value @ r.partials) / n_grid
        ce = np.concatenate([[dyn_resid], bnd])
        Je = np.vstack([grad, jb])
    else:
        s = 1.0 / np.sqrt(n_grid)
        ce = np.concatenate([r.value * s for r in resids] + [bnd])
        Je = np.vstack([r.partials * s for r in resids] + [jb])
    ci = np.array([c.value for c in ineq])
    Ji = np.vstack([c.partials for c in ineq])
    return ce, Je, ci, Ji, dyn_resid, float(np.max(np.abs(bnd)))


def sqp_solve(p: MpcProblem, cfg: SqpConfig = None, w0=None):
    """Returns (w, report).  Non-convergence sets report.converged=False
    rather than raising."""
    cfg = cfg or SqpConfig()
    w = np.array(w0, dtype=float) if w0 is not None \
        else init_weights(p, cfg)
    report = SqpReport()
    agg = cfg.aggregated_qp
    ce, Je, ci, Ji, dyn_resid, bnd = _solver_rows(p, w, agg)
    mu_eq = np.ones(ce.size)
    mu_ineq = np.ones(ci.size)

    def metric(e18, b, civals):
        v = max(e18, b)
        if civals.size:
            v = max(v, float(np.max(np.maximum(0.0, -civals))))
        return v

    def feasible(e18, b, civals):
        return (e18 <= cfg.constraint_tol and b <= cfg.boundary_tol
                and (not civals.size or np.min(civals) >= -1e-6))

    best_w, best_v = w.copy(), metric(dyn_resid, bnd, ci)
    prox = 1.0
    stalls = 0
    stall_best = np.inf
    for it in range(cfg.max_iter):
        if feasible(dyn_resid, bnd, ci):
            report.converged = True
            best_w, best_v = w.copy(), metric(dyn_resid, bnd, ci)
            break
        # dynamics rows are relaxed in proportion to their own residual
        # (Gauss-Newton weighting); boundary rows remain hard
        row_damp = min(1e-2, max(1e-9, dyn_resid * 1e-4))
        d, lam_eq, lam_ineq = _qp_step(w, ce, Je, ci, Ji, report,
                                       row_damp, prox,
                                       n_damped=ce.size - 2 * p.n)
        mu_eq = np.maximum(np.abs(lam_eq), 0.5 * (mu_eq + np.abs(lam_eq)))
        for i, v in lam_ineq.items():
            mu_ineq[i] = max(abs(v), 0.5 * (mu_ineq[i] + abs(v)))
        phi0 = _merit(w, ce, ci, mu_eq, mu_ineq)
        alpha = 1.0
        accepted = False
        for _ in range(30):
            w_try = w + alpha * d
            try:
                ce_t, ci_t, dyn_resid_t, bnd_t = _solver_values(p, w_try, agg)
            except (CtrlkitError, FloatingPointError):
                alpha *= 0.5
                continue
            if _merit(w_try, ce_t, ci_t, mu_eq, mu_ineq) <= phi0 - 1e-12:
                accepted = True
                break
            alpha *= 0.5
        step = float(np.linalg.norm(alpha * d)) if accepted else 0.0
        if accepted:
            w = w_try
            ce, Je, ci, Ji, dyn_resid, bnd = _solver_rows(p, w, agg)
            if alpha >= 0.5:
                prox = max(prox / 3.0, 1e-8)
            elif alpha < 0.25:
                prox = min(prox * 4.0, 1e12)
        else:
            prox = prox * 10.0
        viol = metric(dyn_resid, bnd, ci)
        if viol < best_v:
            best_w, best_v = w.copy(), viol
        report.rows.append((it, _merit(w, ce, ci, mu_eq, mu_ineq), viol,
                            step, len(lam_ineq)))
        if accepted and step <= cfg.step_tol and feasible(dyn_resid, bnd, ci):
            report.converged = True
            best_w, best_v = w.copy(), viol
            break
        if not accepted and prox >= 1e13:
            # persistent line-search failure: soft restart, give up after
            # several restarts without meaningful progress
            if viol < 0.9 * stall_best:
                stall_best = viol
            else:
                stalls += 1
            if stalls >= 6:
                report.message = "line search failed"
                break
            prox = 1.0
            mu_eq[:] = 1.0
            mu_ineq[:] = 1.0
    else:
        report.message = "iteration budget exhausted"
    if not report.converged and feasible(dyn_resid, bnd, ci):
        report.converged = True
        best_w, best_v = w, metric(dyn_resid, bnd, ci)
    report.iterations = len(report.rows)
    report.final_violation = best_v
    if report.converged:
        report.message = ""
    return best_w, report


def rollout_check(p: MpcProblem, w, dt=0.01):
    """(net-evaluated trajectory, RK4 rollout under the net's input)."""
    z, _, u = p.nets_on_grid(w)
    mpc_traj = Trajectory(
        times=p.t_grid.copy(),
        states=np.column_stack(z),
        inputs=np.column_stack(u),
    )
    steps = int(round(p.horizon / dt))

    def input_at(t):
        _, _, uu = p.nets_on_grid(w, np.array([t]))
        return np.array([v[0] for v in uu])

    def deriv(x, t):
        v = list(np.concatenate([x, input_at(t)]))
        return np.array(p.f.fn(v, ()), dtype=float)

    x = p.z0.copy()
    times = [p.t_grid[0]]
    states = [x.copy()]
    inputs = [input_at(p.t_grid[0])]
    for k in range(steps):
        t = p.t_grid[0] + k * dt
        k1 = deriv(x, t)
        k2 = deriv(x + dt / 2 * k1, t + dt / 2)
        k3 = deriv(x + dt / 2 * k2, t + dt / 2)
        k4 = deriv(x + dt * k3, t + dt)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        times.append(t + dt)
        states.append(x.copy())
        inputs.append(input_at(t + dt))
    ode_traj = Trajectory(times=np.array(times), states=np.array(states),
                          inputs=np.array(inputs))
    return mpc_traj, ode_traj


def save_solution(p: MpcProblem, w, path):
    with open(path, "w") as fh:
        fh.write("mpc-solution v1\n")
        fh.write("state_net hidden=%d d=%d\n"
                 % (p.state_net.hidden, p.state_net.d))
        fh.write("input_net hidden=%d d=%d\n"
                 % (p.input_net.hidden, p.input_net.d))
        for v in w:
            fh.write("%.17g\n" % v)


def load_solution(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "mpc-solution v1":
        raise CtrlkitError(f"not a solution file: {path}")
    nets = []
    for ln in lines[1:3]:
        parts = dict(kv.split("=") for kv in ln.split()[1:])
        nets.append(Mlp(hidden=int(parts["hidden"]), d=int(parts["d"])))
    w = np.array([float(v) for v in lines[3:]])
    return nets[0], nets[1], w


def default_pendulum_problem(f: VectorFunction, T=3.0, N=50, u_max=10.0,
                             hidden=30):
    """The swing-up setup: down state to upright in T seconds."""
    return MpcProblem(
        f=f,
        z0=np.zeros(4),
        zN=np.array([0.0, 0.0, np.pi, 0.0]),
        u_max=u_max,
        t_grid=np.linspace(0.0, T, N + 1),
        state_net=Mlp(hidden=hidden, d=4),
        input_net=Mlp(hidden=hidden, d=1),
    )
