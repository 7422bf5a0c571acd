"""Structural analysis: matching, index reduction, BLT sorting and the
causal evaluation sweep.

The pipeline is `parse -> index_reduce -> maximum_matching -> blt_sort ->
CausalModel`, after which `causal_field` exposes the model as an explicit
vector field over [states; inputs].
"""

from dataclasses import dataclass, field

import numpy as np

from ctrlkit import autodiff
from ctrlkit.autodiff import Dual, VectorFunction
from ctrlkit.errors import (
    ConvergenceError,
    CtrlkitError,
    SingularBlockError,
    StructuralSingularityError,
)
from ctrlkit.expr import Const, Var, diff_expr, eval_expr, substitute, variables_in
from ctrlkit.model_ir import (
    Equation,
    EquationSystem,
    der_name,
    diff_time,
    incidence,
)

MAX_DIFFERENTIATION_ROUNDS = 5
NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50


@dataclass
class Matching:
    assignment: dict  # equation index -> unknown index
    n_equations: int

    @property
    def complete(self):
        return len(self.assignment) == self.n_equations

    def unmatched_equations(self):
        return [k for k in range(self.n_equations) if k not in self.assignment]


def maximum_matching(inc, n_equations=None) -> Matching:
    """Maximum-cardinality bipartite matching by augmenting paths.

    Deterministic: equations are scanned in ascending order and each DFS
    prefers the lowest-index unknown.
    """
    if n_equations is None:
        n_equations = len(inc)
    adj = {k: sorted(inc.get(k, ())) for k in range(n_equations)}
    matched_eq = {}  # unknown -> equation

    def augment(k, seen):
        for u in adj[k]:
            if u in seen:
                continue
            seen.add(u)
            other = matched_eq.get(u)
            if other is None or augment(other, seen):
                matched_eq[u] = k
                return True
        return False

    for k in range(n_equations):
        augment(k, set())
    return Matching({e: u for u, e in matched_eq.items()}, n_equations)


def _state_demotion_candidate(sys, eq):
    """State to demote when `eq`'s constraint is differentiated: fewest
    incident equations, ties broken by declaration order."""
    names = variables_in(eq.residual)
    states = [n for n in sys.variables if sys.variables[n].kind == "state" and n in names]
    if not states:
        return None
    counts = {}
    for n in states:
        counts[n] = sum(
            1 for e in sys.equations if n in variables_in(e.residual)
        )
    order = {n: i for i, n in enumerate(sys.variables)}
    return min(states, key=lambda n: (counts[n], order[n]))


def index_reduce(sys: EquationSystem):
    """Pantelides-style index reduction with dummy derivatives.

    Returns (reduced system, dummy registry).  The registry maps each
    dummy derivative variable to the state it demoted.
    """
    work = sys.copy()
    dummies = {}
    for _ in range(MAX_DIFFERENTIATION_ROUNDS):
        inc = incidence(work)
        m = maximum_matching(inc, len(work.equations))
        if m.complete:
            return work, dummies
        # closure of the unmatched equations under alternating paths
        matched_eq_of = {u: e for e, u in m.assignment.items()}
        to_diff = set()
        for e0 in m.unmatched_equations():
            stack = [e0]
            seen_eq = {e0}
            seen_un = set()
            while stack:
                e = stack.pop()
                for u in sorted(inc.get(e, ())):
                    if u in seen_un:
                        continue
                    seen_un.add(u)
                    other = matched_eq_of.get(u)
                    if other is not None and other not in seen_eq:
                        seen_eq.add(other)
                        stack.append(other)
            to_diff |= seen_eq
        for e_idx in sorted(to_diff):
            eq = work.equations[e_idx]
            demote = _state_demotion_candidate(work, eq)
            new_res = diff_time(eq, work)
            work.equations.append(
                Equation(residual=new_res, note=f"d/dt of equation {e_idx}")
            )
            if demote is not None:
                var = work.variables[demote]
                var.kind = "algebraic"
                var.note = "state demoted by index reduction"
                dn = der_name(demote)
                dvar = work.variables[dn]
                dvar.note = "dummy derivative"
                dummies[dn] = demote
    inc = incidence(work)
    m = maximum_matching(inc, len(work.equations))
    if m.complete:
        return work, dummies
    raise StructuralSingularityError(
        "no complete matching after %d differentiation rounds"
        % MAX_DIFFERENTIATION_ROUNDS,
        unmatched=m.unmatched_equations(),
    )


# -- BLT sorting -------------------------------------------------------------


@dataclass
class Block:
    eqs: list  # equation indices
    unknowns: list  # unknown variable names
    tag: str  # explicit-assignment | linear-symbolic | newton | surrogate
    data: object = None

    @property
    def size(self):
        return len(self.eqs)


@dataclass
class BltForm:
    blocks: list

    def describe(self):
        lines = []
        for k, b in enumerate(self.blocks):
            names = ", ".join(b.unknowns)
            lines.append(f"block {k}: size {b.size}, unknowns [{names}], {b.tag}")
        return "\n".join(lines)

    def tags(self):
        return [b.tag for b in self.blocks]


def _tarjan(n, adj):
    """Strongly connected components, emitted dependencies-first.

    Iterative Tarjan; nodes visited in ascending index for determinism.
    """
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack = []
    sccs = []
    counter = [0]

    def strongconnect(v0):
        work = [(v0, 0)]
        while work:
            v, pi = work.pop()
            if pi == 0:
                index[v] = low[v] = counter[0]
                counter[0] += 1
                stack.append(v)
                on_stack[v] = True
            recurse = False
            neighbors = adj[v]
            for i in range(pi, len(neighbors)):
                w = neighbors[i]
                if index[w] == -1:
                    work.append((v, i + 1))
                    work.append((w, 0))
                    recurse = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index[w])
            if recurse:
                continue
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                sccs.append(sorted(comp))

    for v in range(n):
        if index[v] == -1:
            strongconnect(v)
    return sccs


def _classify_1x1(eq, uname):
    """Tag a scalar block and attach its closed form when available."""
    if eq.lhs is not None:
        for side, other in ((eq.lhs, eq.rhs), (eq.rhs, eq.lhs)):
            if isinstance(side, Var) and side.name == uname \
                    and uname not in variables_in(other):
                return "explicit-assignment", other
    dres = diff_expr(eq.residual, {uname: Const(1.0)})
    if uname not in variables_in(dres):
        offset = substitute(eq.residual, {uname: Const(0.0)})
        return "linear-symbolic", (dres, offset)
    return "newton", None


def blt_sort(sys: EquationSystem, matching: Matching) -> BltForm:
    """Order equations into solvable blocks via Tarjan's algorithm."""
    if not matching.complete:
        raise StructuralSingularityError(
            "BLT sorting requires a complete matching",
            unmatched=matching.unmatched_equations(),
        )
    unknowns = sys.unknown_names()
    matched_eq_of = {u: e for e, u in matching.assignment.items()}
    uindex = {n: i for i, n in enumerate(unknowns)}
    n = len(sys.equations)
    adj = []
    for k in range(n):
        deps = set()
        for name in variables_in(sys.equations[k].residual):
            ui = uindex.get(name)
            if ui is None:
                continue
            e = matched_eq_of[ui]
            if e != k:
                deps.add(e)
        adj.append(sorted(deps))
    blocks = []
    for comp in _tarjan(n, adj):
        unames = sorted(
            (unknowns[matching.assignment[e]] for e in comp),
            key=lambda nm: uindex[nm],
        )
        if len(comp) == 1:
            eq = sys.equations[comp[0]]
            tag, data = _classify_1x1(eq, unames[0])
        else:
            tag, data = "newton", None
        blocks.append(Block(list(comp), unames, tag, data))
    return BltForm(blocks)


# -- block solving and the causal sweep --------------------------------------


def solve_block(block: Block, bindings, sys: EquationSystem, cache=None,
                stats=None):
    """Solve one block for its unknowns given upstream bindings.

    Returns a name -> value dict.  ``cache`` (a mutable dict) enables warm
    starting of Newton blocks between calls.
    """
    if block.tag == "explicit-assignment":
        return {block.unknowns[0]: eval_expr(block.data, bindings)}
    if block.tag == "linear-symbolic":
        coeff_expr, offset_expr = block.data
        a = eval_expr(coeff_expr, bindings)
        b = eval_expr(offset_expr, bindings)
        return {block.unknowns[0]: -b / a}
    if block.tag == "surrogate":
        return block.data.predict_block(bindings)
    return _solve_newton(block, bindings, sys, cache, stats)


def _solve_newton(block, bindings, sys, cache, stats):
    for v in bindings.values():
        if isinstance(v, Dual):
            raise CtrlkitError(
                "newton block breaks differentiability; replace it with a "
                "surrogate before differentiating the causal sweep"
            )
    names = block.unknowns
    size = len(names)
    eqs = [sys.equations[k].residual for k in block.eqs]

    def residual(u, params):
        local = dict(bindings)
        local.update(zip(names, u))
        return [eval_expr(e, local) for e in eqs]

    f = VectorFunction(size, size, residual)
    key = tuple(block.eqs)
    x = np.array(cache[key], dtype=float) if cache and key in cache \
        else np.zeros(size)
    iters = 0
    r = np.array(residual(list(x), ()), dtype=float)
    while np.max(np.abs(r)) > NEWTON_TOL:
        if iters >= NEWTON_MAX_ITER:
            raise ConvergenceError(
                f"newton did not converge on block {names}",
                residual=float(np.max(np.abs(r))),
            )
        jac = autodiff.jacobian(f, x)
        try:
            step = np.linalg.solve(jac, r)
        except np.linalg.LinAlgError:
            raise SingularBlockError(
                f"singular jacobian in block {names}"
            ) from None
        if not np.all(np.isfinite(step)):
            raise ConvergenceError(
                f"newton diverged on block {names}",
                residual=float(np.max(np.abs(r))),
            )
        x = x - step
        r = np.array(residual(list(x), ()), dtype=float)
        iters += 1
        if not np.all(np.isfinite(r)):
            raise ConvergenceError(
                f"newton diverged on block {names}",
                residual=float("inf"),
            )
    if stats is not None:
        stats["iterations"] = iters
    if cache is not None:
        cache[key] = [float(v) for v in x]
    return dict(zip(names, [float(v) for v in x]))


@dataclass
class CausalModel:
    """Index-reduced system plus its BLT schedule."""

    sys: EquationSystem
    blt: BltForm
    dummies: dict = field(default_factory=dict)

    @property
    def state_names(self):
        return [v.name for v in self.sys.states()]

    @property
    def input_names(self):
        return [v.name for v in self.sys.inputs()]

    def has_newton_blocks(self):
        return any(b.tag == "newton" for b in self.blt.blocks)

    def sweep(self, bindings, cache=None):
        """Run the block schedule; returns bindings extended with every
        solved unknown."""
        out = dict(self.sys.parameter_bindings())
        out.update(bindings)
        for block in self.blt.blocks:
            out.update(solve_block(block, out, self.sys, cache=cache))
        return out


def causalize(sys: EquationSystem) -> CausalModel:
    reduced, dummies = index_reduce(sys)
    m = maximum_matching(incidence(reduced), len(reduced.equations))
    return CausalModel(reduced, blt_sort(reduced, m), dummies)


def causal_field(model: CausalModel) -> VectorFunction:
    """The model as an explicit vector field over [states; inputs].

    Each returned VectorFunction owns its Newton warm-start workspace, so
    concurrent use just needs one function object per thread.
    """
    states = model.state_names
    inputs = model.input_names
    ders = [der_name(s) for s in states]
    names = states + inputs
    cache = {}

    def fn(xu, params):
        bindings = dict(zip(names, xu))
        solved = model.sweep(bindings, cache=cache)
        return [solved[d] for d in ders]

    return VectorFunction(len(names), len(states), fn, name="causal_field")
