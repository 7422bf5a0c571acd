"""Learned explicit replacements for implicit BLT blocks.

An implicit (newton) diagonal block maps its upstream inputs to the block
solution.  We sample that map, fit a feature-engineered linear regression,
and splice the regression back into the schedule so the whole causal sweep
becomes explicit and differentiable.
"""

from dataclasses import dataclass, field

import numpy as np

from ctrlkit.errors import CtrlkitError, RankDeficiencyError
from ctrlkit.expr import eval_expr, pretty, variables_in
from ctrlkit.model_ir import parse_expression
from ctrlkit.structural import Block, BltForm, CausalModel, solve_block

DEFAULT_SAMPLES = 1000
DEFAULT_SEED = 42


class FeatureMap:
    """Base quantities (expressions over raw block inputs) plus monomial
    features of degree <= 2 over those bases."""

    def __init__(self, bases, monomials):
        self.bases = dict(bases)  # name -> Expr
        self.monomials = []  # tuples of base names
        for m in monomials:
            t = tuple(m.split("*")) if isinstance(m, str) else tuple(m)
            if not 1 <= len(t) <= 2:
                raise CtrlkitError(f"feature degree out of range: {m!r}")
            for name in t:
                if name not in self.bases:
                    raise CtrlkitError(f"unknown base quantity {name!r}")
            self.monomials.append(t)
        names = self.names
        if len(set(names)) != len(names):
            raise CtrlkitError("duplicate feature names")

    @classmethod
    def from_spec(cls, bases, monomials):
        """Build from textual base expressions, e.g. {"x1": "F_i/V"}."""
        exprs = {n: parse_expression(t) for n, t in bases.items()}
        return cls(exprs, monomials)

    @property
    def names(self):
        return ["*".join(t) for t in self.monomials]

    @property
    def n_features(self):
        return len(self.monomials)

    def raw_inputs(self):
        out = set()
        for e in self.bases.values():
            variables_in(e, out)
        return sorted(out)

    def feature_vector(self, bindings):
        """Feature values under bindings; generic over floats, arrays and
        Duals."""
        base = {n: eval_expr(e, bindings) for n, e in self.bases.items()}
        out = []
        for t in self.monomials:
            v = base[t[0]]
            for n in t[1:]:
                v = v * base[n]
            out.append(v)
        return out


@dataclass
class LinearSurrogate:
    feature_map: FeatureMap
    weights: np.ndarray  # (outputs, features)
    output_names: list

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if not np.all(np.isfinite(self.weights)):
            raise CtrlkitError("non-finite surrogate weights")
        if self.weights.shape != (len(self.output_names),
                                  self.feature_map.n_features):
            raise CtrlkitError("weight matrix shape mismatch")

    def predict_block(self, bindings):
        """Outputs as a name -> value map; generic over Duals."""
        phi = self.feature_map.feature_vector(bindings)
        out = {}
        for j, name in enumerate(self.output_names):
            acc = phi[0] * float(self.weights[j, 0])
            for k in range(1, len(phi)):
                w = float(self.weights[j, k])
                if w != 0.0:
                    acc = acc + phi[k] * w
            out[name] = acc
        return out


@dataclass
class TrainingSet:
    input_names: list
    inputs: np.ndarray  # (n, len(input_names))
    target_names: list
    targets: np.ndarray  # (n, len(target_names))
    seed: int
    ranges: dict

    def __len__(self):
        return self.inputs.shape[0]


def _upstream_bindings(model, block, bindings):
    """Solve the blocks scheduled before `block` whose unknowns are not
    already bound (sampled inputs stay fixed)."""
    out = dict(model.sys.parameter_bindings())
    out.update(bindings)
    for b in model.blt.blocks:
        if b is block:
            break
        if all(u in out for u in b.unknowns):
            continue
        out.update(solve_block(b, out, model.sys))
    return out


def sample_block(model: CausalModel, block: Block, ranges, n,
                 seed=DEFAULT_SEED) -> TrainingSet:
    """Uniform i.i.d. samples of the block inputs with the block solution
    as ground-truth target.  Failed solves are discarded and redrawn, up
    to 10n attempts."""
    names = list(ranges)
    rng = np.random.default_rng(seed)
    rows, targets = [], []
    attempts = 0
    cap = max(10 * n, 1)
    while len(rows) < n:
        if attempts >= cap:
            raise CtrlkitError(
                f"block sampling exceeded {cap} attempts "
                f"({len(rows)}/{n} samples collected)")
        attempts += 1
        sample = {nm: rng.uniform(*ranges[nm]) for nm in names}
        try:
            binds = _upstream_bindings(model, block, sample)
            sol = solve_block(block, binds, model.sys)
        except CtrlkitError:
            continue
        rows.append([sample[nm] for nm in names])
        targets.append([sol[u] for u in block.unknowns])
    return TrainingSet(
        input_names=names,
        inputs=np.array(rows, dtype=float).reshape(n, len(names)),
        target_names=list(block.unknowns),
        targets=np.array(targets, dtype=float).reshape(
            n, len(block.unknowns)),
        seed=seed,
        ranges=dict(ranges),
    )


def _design_matrix(ts: TrainingSet, fm: FeatureMap):
    binds = {nm: ts.inputs[:, j] for j, nm in enumerate(ts.input_names)}
    cols = fm.feature_vector(binds)
    n = len(ts)
    return np.column_stack(
        [np.broadcast_to(np.asarray(c, dtype=float), (n,)) for c in cols])


def fit(ts: TrainingSet, fm: FeatureMap) -> LinearSurrogate:
    """Ordinary least squares of block targets on the feature map."""
    if len(ts) < fm.n_features:
        raise CtrlkitError(
            f"{len(ts)} samples for {fm.n_features} features")
    phi = _design_matrix(ts, fm)
    rank = np.linalg.matrix_rank(phi)
    if rank < fm.n_features:
        dependent = []
        names = fm.names
        prev = 0
        for j in range(phi.shape[1]):
            r = np.linalg.matrix_rank(phi[:, : j + 1])
            if r == prev:
                dependent.append(names[j])
            prev = r
        raise RankDeficiencyError(
            "feature matrix is rank deficient", columns=dependent)
    sol, _, _, _ = np.linalg.lstsq(phi, ts.targets, rcond=None)
    return LinearSurrogate(fm, sol.T, list(ts.target_names))


def replace_block(model: CausalModel, block: Block,
                  s: LinearSurrogate) -> CausalModel:
    """New causal model with `block` replaced by the surrogate.  The result
    must be free of newton blocks (fully explicit sweep)."""
    if set(s.output_names) != set(block.unknowns):
        raise CtrlkitError("surrogate outputs do not match block unknowns")
    blocks = []
    for b in model.blt.blocks:
        if b is block:
            blocks.append(Block(list(b.eqs), list(s.output_names),
                                "surrogate", data=s))
        else:
            blocks.append(Block(list(b.eqs), list(b.unknowns), b.tag,
                                data=b.data))
    out = CausalModel(model.sys, BltForm(blocks), dict(model.dummies))
    if out.has_newton_blocks():
        raise CtrlkitError(
            "replacement incomplete: newton blocks remain in the schedule")
    return out


def surrogate_residual(model: CausalModel, block: Block, s: LinearSurrogate,
                       ranges, m, seed=DEFAULT_SEED) -> float:
    """Max infinity-norm of the original block residuals at the surrogate's
    outputs, over m fresh uniform samples."""
    names = list(ranges)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(m):
        sample = {nm: rng.uniform(*ranges[nm]) for nm in names}
        binds = _upstream_bindings(model, block, sample)
        binds.update(s.predict_block(binds))
        res = [eval_expr(model.sys.equations[k].residual, binds)
               for k in block.eqs]
        worst = max(worst, float(np.max(np.abs(res))))
    return worst


# -- persistence -------------------------------------------------------------

def save_surrogate(s: LinearSurrogate, path):
    lines = ["linear-surrogate v1"]
    for name, e in s.feature_map.bases.items():
        lines.append(f"base {name} = {pretty(e)}")
    lines.append("features " + " ".join(s.feature_map.names))
    for j, name in enumerate(s.output_names):
        row = " ".join("%.17g" % w for w in s.weights[j])
        lines.append(f"output {name} {row}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_surrogate(path) -> LinearSurrogate:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != "linear-surrogate v1":
        raise CtrlkitError(f"not a surrogate file: {path}")
    bases, monomials, outputs, rows = {}, None, [], []
    for ln in lines[1:]:
        kind, rest = ln.split(" ", 1)
        if kind == "base":
            name, text = rest.split("=", 1)
            bases[name.strip()] = parse_expression(text.strip())
        elif kind == "features":
            monomials = rest.split()
        elif kind == "output":
            parts = rest.split()
            nw = len(monomials)
            outputs.append(" ".join(parts[:-nw]) if len(parts) > nw + 1
                           else parts[0])
            rows.append([float(v) for v in parts[-nw:]])
        else:
            raise CtrlkitError(f"bad surrogate line: {ln!r}")
    fm = FeatureMap(bases, monomials)
    return LinearSurrogate(fm, np.array(rows), outputs)


# -- shipped reactor preset --------------------------------------------------

REACTOR_RANGES = {
    "F_i": (0.0, 20.0),
    "F": (0.0, 20.0),
    "V": (10.0, 100.0),
    "C_A": (0.0, 50.0),
    "C_B": (0.0, 25.0),
}


def reactor_feature_map() -> FeatureMap:
    """Degree-2 monomials over scaled flows and concentrations that render
    the reactor's 3x3 implicit block exactly linear in the features."""
    bases = {"x1": "F_i/V", "x2": "F/V", "x3": "C_B", "x4": "C_A"}
    monomials = ["x1", "x2", "x3", "x4", "x1*x4", "x2*x3",
                 "x1*x2", "x1*x3", "x2*x4", "x3*x4"]
    return FeatureMap.from_spec(bases, monomials)


def learn_block(model: CausalModel, block: Block, fm: FeatureMap, ranges,
                n=DEFAULT_SAMPLES, seed=DEFAULT_SEED) -> LinearSurrogate:
    ts = sample_block(model, block, ranges, n, seed)
    return fit(ts, fm)


def convert_reactor_model(model: CausalModel, n=DEFAULT_SAMPLES,
                          seed=DEFAULT_SEED):
    """Replace the reactor's implicit block with the preset regression;
    returns (explicit model, surrogate)."""
    newton = [b for b in model.blt.blocks if b.tag == "newton"]
    if len(newton) != 1:
        raise CtrlkitError("expected exactly one implicit block")
    s = learn_block(model, newton[0], reactor_feature_map(),
                    REACTOR_RANGES, n=n, seed=seed)
    return replace_block(model, newton[0], s), s
