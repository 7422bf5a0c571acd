"""Equation-model language: symbol table, parser and structural helpers.

A model file declares parameters, states, inputs and algebraic variables,
then lists residual equations.  ``der(x)`` inside an equation refers to the
time derivative of state ``x``.  Every equation ``lhs = rhs`` is stored as
the residual ``lhs - rhs``.
"""

import re
from dataclasses import dataclass, field
from typing import Optional

from ctrlkit.errors import CtrlkitError, ParseError
from ctrlkit.expr import (
    Bin,
    Const,
    Expr,
    FUNCTIONS,
    Un,
    Var,
    diff_expr,
    eval_expr,
    mksub,
    pretty,
    variables_in,
)

KINDS = ("state", "derivative", "algebraic", "input", "parameter")


@dataclass
class ModelVariable:
    name: str
    kind: str
    value: Optional[float] = None  # parameter value or initial condition
    der_of: Optional[str] = None  # for kind == "derivative"
    note: str = ""  # provenance, e.g. dummy-derivative origin


def der_name(name: str) -> str:
    return f"der({name})"


@dataclass
class Equation:
    residual: Expr
    lhs: Optional[Expr] = None  # as written, kept for explicit-solve detection
    rhs: Optional[Expr] = None
    note: str = ""

    def pretty(self):
        if self.lhs is not None:
            return f"{pretty(self.lhs)} = {pretty(self.rhs)}"
        return f"{pretty(self.residual)} = 0"


class EquationSystem:
    """Parsed model: symbol table plus residual equations.

    Treated as immutable after construction; structural transformations
    copy it first.
    """

    def __init__(self):
        self.variables: dict[str, ModelVariable] = {}
        self.equations: list[Equation] = []
        self.diagnostics: list[str] = []

    # -- symbol table -----------------------------------------------------

    def add_variable(self, var: ModelVariable):
        if var.name in self.variables:
            raise CtrlkitError(f"duplicate declaration of '{var.name}'")
        self.variables[var.name] = var

    def of_kind(self, kind):
        return [v for v in self.variables.values() if v.kind == kind]

    def states(self):
        return self.of_kind("state")

    def algebraics(self):
        return self.of_kind("algebraic")

    def inputs(self):
        return self.of_kind("input")

    def parameters(self):
        return self.of_kind("parameter")

    def parameter_bindings(self):
        return {v.name: v.value for v in self.parameters()}

    def derivative_of(self, name):
        """The derivative variable of `name`, or None."""
        return self.variables.get(der_name(name))

    def is_differentiated(self, name):
        return der_name(name) in self.variables

    def chain_root(self, name):
        """Follow der-of links down to the underlying non-derivative
        variable."""
        v = self.variables[name]
        while v.kind == "derivative":
            v = self.variables[v.der_of]
        return v

    def unknown_names(self):
        """Highest-order derivatives plus algebraic variables, in
        declaration order.  Derivatives of inputs are knowns (input
        trajectories are given), so chains rooted at inputs are skipped."""
        out = []
        for v in self.variables.values():
            if v.kind == "derivative" and not self.is_differentiated(v.name):
                if self.chain_root(v.name).kind != "input":
                    out.append(v.name)
            elif v.kind == "algebraic":
                out.append(v.name)
        return out

    def copy(self):
        import copy as _copy

        new = EquationSystem()
        new.variables = {
            n: _copy.copy(v) for n, v in self.variables.items()
        }
        new.equations = list(self.equations)
        new.diagnostics = list(self.diagnostics)
        return new

    def pretty(self):
        lines = []
        for v in self.variables.values():
            if v.kind == "derivative":
                continue
            init = f" = {v.value!r}" if v.value is not None else ""
            lines.append(f"{v.kind} {v.name}{init};")
        for eq in self.equations:
            lines.append(f"equation {eq.pretty()};")
        return "\n".join(lines) + "\n"


# -- parser ----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<comment>#[^\n]*)|(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()=;,]))"
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text):
    toks = []
    line = 1
    line_start = 0
    pos = 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            # skip plain whitespace/newlines not consumed
            ch = text[pos]
            if ch == "\n":
                line += 1
                line_start = pos + 1
                pos += 1
                continue
            if ch.isspace():
                pos += 1
                continue
            raise ParseError(
                f"unexpected character {ch!r}", line, pos - line_start + 1
            )
        # account for newlines inside the consumed whitespace
        seg = text[pos : m.start(m.lastgroup)]
        for i, ch in enumerate(seg):
            if ch == "\n":
                line += 1
                line_start = pos + i + 1
        col = m.start(m.lastgroup) - line_start + 1
        kind = m.lastgroup
        if kind != "comment":
            toks.append(_Tok(kind, m.group(kind), line, col))
        pos = m.end()
    toks.append(_Tok("eof", "", line, 1))
    return toks


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0
        self.sys = EquationSystem()
        self.pending_refs = []  # (name, tok) to resolve at the end
        self.pending_ders = []  # (state name, tok)

    def peek(self):
        return self.toks[self.i]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text):
        t = self.next()
        if t.text != text:
            raise ParseError(f"expected {text!r}, got {t.text!r}", t.line, t.col)
        return t

    def parse(self):
        while self.peek().kind != "eof":
            t = self.next()
            if t.kind != "ident":
                raise ParseError(
                    f"expected a declaration or equation, got {t.text!r}",
                    t.line,
                    t.col,
                )
            if t.text in ("parameter", "state", "input", "algebraic"):
                self.decl(t.text)
            elif t.text == "equation":
                self.equation()
            else:
                raise ParseError(f"unknown section {t.text!r}", t.line, t.col)
        self.resolve()
        return self.sys

    def decl(self, kind):
        t = self.next()
        if t.kind != "ident":
            raise ParseError("expected identifier", t.line, t.col)
        value = None
        if self.peek().text == "=":
            self.next()
            value = self.number()
        if kind == "input" and value is not None:
            raise ParseError("inputs take no value", t.line, t.col)
        try:
            self.sys.add_variable(ModelVariable(t.text, kind, value=value))
        except CtrlkitError as e:
            raise ParseError(str(e), t.line, t.col) from None
        if kind == "state":
            self.sys.variables[der_name(t.text)] = ModelVariable(
                der_name(t.text), "derivative", der_of=t.text
            )
        self.expect(";")

    def number(self):
        sign = 1.0
        if self.peek().text == "-":
            self.next()
            sign = -1.0
        t = self.next()
        if t.kind != "num":
            raise ParseError("expected a number", t.line, t.col)
        return sign * float(t.text)

    def equation(self):
        lhs = self.expr()
        self.expect("=")
        rhs = self.expr()
        self.expect(";")
        self.sys.equations.append(
            Equation(residual=mksub(lhs, rhs), lhs=lhs, rhs=rhs)
        )

    # precedence-climbing expression parser
    def expr(self):
        return self.add_expr()

    def add_expr(self):
        e = self.mul_expr()
        while self.peek().text in ("+", "-"):
            op = self.next().text
            r = self.mul_expr()
            e = Bin("add" if op == "+" else "sub", e, r)
        return e

    def mul_expr(self):
        e = self.unary_expr()
        while self.peek().text in ("*", "/"):
            op = self.next().text
            r = self.unary_expr()
            e = Bin("mul" if op == "*" else "div", e, r)
        return e

    def unary_expr(self):
        if self.peek().text == "-":
            self.next()
            return Un("neg", self.unary_expr())
        if self.peek().text == "+":
            self.next()
            return self.unary_expr()
        return self.pow_expr()

    def pow_expr(self):
        e = self.primary()
        if self.peek().text == "^":
            self.next()
            return Bin("pow", e, self.unary_expr())
        return e

    def primary(self):
        t = self.next()
        if t.text == "(":
            e = self.expr()
            self.expect(")")
            return e
        if t.kind == "num":
            return Const(float(t.text))
        if t.kind == "ident":
            name = t.text
            if self.peek().text == "(":
                self.next()
                if name == "der":
                    arg = self.next()
                    if arg.kind != "ident":
                        raise ParseError("der() takes a variable", arg.line, arg.col)
                    self.expect(")")
                    self.pending_ders.append((arg.text, arg))
                    return Var(der_name(arg.text))
                if name not in FUNCTIONS:
                    raise ParseError(f"unknown function {name!r}", t.line, t.col)
                e = self.expr()
                self.expect(")")
                return Un(name, e)
            self.pending_refs.append((name, t))
            return Var(name)
        raise ParseError(f"unexpected token {t.text!r}", t.line, t.col)

    def resolve(self):
        for name, tok in self.pending_refs:
            if name not in self.sys.variables:
                raise ParseError(
                    f"undeclared identifier '{name}'", tok.line, tok.col
                )
        for name, tok in self.pending_ders:
            var = self.sys.variables.get(name)
            if var is None:
                raise ParseError(
                    f"undeclared identifier '{name}'", tok.line, tok.col
                )
            if var.kind != "state":
                raise ParseError(
                    f"der() of non-state variable '{name}'", tok.line, tok.col
                )
        n_unknown = len(self.sys.unknown_names())
        n_eq = len(self.sys.equations)
        if n_unknown != n_eq:
            self.sys.diagnostics.append(
                f"non-square model: {n_unknown} unknowns, {n_eq} equations"
            )


def parse_model(text: str) -> EquationSystem:
    """Parse model text into a resolved EquationSystem."""
    return _Parser(text).parse()


# -- operations --------------------------------------------------------------


def eval_residuals(sys: EquationSystem, bindings):
    """Residual of every equation under `bindings`.

    Bindings must cover every non-parameter variable referenced by the
    equations; parameters come from their declared values unless
    overridden.  Generic over plain reals and Duals.
    """
    full = dict(sys.parameter_bindings())
    full.update(bindings)
    return [eval_expr(eq.residual, full) for eq in sys.equations]


def time_derivative_map(sys: EquationSystem, create=True):
    """Map every variable name to the Expr of its time derivative.

    States map to their derivative variables, parameters to zero;
    algebraics and inputs map to derivative variables that are created on
    demand when ``create`` is set (mutates the symbol table).
    """
    dmap = {}
    for v in list(sys.variables.values()):
        if v.kind == "parameter":
            continue
        dn = der_name(v.name)
        if dn in sys.variables:
            dmap[v.name] = Var(dn)
        elif v.kind in ("algebraic", "input", "derivative") and create:
            sys.variables[dn] = ModelVariable(
                dn, "derivative", der_of=v.name, note="created by diff_time"
            )
            dmap[v.name] = Var(dn)
    return dmap


def diff_time(eq, sys: EquationSystem):
    """Symbolic d/dt of a residual expression (or Equation)."""
    e = eq.residual if isinstance(eq, Equation) else eq
    needed = variables_in(e)
    dmap = {}
    for name in needed:
        v = sys.variables.get(name)
        if v is None:
            raise CtrlkitError(f"expression references unknown '{name}'")
        if v.kind == "parameter":
            continue
        dn = der_name(name)
        if dn not in sys.variables:
            sys.variables[dn] = ModelVariable(
                dn, "derivative", der_of=name, note="created by diff_time"
            )
        dmap[name] = Var(dn)
    return diff_expr(e, dmap)


def incidence(sys: EquationSystem):
    """Equation index -> set of unknown indices (structural incidence)."""
    unknowns = sys.unknown_names()
    index = {n: i for i, n in enumerate(unknowns)}
    out = {}
    for k, eq in enumerate(sys.equations):
        names = variables_in(eq.residual)
        out[k] = {index[n] for n in names if n in index}
    return out


def parse_expression(text: str, allowed=None) -> Expr:
    """Parse a standalone expression (same grammar as equation bodies).

    ``allowed``, if given, is the set of identifiers permitted to appear.
    """
    p = _Parser(text)
    e = p.expr()
    t = p.peek()
    if t.kind != "eof":
        raise ParseError(f"trailing input {t.text!r}", t.line, t.col)
    if p.pending_ders:
        name, tok = p.pending_ders[0]
        raise ParseError("der() not allowed here", tok.line, tok.col)
    if allowed is not None:
        for name, tok in p.pending_refs:
            if name not in allowed:
                raise ParseError(
                    f"undeclared identifier '{name}'", tok.line, tok.col
                )
    return e
