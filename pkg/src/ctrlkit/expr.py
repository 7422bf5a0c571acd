"""Expression trees for the equation-model language.

Nodes are immutable; evaluation is generic over the scalar type (plain
floats or autodiff Duals).  Symbolic differentiation does constant folding
and 0/1 identities only.
"""

from ctrlkit import autodiff
from ctrlkit.errors import CtrlkitError


class Expr:
    __slots__ = ()


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = float(value)

    def __repr__(self):
        return f"Const({self.value})"


class Var(Expr):
    __slots__ = ("name",)

    def __init__(self, name):
        self.name = name

    def __repr__(self):
        return f"Var({self.name!r})"


class Un(Expr):
    __slots__ = ("op", "a")

    def __init__(self, op, a):
        self.op = op
        self.a = a

    def __repr__(self):
        return f"Un({self.op!r}, {self.a!r})"


class Bin(Expr):
    __slots__ = ("op", "a", "b")

    def __init__(self, op, a, b):
        self.op = op
        self.a = a
        self.b = b

    def __repr__(self):
        return f"Bin({self.op!r}, {self.a!r}, {self.b!r})"


FUNCTIONS = {
    "sin": autodiff.sin,
    "cos": autodiff.cos,
    "tan": autodiff.tan,
    "exp": autodiff.exp,
    "log": autodiff.log,
    "sqrt": autodiff.sqrt,
    "tanh": autodiff.tanh,
}


def eval_expr(e, bindings):
    """Evaluate e with a name->scalar map; scalars may be Duals."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return bindings[e.name]
        except KeyError:
            raise CtrlkitError(f"missing binding for '{e.name}'") from None
    if isinstance(e, Un):
        v = eval_expr(e.a, bindings)
        if e.op == "neg":
            return -v
        return FUNCTIONS[e.op](v)
    a = eval_expr(e.a, bindings)
    b = eval_expr(e.b, bindings)
    op = e.op
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        return a / b
    return a**b  # pow


def variables_in(e, out=None):
    if out is None:
        out = set()
    if isinstance(e, Var):
        out.add(e.name)
    elif isinstance(e, Un):
        variables_in(e.a, out)
    elif isinstance(e, Bin):
        variables_in(e.a, out)
        variables_in(e.b, out)
    return out


def _is_const(e, v=None):
    return isinstance(e, Const) and (v is None or e.value == v)


def mkadd(a, b):
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    return Bin("add", a, b)


def mksub(a, b):
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(a, 0.0):
        return mkneg(b)
    return Bin("sub", a, b)


def mkneg(a):
    if _is_const(a):
        return Const(-a.value)
    return Un("neg", a)


def mkmul(a, b):
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return Const(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    return Bin("mul", a, b)


def mkdiv(a, b):
    if _is_const(a, 0.0):
        return Const(0.0)
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        return Const(a.value / b.value)
    return Bin("div", a, b)


def mkpow(a, b):
    if _is_const(b, 1.0):
        return a
    if _is_const(b, 0.0):
        return Const(1.0)
    if _is_const(a) and _is_const(b):
        return Const(a.value**b.value)
    return Bin("pow", a, b)


_DFUN = {
    "sin": lambda a: Un("cos", a),
    "cos": lambda a: mkneg(Un("sin", a)),
    "tan": lambda a: mkadd(Const(1.0), mkpow(Un("tan", a), Const(2.0))),
    "exp": lambda a: Un("exp", a),
    "log": lambda a: mkdiv(Const(1.0), a),
    "sqrt": lambda a: mkdiv(Const(0.5), Un("sqrt", a)),
    "tanh": lambda a: mksub(Const(1.0), mkpow(Un("tanh", a), Const(2.0))),
}


def diff_expr(e, dmap):
    """Symbolic derivative of e.

    ``dmap`` maps a variable name to the Expr standing for its derivative
    (Const(0.0) entries may be omitted).  Used both for partial
    derivatives (one name mapped to Const(1)) and for time derivatives
    (every variable mapped to its time-derivative variable).
    """
    if isinstance(e, Const):
        return Const(0.0)
    if isinstance(e, Var):
        return dmap.get(e.name, Const(0.0))
    if isinstance(e, Un):
        da = diff_expr(e.a, dmap)
        if e.op == "neg":
            return mkneg(da)
        return mkmul(_DFUN[e.op](e.a), da)
    da = diff_expr(e.a, dmap)
    db = diff_expr(e.b, dmap)
    op = e.op
    if op == "add":
        return mkadd(da, db)
    if op == "sub":
        return mksub(da, db)
    if op == "mul":
        return mkadd(mkmul(da, e.b), mkmul(e.a, db))
    if op == "div":
        return mkdiv(mksub(mkmul(da, e.b), mkmul(e.a, db)), mkmul(e.b, e.b))
    # pow
    if _is_const(e.b):
        c = e.b.value
        return mkmul(mkmul(Const(c), mkpow(e.a, Const(c - 1.0))), da)
    # general a^b
    return mkmul(
        mkpow(e.a, e.b),
        mkadd(mkmul(db, Un("log", e.a)), mkmul(e.b, mkdiv(da, e.a))),
    )


def substitute(e, mapping):
    """Replace variable references per a name -> Expr map."""
    if isinstance(e, Const):
        return e
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Un):
        return Un(e.op, substitute(e.a, mapping))
    return Bin(e.op, substitute(e.a, mapping), substitute(e.b, mapping))


_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def _node_prec(e):
    if isinstance(e, (Const, Var)):
        return 5
    if isinstance(e, Un):
        return _PREC["neg"] if e.op == "neg" else 5
    return _PREC[e.op]


def pretty(e, ctx=0):
    """Render e in the model-file expression syntax.

    ``ctx`` is the minimum precedence the rendering must have to stand
    unparenthesized in its parent.
    """
    prec = _node_prec(e)
    if isinstance(e, Const):
        v = e.value
        s = repr(v)
        if v < 0:
            return f"({s})"
        return s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Un):
        if e.op == "neg":
            s = "-" + pretty(e.a, prec)
        else:
            return f"{e.op}({pretty(e.a)})"
    else:
        op = e.op
        sym = {"add": " + ", "sub": " - ", "mul": "*", "div": "/", "pow": "^"}[op]
        if op == "pow":  # right-associative
            s = pretty(e.a, prec + 1) + sym + pretty(e.b, prec)
        else:
            s = pretty(e.a, prec) + sym + pretty(e.b, prec + 1)
    return f"({s})" if prec < ctx else s
