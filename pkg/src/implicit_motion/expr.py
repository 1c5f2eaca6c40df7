"""Scalar expressions over named variables, with exact first and second
derivatives.

Expressions are parsed into an immutable tree and compiled on first use to
straight-line Python that propagates truncated Taylor coefficients forward
(value, gradient, upper triangle of the Hessian). Structurally zero
derivative entries are pruned at compile time; the user's expression itself
is never simplified.

Grammar (see ``docs/grammar.md``)::

    expr    := term (("+" | "-") term)*
    term    := factor (("*" | "/") factor)*
    factor  := ("-" | "+") factor | power
    power   := atom ("^" factor)?
    atom    := NUMBER | NAME | FUNC "(" expr ")" | "(" expr ")"

``^`` is right associative and binds tighter than unary minus, so ``-x^2``
is ``-(x^2)`` and ``2^-1`` is ``0.5``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence, Union

import numpy as np

from .errors import (ArityError, DomainError, ExprSyntaxError,
                     NonSmoothPoint, UnknownVariable)

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs")
CONSTANTS = {"pi": math.pi}
MAX_DEPTH = 200


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or one of FUNCTIONS
    arg: "Node"


@dataclass(frozen=True)
class Binary:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"


Node = Union[Const, Var, Unary, Binary]


# ---------------------------------------------------------------------------
# tokenizer / parser

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
""", re.VERBOSE)


def _tokenize(source: str):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}",
                                  _byte_offset(source, pos), source)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


def _byte_offset(source, pos):
    return len(source[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, source, varlist):
        self.source = source
        self.vars = set(varlist)
        self.tokens = _tokenize(source)
        self.i = 0
        self.depth = 0

    def error(self, cls, message, pos=None):
        if pos is None:
            pos = self.tokens[self.i][2]
        return cls(message, _byte_offset(self.source, pos), self.source)

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        kind, value, pos = self.take()
        if value != text or kind == "end":
            found = "end of input" if kind == "end" else repr(value)
            raise self.error(ExprSyntaxError, f"expected {text!r}, found {found}", pos)

    def parse(self):
        node = self.expr()
        kind, value, pos = self.peek()
        if kind != "end":
            raise self.error(ExprSyntaxError, f"unexpected {value!r}", pos)
        return node

    def enter(self):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise self.error(ExprSyntaxError, "expression nested too deeply")

    def expr(self):
        self.enter()
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Binary(op, node, self.term())
        self.depth -= 1
        return node

    def term(self):
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Binary(op, node, self.factor())
        return node

    def factor(self):
        self.enter()
        kind, value, _ = self.peek()
        if kind == "op" and value in ("-", "+"):
            self.take()
            arg = self.factor()
            node = Unary("neg", arg) if value == "-" else arg
        else:
            node = self.power()
        self.depth -= 1
        return node

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            self.take()
            return Binary("^", base, self.factor())
        return base

    def atom(self):
        kind, value, pos = self.take()
        if kind == "num":
            x = float(value)
            if not math.isfinite(x):
                raise self.error(ExprSyntaxError, "numeric literal out of range", pos)
            return Const(x)
        if kind == "name":
            if value in FUNCTIONS:
                return self.call(value, pos)
            if value in self.vars:
                return Var(value)
            if value in CONSTANTS:
                return Const(CONSTANTS[value])
            raise self.error(UnknownVariable, f"unknown identifier {value!r}", pos)
        if value == "(" and kind == "op":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(value)
        raise self.error(ExprSyntaxError, f"expected operand, found {found}", pos)

    def call(self, name, pos):
        if self.peek()[1] != "(":
            raise self.error(ArityError, f"function {name!r} needs one argument", pos)
        self.take()
        if self.peek()[1] == ")":
            raise self.error(ArityError, f"{name}() takes exactly one argument", pos)
        arg = self.expr()
        if self.peek()[1] == ",":
            raise self.error(ArityError, f"{name}() takes exactly one argument", pos)
        self.expect(")")
        return Unary(name, arg)


def _check_varlist(varlist):
    seen = set()
    for name in varlist:
        if not re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", name):
            raise ExprSyntaxError(f"invalid variable name {name!r}")
        if name in FUNCTIONS or name in CONSTANTS:
            raise ExprSyntaxError(f"variable name {name!r} is reserved")
        if name in seen:
            raise ExprSyntaxError(f"duplicate variable {name!r}")
        seen.add(name)


def parse(source: str, varlist: Sequence[str]) -> "ExprAst":
    """Parse ``source`` into an :class:`ExprAst` over ``varlist``."""
    varlist = tuple(varlist)
    _check_varlist(varlist)
    return ExprAst(_Parser(source, varlist).parse(), varlist)


def to_text(node: Node) -> str:
    """Fully parenthesised text that parses back to the same tree."""
    if isinstance(node, Const):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            return f"(-{to_text(node.arg)})"
        return f"{node.op}({to_text(node.arg)})"
    return f"({to_text(node.left)} {node.op} {to_text(node.right)})"


def variables(node: Node) -> set:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Const):
        return set()
    if isinstance(node, Unary):
        return variables(node.arg)
    return variables(node.left) | variables(node.right)


def substitute(node: Node, values: dict) -> Node:
    """Replace variables named in ``values`` by constants."""
    if isinstance(node, Var):
        return Const(float(values[node.name])) if node.name in values else node
    if isinstance(node, Const):
        return node
    if isinstance(node, Unary):
        return Unary(node.op, substitute(node.arg, values))
    return Binary(node.op, substitute(node.left, values),
                  substitute(node.right, values))


# ---------------------------------------------------------------------------
# runtime helpers used by generated code: each returns value and the first
# (and second) derivative of the scalar function at ``a``

def _abs1(a):
    if a == 0.0:
        raise NonSmoothPoint("abs is not differentiable at 0")
    return abs(a), (1.0 if a > 0 else -1.0)


def _abs2(a):
    v, d1 = _abs1(a)
    return v, d1, 0.0


def _sin1(a):
    return math.sin(a), math.cos(a)


def _sin2(a):
    s = math.sin(a)
    return s, math.cos(a), -s


def _cos1(a):
    return math.cos(a), -math.sin(a)


def _cos2(a):
    c = math.cos(a)
    return c, -math.sin(a), -c


def _tan1(a):
    v = math.tan(a)
    return v, 1.0 + v * v


def _tan2(a):
    v = math.tan(a)
    d1 = 1.0 + v * v
    return v, d1, 2.0 * v * d1


def _exp1(a):
    v = math.exp(a)
    return v, v


def _exp2(a):
    v = math.exp(a)
    return v, v, v


def _log1(a):
    return math.log(a), 1.0 / a


def _log2(a):
    d1 = 1.0 / a
    return math.log(a), d1, -d1 * d1


def _sqrt1(a):
    v = math.sqrt(a)
    return v, 0.5 / v


def _sqrt2(a):
    v = math.sqrt(a)
    d1 = 0.5 / v
    return v, d1, -0.5 * d1 / a


def _pow0(a, c):
    if c == int(c):
        return a ** int(c)
    if a < 0.0:
        raise DomainError(f"negative base {a!r} with non-integer exponent {c!r}")
    return a ** c


def _pow2(a, c):
    if c == int(c):
        n = int(c)
        v = a ** n
        d1 = n * a ** (n - 1) if n != 0 else 0.0
        d2 = n * (n - 1) * a ** (n - 2) if n not in (0, 1) else 0.0
        return v, d1, d2
    if a < 0.0:
        raise DomainError(f"negative base {a!r} with non-integer exponent {c!r}")
    return a ** c, c * a ** (c - 1.0), c * (c - 1.0) * a ** (c - 2.0)


def _pow1(a, c):
    v, d1, _ = _pow2(a, c)
    return v, d1


_VALUE_FUNCS = {
    "sin": "_m.sin", "cos": "_m.cos", "tan": "_m.tan", "exp": "_m.exp",
    "log": "_m.log", "sqrt": "_m.sqrt", "abs": "abs",
}

_NAMESPACE = {
    "_m": math,
    "_abs1": _abs1, "_abs2": _abs2, "_sin1": _sin1, "_sin2": _sin2,
    "_cos1": _cos1, "_cos2": _cos2, "_tan1": _tan1, "_tan2": _tan2,
    "_exp1": _exp1, "_exp2": _exp2, "_log1": _log1, "_log2": _log2,
    "_sqrt1": _sqrt1, "_sqrt2": _sqrt2,
    "_pow0": _pow0, "_pow1": _pow1, "_pow2": _pow2,
}


# ---------------------------------------------------------------------------
# code generation

def _mul(a, b):
    if a is None or b is None:
        return None
    if a == "1.0":
        return b
    if b == "1.0":
        return a
    return f"{_atom(a)}*{_atom(b)}"


def _atom(a):
    return f"({a})" if " " in a else a


def _neg(a):
    return None if a is None else f"(-{a})"


def _add(*terms):
    terms = [t for t in terms if t is not None]
    if not terms:
        return None
    return " + ".join(terms)


@dataclass
class _Jet:
    v: str
    g: list            # k entries, str or None
    h: dict            # (j, l) with j <= l -> str or None

    @property
    def constant(self):
        return all(x is None for x in self.g)


class _Emitter:
    def __init__(self, k, order):
        self.k = k
        self.order = order
        self.lines = []
        self.n = 0
        self.pairs = [(j, l) for j in range(k) for l in range(j, k)]

    def local(self, expr):
        """Bind a compound expression to a fresh local name."""
        if expr is None:
            return None
        if re.fullmatch(r"_[a-z]\d+|-?[0-9.e+-]+|\(-?[0-9.e+-]+\)", expr):
            return expr
        name = f"_t{self.n}"
        self.n += 1
        self.lines.append(f"    {name} = {expr}")
        return name

    def jet(self, v, g=None, h=None):
        g = g if g is not None else [None] * self.k
        h = h if h is not None else {}
        if self.order < 1:
            g = [None] * self.k
        if self.order < 2:
            h = {}
        return _Jet(self.local(v), [self.local(x) for x in g],
                    {p: self.local(x) for p, x in h.items() if x is not None})

    def const(self, value):
        return _Jet(f"({float(value)!r})", [None] * self.k, {})

    def var(self, index):
        g = [None] * self.k
        if self.order >= 1:
            g[index] = "1.0"
        return _Jet(f"_x{index}", g, {})

    def add(self, a, b, sign=1):
        nb = (lambda t: t) if sign > 0 else _neg
        op = "+" if sign > 0 else "-"
        g = [_add(a.g[j], nb(b.g[j])) for j in range(self.k)]
        h = {p: _add(a.h.get(p), nb(b.h.get(p))) for p in self.pairs}
        return self.jet(f"{a.v} {op} {b.v}", g, h)

    def neg(self, a):
        return self.jet(f"-{a.v}", [_neg(x) for x in a.g],
                        {p: _neg(x) for p, x in a.h.items()})

    def mul(self, a, b):
        g = [_add(_mul(a.v, b.g[j]), _mul(b.v, a.g[j])) for j in range(self.k)]
        h = {}
        for j, l in self.pairs:
            h[(j, l)] = _add(_mul(a.v, b.h.get((j, l))), _mul(b.v, a.h.get((j, l))),
                             _mul(a.g[j], b.g[l]), _mul(b.g[j], a.g[l]))
        return self.jet(f"{a.v}*{b.v}", g, h)

    def div(self, a, b):
        v = self.local(f"{a.v}/{b.v}")
        if b.constant:
            r = self.local(f"1.0/{b.v}")
            g = [_mul(r, x) for x in a.g]
            h = {p: _mul(r, x) for p, x in a.h.items()}
            return self.jet(v, g, h)
        r = self.local(f"1.0/{b.v}")
        g = [self.local(_mul(r, _add(a.g[j], _neg(_mul(v, b.g[j])))))
             for j in range(self.k)]
        h = {}
        if self.order >= 2:
            for j, l in self.pairs:
                h[(j, l)] = _mul(r, _add(a.h.get((j, l)), _neg(_mul(v, b.h.get((j, l)))),
                                         _neg(_mul(g[j], b.g[l])), _neg(_mul(b.g[j], g[l]))))
        return self.jet(v, g, h)

    def chain(self, a, call0, call):
        """Apply a scalar function given its value/derivative helper."""
        if self.order == 0 or a.constant:
            return self.jet(call0)
        v, d1, d2 = f"_t{self.n}", f"_t{self.n + 1}", f"_t{self.n + 2}"
        self.n += 3
        if self.order == 1:
            self.lines.append(f"    {v}, {d1} = {call}")
        else:
            self.lines.append(f"    {v}, {d1}, {d2} = {call}")
        g = [_mul(d1, x) for x in a.g]
        h = {}
        if self.order >= 2:
            for j, l in self.pairs:
                gg = _mul(a.g[j], a.g[l])
                if gg is not None:
                    gg = d2 if gg == "1.0" else f"{d2}*({gg})"
                h[(j, l)] = _add(_mul(d1, a.h.get((j, l))), gg)
        return self.jet(v, g, h)

    def func(self, name, a):
        order = max(self.order, 1)
        call0 = f"{_VALUE_FUNCS[name]}({a.v})"
        if name == "abs":
            return self.chain(a, call0, f"_abs{order}({a.v})")
        return self.chain(a, call0, f"_{name}{order}({a.v})")

    def powc(self, a, c):
        if c == 0.0:
            return self.const(1.0)
        if c == 1.0:
            return a
        if c == 2.0:
            return self.mul(a, a)
        order = max(self.order, 1)
        return self.chain(a, f"_pow0({a.v}, {c!r})", f"_pow{order}({a.v}, {c!r})")

    def emit(self, node, index):
        if isinstance(node, Const):
            return self.const(node.value)
        if isinstance(node, Var):
            return self.var(index[node.name])
        if isinstance(node, Unary):
            a = self.emit(node.arg, index)
            return self.neg(a) if node.op == "neg" else self.func(node.op, a)
        if node.op == "^" and not variables(node.right):
            return self.powc(self.emit(node.left, index),
                             float(evaluate(node.right, {})))
        a = self.emit(node.left, index)
        b = self.emit(node.right, index)
        if node.op == "+":
            return self.add(a, b)
        if node.op == "-":
            return self.add(a, b, sign=-1)
        if node.op == "*":
            return self.mul(a, b)
        if node.op == "/":
            return self.div(a, b)
        # a^b = exp(b*log(a)); requires a > 0
        return self.func("exp", self.mul(b, self.func("log", a)))


def _compile(nodes, varlist, order):
    k = len(varlist)
    em = _Emitter(k, order)
    index = {name: i for i, name in enumerate(varlist)}
    jets = [em.emit(node, index) for node in nodes]
    args = ", ".join(f"_x{i}" for i in range(k))
    head = [f"def _f(_p):"]
    if k:
        head.append(f"    {args}, = _p")
    values = "[" + ", ".join(j.v for j in jets) + "]"
    if order == 0:
        ret = f"    return {values}"
    else:
        grads = "[" + ", ".join(
            "[" + ", ".join(x if x is not None else "0.0" for x in j.g) + "]"
            for j in jets) + "]"
        if order == 1:
            ret = f"    return {values}, {grads}"
        else:
            hess = []
            for j in jets:
                rows = []
                for r in range(k):
                    row = []
                    for c in range(k):
                        x = j.h.get((min(r, c), max(r, c)))
                        row.append(x if x is not None else "0.0")
                    rows.append("[" + ", ".join(row) + "]")
                hess.append("[" + ", ".join(rows) + "]")
            ret = f"    return {values}, {grads}, [" + ", ".join(hess) + "]"
    source = "\n".join(head + em.lines + [ret]) + "\n"
    namespace = dict(_NAMESPACE)
    exec(compile(source, "<implicit_motion.expr>", "exec"), namespace)
    fn = namespace["_f"]
    fn.source = source
    return fn


def _guarded(fn):
    def call(p):
        if isinstance(p, np.ndarray):
            p = p.tolist()
        try:
            return fn(p)
        except DomainError:
            raise
        except ZeroDivisionError as exc:
            raise DomainError(f"division by zero: {exc}") from None
        except (ValueError, OverflowError) as exc:
            raise DomainError(f"math domain error: {exc}") from None
        except TypeError as exc:
            # complex intermediates from pow of negative base
            raise DomainError(str(exc)) from None
    call.source = fn.source
    return call


def evaluate(node: Node, env: dict) -> float:
    """Tree-walking reference evaluator (no derivatives)."""
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Unary):
        a = evaluate(node.arg, env)
        if node.op == "neg":
            return -a
        try:
            if node.op == "abs":
                return abs(a)
            return getattr(math, node.op)(a)
        except ValueError:
            raise DomainError(f"{node.op}({a!r}) undefined") from None
    a = evaluate(node.left, env)
    b = evaluate(node.right, env)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        if b == 0.0:
            raise DomainError("division by zero")
        return a / b
    if variables(node.right):
        if a <= 0.0:
            raise DomainError("variable exponent needs a positive base")
        return math.exp(b * math.log(a))
    try:
        return _pow0(a, b)
    except ZeroDivisionError:
        raise DomainError("zero to a negative power") from None


# ---------------------------------------------------------------------------
# public containers

@dataclass(frozen=True)
class ExprAst:
    """A parsed scalar expression and the ordered variables it ranges over."""

    root: Node
    varlist: tuple

    def __post_init__(self):
        missing = variables(self.root) - set(self.varlist)
        if missing:
            raise UnknownVariable(f"variables {sorted(missing)} not in varlist")

    @property
    def text(self) -> str:
        return to_text(self.root)

    def __str__(self):
        return self.text

    @cached_property
    def _fns(self):
        return {}

    def _fn(self, order):
        fns = self._fns
        if order not in fns:
            fns[order] = _guarded(_compile([self.root], self.varlist, order))
        return fns[order]

    def _check_point(self, point):
        if len(point) != len(self.varlist):
            raise ValueError(f"expected {len(self.varlist)} coordinates, got {len(point)}")

    def __call__(self, point) -> float:
        self._check_point(point)
        return self._fn(0)(point)[0]

    def eval2(self, point):
        """Value, gradient and Hessian at ``point``."""
        self._check_point(point)
        v, g, h = self._fn(2)(point)
        return v[0], np.array(g[0], dtype=float), np.array(h[0], dtype=float)

    def substitute(self, values: dict, varlist=None) -> "ExprAst":
        varlist = tuple(varlist) if varlist is not None else tuple(
            n for n in self.varlist if n not in values)
        return ExprAst(substitute(self.root, values), varlist)


def eval2(e: ExprAst, point):
    """Value, gradient and Hessian of ``e`` at ``point``."""
    return e.eval2(point)


class VectorExpr:
    """Several expressions over one shared variable list, evaluated together.

    Compiled functions are built lazily, one per derivative order, and are
    pure; instances can be shared between threads.
    """

    def __init__(self, components: Sequence[ExprAst]):
        components = tuple(components)
        if not components:
            raise ValueError("VectorExpr needs at least one component")
        varlist = components[0].varlist
        for c in components[1:]:
            if c.varlist != varlist:
                raise ValueError("components must share one varlist")
        self.components = components
        self.varlist = varlist
        self._fns = {}

    @classmethod
    def parse(cls, sources: Sequence[str], varlist: Sequence[str]) -> "VectorExpr":
        return cls([parse(s, varlist) for s in sources])

    @property
    def n_in(self):
        return len(self.varlist)

    @property
    def n_out(self):
        return len(self.components)

    @property
    def arity(self):
        return self.n_in, self.n_out

    def __len__(self):
        return self.n_out

    def __repr__(self):
        texts = ", ".join(c.text for c in self.components)
        return f"VectorExpr([{texts}], varlist={list(self.varlist)})"

    def _fn(self, order):
        fn = self._fns.get(order)
        if fn is None:
            fn = _guarded(_compile([c.root for c in self.components],
                                   self.varlist, order))
            self._fns[order] = fn
        return fn

    def values(self, point) -> list:
        """Component values as a plain list (fast path)."""
        return self._fn(0)(point)

    def __call__(self, point) -> np.ndarray:
        return np.array(self._fn(0)(point), dtype=float)

    def value_and_jacobian(self, point):
        v, g = self._fn(1)(point)
        return np.array(v, dtype=float), np.array(g, dtype=float).reshape(self.n_out, self.n_in)

    def jacobian(self, point) -> np.ndarray:
        return self.value_and_jacobian(point)[1]

    def eval2(self, point):
        """Values ``(n_out,)``, Jacobian ``(n_out, n_in)``, Hessians ``(n_out, n_in, n_in)``."""
        v, g, h = self._fn(2)(point)
        k = self.n_in
        return (np.array(v, dtype=float),
                np.array(g, dtype=float).reshape(self.n_out, k),
                np.array(h, dtype=float).reshape(self.n_out, k, k))

    def substitute(self, values: dict, varlist=None) -> "VectorExpr":
        return VectorExpr([c.substitute(values, varlist) for c in self.components])

    def block(self, start, stop=None) -> "VectorExpr":
        return VectorExpr(self.components[start:stop])

    @property
    def texts(self):
        return [c.text for c in self.components]
