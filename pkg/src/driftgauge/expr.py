"""Real functions of one variable given as text.

Grammar (whitespace insignificant)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' expo)?
    expo   := '-' expo | power            # right-associative
    atom   := NUMBER | 'x' | 'pi' | 'e' | FUNC '(' expr ')' | '(' expr ')'
    FUNC   := exp | log | sqrt | abs | sign

Exponents must not depend on ``x``.  ``sign`` exists so that the derivative
of ``abs`` can be printed and re-parsed.

Expressions evaluate on floats or numpy arrays.  Domain violations (log or
sqrt of a negative number, division by zero, overflow) raise
:class:`DomainError` instead of producing NaN or inf.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Neg",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Pow",
    "Call",
    "IntExp",
    "X",
    "ParseError",
    "DomainError",
    "parse",
    "evaluate",
    "differentiate",
    "simplify",
    "as_power_sum",
    "from_power_sum",
    "tidy",
    "exp_of_integral",
    "is_constant",
    "strip_constant_factor",
]

FUNCTIONS = ("exp", "log", "sqrt", "abs", "sign")
CONSTANTS = {"pi": math.pi, "e": math.e}


class ParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class DomainError(ArithmeticError):
    """Evaluation left the domain of a subexpression.

    ``kind`` is one of ``"domain"``, ``"zero-division"``, ``"overflow"``.
    """

    def __init__(self, subexpr: "Expr", x, kind: str = "domain"):
        self.subexpr = subexpr
        self.x = float(x)
        self.kind = kind
        super().__init__(f"{kind} error in {subexpr} at x={self.x!r}")


# --------------------------------------------------------------------------
# AST


class Expr:
    """Immutable expression node; call it to evaluate."""

    __slots__ = ()

    def __call__(self, x):
        return evaluate(self, x)

    def __str__(self) -> str:
        return _print(self, 0)

    # arithmetic builds trees, so model code can compose formulas
    def __add__(self, other):
        return Add(self, _coerce(other))

    def __radd__(self, other):
        return Add(_coerce(other), self)

    def __sub__(self, other):
        return Sub(self, _coerce(other))

    def __rsub__(self, other):
        return Sub(_coerce(other), self)

    def __mul__(self, other):
        return Mul(self, _coerce(other))

    def __rmul__(self, other):
        return Mul(_coerce(other), self)

    def __truediv__(self, other):
        return Div(self, _coerce(other))

    def __rtruediv__(self, other):
        return Div(_coerce(other), self)

    def __neg__(self):
        return Neg(self)

    def __pow__(self, k):
        return Pow(self, _coerce(k))

    def derivative(self) -> "Expr":
        return differentiate(self)


def _coerce(v) -> Expr:
    if isinstance(v, Expr):
        return v
    return Const(float(v))


@dataclass(frozen=True, eq=True, repr=True)
class Const(Expr):
    value: float


@dataclass(frozen=True, eq=True, repr=True)
class Var(Expr):
    pass


@dataclass(frozen=True, eq=True, repr=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True, eq=True, repr=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True, repr=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True, repr=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True, repr=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True, repr=True)
class Pow(Expr):
    base: Expr
    exponent: Expr  # x-free


@dataclass(frozen=True, eq=True, repr=True)
class Call(Expr):
    name: str
    arg: Expr


@dataclass(frozen=True, eq=True, repr=True)
class IntExp(Expr):
    """``exp(factor * integral_{origin}^{x} integrand(y) dy)`` by quadrature.

    Fallback for scale densities and measure-change functions whose inner
    integral has no recognised closed form.  Not part of the text grammar.
    """

    integrand: Expr
    factor: float
    origin: float


X = Var()

_BINARY = (Add, Sub, Mul, Div)


def children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, _BINARY):
        return (e.left, e.right)
    if isinstance(e, Pow):
        return (e.base, e.exponent)
    if isinstance(e, (Neg, Call)):
        return (e.arg,)
    if isinstance(e, IntExp):
        return (e.integrand,)
    return ()


def is_constant(e: Expr) -> bool:
    if isinstance(e, (Var, IntExp)):
        return False
    return all(is_constant(c) for c in children(e))


# --------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), _byte_offset(text, start)))
        pos = m.end()
    tokens.append(("end", "", len(text.encode("utf-8"))))
    return tokens


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, off = self.take()
        if val != value:
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}", off)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {val!r}", off)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            e = Mul(e, rhs) if op == "*" else Div(e, rhs)
        return e

    def unary(self) -> Expr:
        if self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[1] == "^":
            off = self.take()[2]
            expo = self.expo()
            if not is_constant(expo):
                raise ParseError("exponent must not depend on x", off)
            return Pow(base, expo)
        return base

    def expo(self) -> Expr:
        if self.peek()[1] == "-":
            self.take()
            return Neg(self.expo())
        return self.power()

    def atom(self) -> Expr:
        kind, val, off = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "id":
            if val == "x":
                return X
            if val in CONSTANTS:
                return Const(CONSTANTS[val])
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            raise ParseError(f"unknown identifier {val!r}", off)
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ParseError(f"unexpected {val or 'end of input'!r}", off)


def parse(text: str) -> Expr:
    """Parse ``text`` into an expression tree."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    return _Parser(text).parse()


# --------------------------------------------------------------------------
# printing

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}


def _fmt_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _print(e: Expr, min_prec: int) -> str:
    if isinstance(e, Const):
        s = _fmt_number(e.value)
        if e.value < 0 or math.copysign(1.0, e.value) < 0:
            return f"({s})"
        return s
    if isinstance(e, Var):
        return "x"
    if isinstance(e, Call):
        return f"{e.name}({_print(e.arg, 0)})"
    if isinstance(e, IntExp):
        return f"intexp({_print(e.integrand, 0)}; {e.factor!r}; {e.origin!r})"
    prec = _PREC[type(e)]
    if isinstance(e, Neg):
        s = "-" + _print(e.arg, 3)
    elif isinstance(e, Pow):
        s = f"{_print(e.base, 5)}^{_print(e.exponent, 5)}"
    else:
        sym = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(e)]
        sep = f" {sym} " if prec == 1 else sym
        s = _print(e.left, prec) + sep + _print(e.right, prec + 1)
    return f"({s})" if prec < min_prec else s



# --------------------------------------------------------------------------
# evaluation


def evaluate(e: Expr, x):
    """Evaluate ``e`` at a float or an array of floats."""
    scalar = np.ndim(x) == 0
    xa = np.asarray(x, dtype=float)
    with np.errstate(all="ignore"):
        out = _ev(e, xa)
    out = np.broadcast_to(out, xa.shape)
    if scalar:
        return float(out)
    return np.array(out, dtype=float)


def _first_bad(mask, x):
    mask = np.broadcast_to(mask, np.shape(x)) if np.ndim(x) else mask
    if np.ndim(x) == 0:
        return float(x)
    idx = np.flatnonzero(np.asarray(mask))
    return float(np.asarray(x).flat[idx[0]]) if idx.size else float("nan")


def _check(e: Expr, val, x):
    val = np.asarray(val, dtype=float)
    bad = ~np.isfinite(val)
    if bad.any():
        raise DomainError(e, _first_bad(bad, x), "overflow")
    return val


def _ev(e: Expr, x):
    if isinstance(e, Const):
        return np.float64(e.value)
    if isinstance(e, Var):
        return x
    if isinstance(e, Neg):
        return -_ev(e.arg, x)
    if isinstance(e, Add):
        return _check(e, _ev(e.left, x) + _ev(e.right, x), x)
    if isinstance(e, Sub):
        return _check(e, _ev(e.left, x) - _ev(e.right, x), x)
    if isinstance(e, Mul):
        return _check(e, _ev(e.left, x) * _ev(e.right, x), x)
    if isinstance(e, Div):
        num = _ev(e.left, x)
        den = _ev(e.right, x)
        zero = np.asarray(den) == 0
        if zero.any():
            raise DomainError(e, _first_bad(zero, x), "zero-division")
        return _check(e, num / den, x)
    if isinstance(e, Pow):
        base = np.asarray(_ev(e.base, x))
        k = float(_ev(e.exponent, x))
        if not k.is_integer():
            neg = base < 0
            if neg.any():
                raise DomainError(e, _first_bad(neg, x))
        if k < 0:
            zero = base == 0
            if zero.any():
                raise DomainError(e, _first_bad(zero, x), "zero-division")
        return _check(e, np.power(base, k), x)
    if isinstance(e, Call):
        u = np.asarray(_ev(e.arg, x))
        name = e.name
        if name == "exp":
            return _check(e, np.exp(u), x)
        if name == "log":
            bad = u <= 0
            if bad.any():
                raise DomainError(e, _first_bad(bad, x))
            return np.log(u)
        if name == "sqrt":
            bad = u < 0
            if bad.any():
                raise DomainError(e, _first_bad(bad, x))
            return np.sqrt(u)
        if name == "abs":
            return np.abs(u)
        if name == "sign":
            bad = u == 0
            if bad.any():
                raise DomainError(e, _first_bad(bad, x))
            return np.sign(u)
        raise ValueError(f"unknown function {name}")
    if isinstance(e, IntExp):
        return _check(e, _eval_intexp(e, x), x)
    raise TypeError(f"not an expression node: {e!r}")


def _eval_intexp(e: IntExp, x):
    from .quad import integrate_between

    xs = np.atleast_1d(np.asarray(x, dtype=float))
    flat = xs.ravel()
    order = np.argsort(flat)
    srt = flat[order]
    integral = np.empty_like(srt)
    # accumulate piecewise outwards from the origin on each side
    f = e.integrand
    right = np.flatnonzero(srt >= e.origin)
    prev, acc = e.origin, 0.0
    for i in right:
        acc += integrate_between(f, prev, srt[i])
        prev = srt[i]
        integral[i] = acc
    left = np.flatnonzero(srt < e.origin)[::-1]
    prev, acc = e.origin, 0.0
    for i in left:
        acc += integrate_between(f, prev, srt[i])
        prev = srt[i]
        integral[i] = acc
    out = np.empty_like(flat)
    out[order] = np.exp(e.factor * integral)
    return out.reshape(xs.shape) if np.ndim(x) else out[0]


# --------------------------------------------------------------------------
# simplification and differentiation


def _is_c(e: Expr, v: float | None = None) -> bool:
    return isinstance(e, Const) and (v is None or e.value == v)


def simplify(e: Expr) -> Expr:
    """Fold constants and drop neutral elements, bottom-up."""
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, IntExp):
        return IntExp(simplify(e.integrand), e.factor, e.origin)
    if is_constant(e):
        try:
            v = float(evaluate(e, 0.0))
        except DomainError:
            v = None
        if v is not None:
            return Const(v)
    if isinstance(e, Neg):
        a = simplify(e.arg)
        if isinstance(a, Const):
            return Const(-a.value)
        if isinstance(a, Neg):
            return a.arg
        return Neg(a)
    if isinstance(e, Call):
        return Call(e.name, simplify(e.arg))
    if isinstance(e, Pow):
        b = simplify(e.base)
        k = simplify(e.exponent)
        if _is_c(k, 1.0):
            return b
        if _is_c(k, 0.0):
            return Const(1.0)
        if isinstance(b, Pow) and isinstance(k, Const) and isinstance(b.exponent, Const):
            # (u^a)^k = u^(a k) only when no sign information is lost
            if k.value.is_integer() or not b.exponent.value.is_integer() or b.exponent.value % 2 == 1:
                return Pow(b.base, Const(b.exponent.value * k.value))
        return Pow(b, k)
    l, r = simplify(e.left), simplify(e.right)
    if isinstance(e, Add):
        if _is_c(l, 0.0):
            return r
        if _is_c(r, 0.0):
            return l
        if isinstance(r, Neg):
            return Sub(l, r.arg)
        return Add(l, r)
    if isinstance(e, Sub):
        if _is_c(r, 0.0):
            return l
        if _is_c(l, 0.0):
            return simplify(Neg(r))
        if l == r:
            return Const(0.0)
        return Sub(l, r)
    if isinstance(e, Mul):
        if _is_c(l, 0.0) or _is_c(r, 0.0):
            return Const(0.0)
        if _is_c(l, 1.0):
            return r
        if _is_c(r, 1.0):
            return l
        if isinstance(r, Const) and not isinstance(l, Const):
            l, r = r, l
        if isinstance(l, Const) and isinstance(r, Mul) and isinstance(r.left, Const):
            return simplify(Mul(Const(l.value * r.left.value), r.right))
        if isinstance(l, Const) and isinstance(r, Neg):
            return Mul(Const(-l.value), r.arg)
        return Mul(l, r)
    if isinstance(e, Div):
        if _is_c(l, 0.0):
            return Const(0.0)
        if _is_c(r, 1.0):
            return l
        if isinstance(r, Const) and r.value != 0:
            return simplify(Mul(Const(1.0 / r.value), l))
        return Div(l, r)
    raise TypeError(e)


def differentiate(e: Expr) -> Expr:
    """Symbolic d/dx, simplified."""
    return simplify(_d(e))


def _d(e: Expr) -> Expr:
    if isinstance(e, Const):
        return Const(0.0)
    if isinstance(e, Var):
        return Const(1.0)
    if is_constant(e):
        return Const(0.0)
    if isinstance(e, Neg):
        return Neg(_d(e.arg))
    if isinstance(e, Add):
        return Add(_d(e.left), _d(e.right))
    if isinstance(e, Sub):
        return Sub(_d(e.left), _d(e.right))
    if isinstance(e, Mul):
        return Add(Mul(_d(e.left), e.right), Mul(e.left, _d(e.right)))
    if isinstance(e, Div):
        u, v = e.left, e.right
        return Div(Sub(Mul(_d(u), v), Mul(u, _d(v))), Pow(v, Const(2.0)))
    if isinstance(e, Pow):
        k = float(evaluate(e.exponent, 0.0))
        return Mul(Mul(Const(k), Pow(e.base, Const(k - 1.0))), _d(e.base))
    if isinstance(e, Call):
        u = e.arg
        du = _d(u)
        if e.name == "exp":
            return Mul(e, du)
        if e.name == "log":
            return Div(du, u)
        if e.name == "sqrt":
            return Div(du, Mul(Const(2.0), e))
        if e.name == "abs":
            return Mul(Call("sign", u), du)
        if e.name == "sign":
            # zero away from the origin of the argument, undefined at it
            return Mul(Const(0.0), Call("sign", u))
    if isinstance(e, IntExp):
        return Mul(Mul(Const(e.factor), e.integrand), e)
    raise TypeError(e)


# --------------------------------------------------------------------------
# sums of powers  c_1 x^p_1 + ... + c_n x^p_n

PowerSum = dict  # exponent -> coefficient

_MAX_TERMS = 24


def as_power_sum(e: Expr, expand: bool = True) -> PowerSum | None:
    """Return ``{p: c}`` with ``e(x) == sum c x^p`` for x > 0, or None.

    Only forms that are exact identities on the whole positive half-line
    are recognised; anything involving exp, log or abs returns None.  With
    ``expand=False`` products of two multi-term sums are refused, since
    expanding them can cancel catastrophically near their roots.
    """
    out = _ps(e, expand)
    if out is None:
        return None
    return {p: c for p, c in out.items() if c != 0.0}


def _ps(e: Expr, expand: bool = True):
    if is_constant(e):
        try:
            return {0.0: float(evaluate(e, 0.0))}
        except DomainError:
            return None
    if isinstance(e, Var):
        return {1.0: 1.0}
    if isinstance(e, Neg):
        a = _ps(e.arg, expand)
        return None if a is None else {p: -c for p, c in a.items()}
    if isinstance(e, (Add, Sub)):
        a, b = _ps(e.left, expand), _ps(e.right, expand)
        if a is None or b is None:
            return None
        s = -1.0 if isinstance(e, Sub) else 1.0
        out = dict(a)
        for p, c in b.items():
            out[p] = out.get(p, 0.0) + s * c
        return out if len(out) <= _MAX_TERMS else None
    if isinstance(e, Mul):
        a, b = _ps(e.left, expand), _ps(e.right, expand)
        if a is None or b is None:
            return None
        return _ps_mul(a, b, expand)
    if isinstance(e, Div):
        a, b = _ps(e.left, expand), _ps(e.right, expand)
        if a is None or b is None:
            return None
        b = {p: c for p, c in b.items() if c != 0.0}
        if len(b) != 1:
            return None
        (q, d), = b.items()
        return {p - q: c / d for p, c in a.items()}
    if isinstance(e, Pow):
        k = float(evaluate(e.exponent, 0.0))
        a = _ps(e.base, expand)
        if a is None:
            return None
        a = {p: c for p, c in a.items() if c != 0.0}
        if len(a) == 1:
            (p, c), = a.items()
            if c < 0 and not k.is_integer():
                return None
            if p != 0 and p % 2 == 0 and not k.is_integer():
                return None  # (x^2)^0.5 is |x|, not x
            return {p * k: c ** k}
        if k.is_integer() and 0 <= k <= 6:
            out = {0.0: 1.0}
            for _ in range(int(k)):
                out = _ps_mul(out, a, expand)
                if out is None:
                    return None
            return out
        return None
    if isinstance(e, Call) and e.name == "sqrt":
        return _ps(Pow(e.arg, Const(0.5)), expand)
    return None


def _ps_mul(a, b, expand=True):
    if not expand and sum(c != 0 for c in a.values()) > 1 and sum(c != 0 for c in b.values()) > 1:
        return None
    out: dict = {}
    for p, c in a.items():
        for q, d in b.items():
            out[p + q] = out.get(p + q, 0.0) + c * d
    return out if len(out) <= _MAX_TERMS else None


def from_power_sum(ps: PowerSum) -> Expr:
    terms = []
    for p in sorted(ps):
        c = ps[p]
        if c == 0.0:
            continue
        if p == 0.0:
            terms.append(Const(c))
        elif p == 1.0:
            terms.append(X if c == 1.0 else Mul(Const(c), X))
        else:
            pw = Pow(X, Const(p))
            terms.append(pw if c == 1.0 else Mul(Const(c), pw))
    if not terms:
        return Const(0.0)
    out = terms[0]
    for t in terms[1:]:
        out = Add(out, t)
    return out


def _drop_small(ps: PowerSum, drop_below: float) -> PowerSum:
    if ps and drop_below > 0:
        big = max(abs(c) for c in ps.values())
        ps = {p: c for p, c in ps.items() if abs(c) > drop_below * big}
    return ps


def tidy(e: Expr, drop_below: float = 0.0) -> Expr:
    """Canonical form when recognisable, otherwise simplify.

    Sums of powers become ``c1 x^p1 + ...``; products and quotients of
    those with exponentials of power sums become ``N(x)/D(x) * exp(P(x))``
    so that exponentials cancel symbolically instead of overflowing.
    Terms with ``|c| <= drop_below * max|c|`` are discarded; this lets
    numerically cancelling generators collapse to exactly zero.
    """
    ps = as_power_sum(e, expand=False)
    if ps is not None:
        return from_power_sum(_drop_small(ps, drop_below))
    er = as_exp_rational(e, expand=False)
    if er is not None:
        num, den, ex = er
        return from_exp_rational(_drop_small(num, drop_below), den, ex)
    return simplify(e)


ExpRational = tuple  # (numerator PowerSum, denominator PowerSum | None, exponent PowerSum)


def as_exp_rational(e: Expr, expand: bool = True) -> ExpRational | None:
    """Return ``(N, D, P)`` with ``e == N/D * exp(P)`` for x > 0, or None."""
    out = _er(e, expand)
    if out is None:
        return None
    num, den, ex = out
    num = {p: c for p, c in num.items() if c != 0.0}
    ex = {p: c for p, c in ex.items() if c != 0.0}
    if den is not None:
        den = {p: c for p, c in den.items() if c != 0.0}
        if not den:
            return None
        if len(den) == 1:
            (q, d), = den.items()
            num = {p - q: c / d for p, c in num.items()}
            den = None
    k0 = ex.pop(0.0, 0.0)
    if k0 != 0.0:
        if abs(k0) < 700:
            f = math.exp(k0)
            num = {p: c * f for p, c in num.items()}
        else:
            ex[0.0] = k0
    return num, den, ex


def _er(e: Expr, expand: bool = True):
    ps = _ps(e, expand)
    if ps is not None:
        return ps, None, {}
    if isinstance(e, Call) and e.name == "exp":
        u = _ps(e.arg, expand)
        return None if u is None else ({0.0: 1.0}, None, u)
    if isinstance(e, Neg):
        a = _er(e.arg, expand)
        return None if a is None else ({p: -c for p, c in a[0].items()}, a[1], a[2])
    if isinstance(e, (Mul, Div)):
        a, b = _er(e.left, expand), _er(e.right, expand)
        if a is None or b is None:
            return None
        if isinstance(e, Mul):
            num = _ps_mul(a[0], b[0], expand)
            den = _ps_mul_opt(a[1], b[1], expand)
            ex = _exp_add(a[2], b[2], 1.0)
        else:
            bn = {p: c for p, c in b[0].items() if c != 0.0}
            if len(bn) == 1:
                (q, d), = bn.items()
                num = {p - q: c / d for p, c in a[0].items()}
                den = a[1]
            else:
                num = a[0]
                den = _ps_mul_opt(a[1], bn, expand)
            if b[1] is not None:
                num = _ps_mul(num, b[1], expand)
            ex = _exp_add(a[2], b[2], -1.0)
        if num is None or (den is None and (a[1] is not None or b[1] is not None)):
            return None  # term cap hit
        return num, den, ex
    if isinstance(e, (Add, Sub)):
        a, b = _er(e.left, expand), _er(e.right, expand)
        if a is None or b is None or a[1] is not None or b[1] is not None or a[2] != b[2]:
            return None
        s = -1.0 if isinstance(e, Sub) else 1.0
        return _ps_add(a[0], b[0], s), None, a[2]
    if isinstance(e, Call) and e.name == "sqrt":
        return _er(Pow(e.arg, Const(0.5)), expand)
    if isinstance(e, Pow):
        k = float(evaluate(e.exponent, 0.0))
        a = _er(e.base, expand)
        if a is None:
            return None
        num, den, ex = a
        ex = {p: c * k for p, c in ex.items()}
        if den is None:
            pw = _ps(Pow(from_power_sum(num), Const(k)), expand)
            return None if pw is None else (pw, None, ex)
        if k.is_integer() and abs(k) <= 6:
            n, d = (num, den) if k >= 0 else (den, num)
            pn, pd = {0.0: 1.0}, {0.0: 1.0}
            for _ in range(int(abs(k))):
                pn, pd = _ps_mul(pn, n, expand), _ps_mul(pd, d, expand)
                if pn is None or pd is None:
                    return None
            return pn, pd, ex
    return None


def _ps_add(a, b, s):
    out = dict(a)
    for p, c in b.items():
        out[p] = out.get(p, 0.0) + s * c
    return out


def _exp_add(a, b, s):
    # exponents that cancel up to rounding must cancel exactly, or a stray
    # exp(1e-15 x) survives in densities
    out = dict(a)
    for p, c in b.items():
        v = out.get(p, 0.0) + s * c
        out[p] = 0.0 if abs(v) <= 1e-12 * max(abs(c), abs(out.get(p, 0.0))) else v
    return out


def _ps_mul_opt(a, b, expand=True):
    if a is None:
        return b
    if b is None:
        return a
    return _ps_mul(a, b, expand)


def from_exp_rational(num: PowerSum, den: PowerSum | None, ex: PowerSum) -> Expr:
    out = from_power_sum(num)
    if den is not None:
        out = Div(out, from_power_sum(den))
    if ex and num:
        e = Call("exp", from_power_sum(ex))
        out = e if _is_c(out, 1.0) else Mul(out, e)
    return out


def strip_constant_factor(e: Expr) -> Expr:
    """Remove top-level positive constant multipliers and divisors."""
    while True:
        if isinstance(e, Mul) and is_constant(e.left) and not is_constant(e.right):
            e = e.right
        elif isinstance(e, Mul) and is_constant(e.right) and not is_constant(e.left):
            e = e.left
        elif isinstance(e, Div) and is_constant(e.right) and not is_constant(e.left):
            e = e.left
        else:
            return e


def exp_of_integral(integrand: Expr, factor: float, origin: float) -> Expr:
    """``exp(factor * int_origin^x integrand)`` in closed form when possible.

    The closed form covers integrands that are sums of powers; a ``1/x``
    term contributes ``(x/origin)^(factor*c)``.  Anything else falls back to
    an :class:`IntExp` node evaluated by quadrature.
    """
    ps = as_power_sum(integrand)
    if ps is None:
        return IntExp(simplify(integrand), float(factor), float(origin))
    log_coef = factor * ps.get(-1.0, 0.0)
    poly = {}
    shift = 0.0
    for p, c in ps.items():
        if p == -1.0:
            continue
        q = p + 1.0
        if origin < 0 and not q.is_integer():
            return IntExp(simplify(integrand), float(factor), float(origin))
        poly[q] = poly.get(q, 0.0) + factor * c / q
        shift += factor * c / q * origin ** q
    parts = []
    if log_coef != 0.0:
        if origin == 0:
            return IntExp(simplify(integrand), float(factor), float(origin))
        if origin == 1.0:
            parts.append(Pow(X, Const(log_coef)))
        else:
            parts.append(Pow(Div(X, Const(origin)), Const(log_coef)))
    if poly:
        arg = from_power_sum(poly)
        if shift != 0.0:
            arg = Sub(arg, Const(shift))
        parts.append(Call("exp", arg))
    if not parts:
        return Const(1.0)
    out = parts[0]
    for p in parts[1:]:
        out = Mul(out, p)
    return out


def lambdify(e: Expr) -> Callable:
    return lambda x: evaluate(e, x)
