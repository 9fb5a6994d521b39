"""Immutable expression trees over time-shifted trajectory symbols.

Symbols carry an integer delay offset: the symbol is evaluated at
``t + offset * tau``.  ``shift`` moves every symbol by a whole number of
delays, which is how "evaluate this partial at t + tau" is realised.

``simplify`` expands to a canonical sum of monomials over *kernels*
(symbols, unary functions with simplified arguments, and multi-term sums
raised to negative powers).  It is a fixed rule set, not a CAS: it decides
polynomial identities exactly but will not, e.g., prove sin^2 + cos^2 = 1.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Union

Number = Union[int, Fraction, float]

FUNCTIONS = ("sin", "cos", "exp", "log")


class EvaluationError(ValueError):
    """Raised when an expression cannot be evaluated at a binding."""


class DerivationError(ValueError):
    """Raised when a symbolic operation is applied outside its domain."""


class Kind(enum.Enum):
    TIME = "t"
    DELAY = "tau"
    STATE = "q"
    STATE_DOT = "dq"
    STATE_DDOT = "ddq"
    CONTROL = "u"
    CONTROL_DOT = "du"
    COSTATE = "p"
    COSTATE_DOT = "dp"


_KIND_ORDER = {k: i for i, k in enumerate(Kind)}


@dataclass(frozen=True)
class Symbol:
    kind: Kind
    index: int | None = None
    offset: int = 0

    def __post_init__(self):
        if self.kind in (Kind.TIME, Kind.DELAY):
            if self.index is not None or self.offset != 0:
                raise ValueError(f"{self.kind.value} carries no index and no offset")
        elif self.index is None or self.index < 1:
            raise ValueError(f"{self.kind.value} symbols need an index >= 1")

    @property
    def name(self) -> str:
        if self.kind in (Kind.TIME, Kind.DELAY):
            return self.kind.value
        base = f"{self.kind.value}{self.index}"
        if self.offset == 0:
            return base
        if self.offset < 0:
            return base + ("_tau" if self.offset == -1 else f"_tau{-self.offset}")
        return base + ("_adv" if self.offset == 1 else f"_adv{self.offset}")

    def shifted(self, k: int) -> "Symbol":
        if self.kind in (Kind.TIME, Kind.DELAY):
            return self
        return Symbol(self.kind, self.index, self.offset + k)

    def sort_key(self):
        # current instant first, then delayed, then advanced
        return (_KIND_ORDER[self.kind], self.index or 0, abs(self.offset), self.offset > 0)

    def __str__(self):
        return self.name


T = Symbol(Kind.TIME)
TAU = Symbol(Kind.DELAY)


def q(i: int, offset: int = 0) -> Symbol:
    return Symbol(Kind.STATE, i, offset)


def dq(i: int, offset: int = 0) -> Symbol:
    return Symbol(Kind.STATE_DOT, i, offset)


def ddq(i: int, offset: int = 0) -> Symbol:
    return Symbol(Kind.STATE_DDOT, i, offset)


def u(j: int, offset: int = 0) -> Symbol:
    return Symbol(Kind.CONTROL, j, offset)


def du(j: int, offset: int = 0) -> Symbol:
    return Symbol(Kind.CONTROL_DOT, j, offset)


def p(i: int, offset: int = 0) -> Symbol:
    return Symbol(Kind.COSTATE, i, offset)


def dp(i: int, offset: int = 0) -> Symbol:
    return Symbol(Kind.COSTATE_DOT, i, offset)


# ---------------------------------------------------------------------------
# Expression nodes


class Expr:
    """Base class of all expression nodes.  Nodes are frozen dataclasses."""

    __slots__ = ()

    def __add__(self, other):
        return Add((self, as_expr(other)))

    def __radd__(self, other):
        return Add((as_expr(other), self))

    def __sub__(self, other):
        return Add((self, Neg(as_expr(other))))

    def __rsub__(self, other):
        return Add((as_expr(other), Neg(self)))

    def __mul__(self, other):
        return Mul((self, as_expr(other)))

    def __rmul__(self, other):
        return Mul((as_expr(other), self))

    def __truediv__(self, other):
        return Mul((self, Pow(as_expr(other), -1)))

    def __rtruediv__(self, other):
        return Mul((as_expr(other), Pow(self, -1)))

    def __pow__(self, n):
        if not isinstance(n, int):
            raise TypeError("only integer exponents are supported")
        return Pow(self, n)

    def __neg__(self):
        return Neg(self)

    def __str__(self):
        from delaynoether.parsing import render

        return render(self)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: Number

    def __post_init__(self):
        if isinstance(self.value, bool) or not isinstance(self.value, (int, Fraction, float)):
            raise TypeError(f"bad constant {self.value!r}")
        if isinstance(self.value, int):
            object.__setattr__(self, "value", Fraction(self.value))


@dataclass(frozen=True, eq=True)
class Sym(Expr):
    symbol: Symbol


@dataclass(frozen=True, eq=True)
class Add(Expr):
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(sorted(self.children, key=expr_key)))


@dataclass(frozen=True, eq=True)
class Mul(Expr):
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(sorted(self.children, key=expr_key)))


@dataclass(frozen=True, eq=True)
class Pow(Expr):
    base: Expr
    exponent: int

    def __post_init__(self):
        if isinstance(self.exponent, bool) or not isinstance(self.exponent, int):
            raise TypeError("Pow needs an integer exponent")


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True, eq=True)
class Func(Expr):
    name: str
    arg: Expr

    def __post_init__(self):
        if self.name not in FUNCTIONS:
            raise ValueError(f"unknown function {self.name!r}")


ZERO = Const(0)
ONE = Const(1)


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, Symbol):
        return Sym(x)
    return Const(x)


def expr_key(e: Expr):
    """Total order on expressions, used for canonical child ordering."""
    if isinstance(e, Const):
        return (0, float(e.value), isinstance(e.value, float), str(e.value))
    if isinstance(e, Sym):
        return (1, e.symbol.sort_key())
    if isinstance(e, Func):
        return (2, e.name, expr_key(e.arg))
    if isinstance(e, Pow):
        return (3, expr_key(e.base), e.exponent)
    if isinstance(e, Neg):
        return (4, expr_key(e.arg))
    if isinstance(e, Mul):
        return (5, tuple(expr_key(c) for c in e.children))
    if isinstance(e, Add):
        return (6, tuple(expr_key(c) for c in e.children))
    raise TypeError(type(e))


def free_symbols(e: Expr) -> set[Symbol]:
    out: set[Symbol] = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Sym):
            out.add(node.symbol)
        elif isinstance(node, (Add, Mul)):
            stack.extend(node.children)
        elif isinstance(node, Pow):
            stack.append(node.base)
        elif isinstance(node, (Neg, Func)):
            stack.append(node.arg)
    return out


def sorted_symbols(symbols: Iterable[Symbol]) -> list[Symbol]:
    return sorted(symbols, key=Symbol.sort_key)


def transform(e: Expr, leaf: Callable[[Expr], Expr]) -> Expr:
    """Rebuild ``e`` bottom-up, replacing every Sym/Const leaf by ``leaf(node)``."""
    if isinstance(e, (Sym, Const)):
        return leaf(e)
    if isinstance(e, Add):
        return Add(tuple(transform(c, leaf) for c in e.children))
    if isinstance(e, Mul):
        return Mul(tuple(transform(c, leaf) for c in e.children))
    if isinstance(e, Pow):
        return Pow(transform(e.base, leaf), e.exponent)
    if isinstance(e, Neg):
        return Neg(transform(e.arg, leaf))
    if isinstance(e, Func):
        return Func(e.name, transform(e.arg, leaf))
    raise TypeError(type(e))


def substitute(e: Expr, mapping: Mapping[Symbol, Expr]) -> Expr:
    """Replace symbols by expressions (not simplified)."""

    def leaf(node):
        if isinstance(node, Sym) and node.symbol in mapping:
            return as_expr(mapping[node.symbol])
        return node

    return transform(e, leaf)


# ---------------------------------------------------------------------------
# simplify: canonical polynomial over kernels
#
# A polynomial is a dict  monomial -> coefficient  where a monomial is a
# sorted tuple of (kernel, exponent) pairs with non-zero exponents.


def _mono_key(mono):
    return tuple((expr_key(k), n) for k, n in mono)


def _is_zero(c) -> bool:
    return c == 0


def _poly_add(a: dict, b: dict) -> dict:
    out = dict(a)
    for m, c in b.items():
        s = out.get(m, 0) + c
        if _is_zero(s):
            out.pop(m, None)
        else:
            out[m] = s
    return out


def _mono_mul(m1, m2):
    exps: dict = {}
    for k, n in m1:
        exps[k] = exps.get(k, 0) + n
    for k, n in m2:
        exps[k] = exps.get(k, 0) + n
    return exps


def _poly_from_exps(exps: dict, coeff) -> dict:
    """Build a polynomial from kernel exponents, expanding sums that reach a
    positive power (possible after multiplying by a negative power)."""
    plain = []
    expand = []
    for k, n in exps.items():
        if n == 0:
            continue
        if isinstance(k, Add) and n > 0:
            expand.append((k, n))
        else:
            plain.append((k, n))
    mono = tuple(sorted(plain, key=lambda kn: (expr_key(kn[0]), kn[1])))
    result = {mono: coeff}
    for k, n in expand:
        result = _poly_mul(result, _poly_pow(_poly(k), n))
    return result


def _poly_mul(a: dict, b: dict) -> dict:
    out: dict = {}
    for m1, c1 in a.items():
        for m2, c2 in b.items():
            out = _poly_add(out, _poly_from_exps(_mono_mul(m1, m2), c1 * c2))
    return out


def _poly_pow(a: dict, n: int) -> dict:
    result = {(): Fraction(1)}
    base = a
    while n:
        if n & 1:
            result = _poly_mul(result, base)
        n >>= 1
        if n:
            base = _poly_mul(base, base)
    return result


def _const_of(poly: dict):
    """Return the constant value if ``poly`` is constant, else None."""
    if not poly:
        return Fraction(0)
    if len(poly) == 1 and () in poly:
        return poly[()]
    return None


def _fold_func(name: str, arg: Expr):
    if isinstance(arg, Const):
        v = arg.value
        if name in ("sin",) and v == 0:
            return Fraction(0)
        if name in ("cos", "exp") and v == 0:
            return Fraction(1)
        if name == "log" and v == 1:
            return Fraction(0)
    return None


def _poly(e: Expr) -> dict:
    if isinstance(e, Const):
        return {} if _is_zero(e.value) else {(): e.value}
    if isinstance(e, Sym):
        return {((e, 1),): Fraction(1)}
    if isinstance(e, Add):
        out: dict = {}
        for c in e.children:
            out = _poly_add(out, _poly(c))
        return out
    if isinstance(e, Mul):
        out = {(): Fraction(1)}
        for c in e.children:
            out = _poly_mul(out, _poly(c))
            if not out:
                return out
        return out
    if isinstance(e, Neg):
        return {m: -c for m, c in _poly(e.arg).items()}
    if isinstance(e, Pow):
        base = _poly(e.base)
        if e.exponent >= 0:
            return _poly_pow(base, e.exponent)
        if not base:
            raise ZeroDivisionError("negative power of zero")
        if len(base) == 1:
            ((mono, c),) = base.items()
            n = e.exponent
            exps = {k: m * n for k, m in mono}
            return _poly_from_exps(exps, c ** n if not isinstance(c, float) else c ** float(n))
        kernel = _to_expr(base)
        return {((kernel, e.exponent),): Fraction(1)}
    if isinstance(e, Func):
        arg = simplify(e.arg)
        folded = _fold_func(e.name, arg)
        if folded is not None:
            return {} if folded == 0 else {(): folded}
        return {((Func(e.name, arg), 1),): Fraction(1)}
    raise TypeError(type(e))


def _to_expr(poly: dict) -> Expr:
    if not poly:
        return ZERO
    terms = []
    for mono in sorted(poly, key=_mono_key):
        coeff = poly[mono]
        factors = [k if n == 1 else Pow(k, n) for k, n in mono]
        if coeff != 1 or not factors:
            factors.insert(0, Const(coeff))
        terms.append(factors[0] if len(factors) == 1 else Mul(tuple(factors)))
    return terms[0] if len(terms) == 1 else Add(tuple(terms))


def simplify(e: Expr) -> Expr:
    """Canonical expanded form; ``Const(0)`` when identically zero under the rules."""
    return _to_expr(_poly(e))


def is_zero(e: Expr) -> bool:
    return simplify(e) == ZERO


def polynomial_degree(e: Expr) -> int | None:
    """Total degree in symbols if ``e`` is a polynomial, else None."""
    best = 0
    for mono in _poly(e):
        deg = 0
        for k, n in mono:
            if not isinstance(k, Sym) or n < 0:
                return None
            deg += n
        best = max(best, deg)
    return best


# ---------------------------------------------------------------------------
# Differentiation and shifting


def _diff(e: Expr, s: Symbol) -> Expr:
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Sym):
        return ONE if e.symbol == s else ZERO
    if isinstance(e, Add):
        return Add(tuple(_diff(c, s) for c in e.children))
    if isinstance(e, Neg):
        return Neg(_diff(e.arg, s))
    if isinstance(e, Mul):
        kids = e.children
        terms = []
        for i, c in enumerate(kids):
            dc = _diff(c, s)
            if dc == ZERO:
                continue
            terms.append(Mul(kids[:i] + (dc,) + kids[i + 1:]))
        return Add(tuple(terms)) if terms else ZERO
    if isinstance(e, Pow):
        db = _diff(e.base, s)
        if db == ZERO or e.exponent == 0:
            return ZERO
        return Mul((Const(e.exponent), Pow(e.base, e.exponent - 1), db))
    if isinstance(e, Func):
        da = _diff(e.arg, s)
        if da == ZERO:
            return ZERO
        a = e.arg
        if e.name == "sin":
            outer = Func("cos", a)
        elif e.name == "cos":
            outer = Neg(Func("sin", a))
        elif e.name == "exp":
            outer = e
        else:
            outer = Pow(a, -1)
        return Mul((outer, da))
    raise TypeError(type(e))


def partial(e: Expr, s: Symbol) -> Expr:
    """Partial derivative with respect to the slot symbol ``s`` (simplified)."""
    return simplify(_diff(e, s))


def shift(e: Expr, k: int) -> Expr:
    """Move every symbol by ``k`` delays; ``t`` becomes ``t + k*tau``."""
    if k == 0:
        return e
    moved_time = Add((Sym(T), Mul((Const(k), Sym(TAU)))))

    def leaf(node):
        if isinstance(node, Sym):
            if node.symbol == T:
                return moved_time
            return Sym(node.symbol.shifted(k))
        return node

    return transform(e, leaf)


_DOT = {Kind.STATE: Kind.STATE_DOT, Kind.STATE_DOT: Kind.STATE_DDOT}


def total_time_derivative(e: Expr) -> Expr:
    """d/dt along a state trajectory: q -> dq -> ddq, t -> 1, tau -> 0."""
    syms = free_symbols(e)
    for s in syms:
        if s.kind == Kind.STATE_DDOT:
            raise DerivationError(f"{s.name}: expression already contains a second derivative")
        if s.kind in (Kind.CONTROL, Kind.CONTROL_DOT, Kind.COSTATE, Kind.COSTATE_DOT):
            raise DerivationError(
                f"{s.name}: total time derivative of control/costate symbols is not supported"
            )
    terms = []
    for s in sorted_symbols(syms):
        if s.kind == Kind.DELAY:
            continue
        rate = ONE if s.kind == Kind.TIME else Sym(Symbol(_DOT[s.kind], s.index, s.offset))
        terms.append(Mul((_diff(e, s), rate)))
    return simplify(Add(tuple(terms))) if terms else ZERO


# ---------------------------------------------------------------------------
# Evaluation


def _num(v) -> float:
    return float(v)


def evaluate(e: Expr, binding: Mapping[Symbol, float]) -> float:
    """IEEE double evaluation.  ``binding`` maps every symbol (``T`` for the
    current time, ``TAU`` for the delay) to a real value."""
    if isinstance(e, Const):
        return _num(e.value)
    if isinstance(e, Sym):
        try:
            return float(binding[e.symbol])
        except KeyError:
            raise EvaluationError(f"unbound symbol {e.symbol.name}") from None
    if isinstance(e, Add):
        return math.fsum(evaluate(c, binding) for c in e.children)
    if isinstance(e, Mul):
        out = 1.0
        for c in e.children:
            out *= evaluate(c, binding)
        return out
    if isinstance(e, Neg):
        return -evaluate(e.arg, binding)
    if isinstance(e, Pow):
        b = evaluate(e.base, binding)
        if b == 0.0 and e.exponent < 0:
            raise EvaluationError("division by zero")
        return b ** e.exponent
    if isinstance(e, Func):
        a = evaluate(e.arg, binding)
        if e.name == "log":
            if a <= 0.0:
                raise EvaluationError(f"log of non-positive value {a!r}")
            return math.log(a)
        try:
            return getattr(math, e.name)(a)
        except OverflowError:
            raise EvaluationError(f"{e.name} overflow at {a!r}") from None
    raise TypeError(type(e))


eval_expr = evaluate


def _code(e: Expr, names: Mapping[Symbol, str]) -> str:
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Sym):
        return names[e.symbol]
    if isinstance(e, Add):
        return "(" + " + ".join(_code(c, names) for c in e.children) + ")"
    if isinstance(e, Mul):
        return "(" + " * ".join(_code(c, names) for c in e.children) + ")"
    if isinstance(e, Neg):
        return "(-" + _code(e.arg, names) + ")"
    if isinstance(e, Pow):
        if e.exponent < 0:
            return f"(1.0 / ({_code(e.base, names)}) ** {-e.exponent})"
        return f"(({_code(e.base, names)}) ** {e.exponent})"
    if isinstance(e, Func):
        return f"_np.{e.name}({_code(e.arg, names)})"
    raise TypeError(type(e))


def compile_expr(e: Expr, symbols: Iterable[Symbol] | None = None):
    """Vectorised evaluator.

    Returns ``f(env)`` where ``env`` maps symbols to floats or equal-length
    numpy arrays; the result is broadcast to the common shape.  Faster than
    :func:`evaluate` on grids, but with numpy's NaN/inf semantics instead of
    raising.
    """
    import numpy as np

    syms = sorted_symbols(free_symbols(e) if symbols is None else symbols)
    names = {s: f"_a{i}" for i, s in enumerate(syms)}
    args = ", ".join(names[s] for s in syms)
    src = f"lambda {args}: {_code(e, names)}" if syms else f"lambda: {_code(e, names)}"
    raw = eval(src, {"_np": np})  # noqa: S307 - source generated from our own tree

    def f(env: Mapping[Symbol, object]):
        try:
            vals = [env[s] for s in syms]
        except KeyError as exc:
            raise EvaluationError(f"unbound symbol {exc.args[0].name}") from None
        shape = np.broadcast_shapes(*(np.shape(v) for v in vals)) if vals else ()
        with np.errstate(all="ignore"):
            out = raw(*vals)
        return np.broadcast_to(np.asarray(out, dtype=float), shape)

    f.symbols = tuple(syms)
    return f
