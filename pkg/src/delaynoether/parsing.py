"""Infix grammar for expressions, and the inverse renderer.

Grammar (precedence low to high)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ['^' ['-'] INT]
    primary := NUMBER | NUMBER '/' NUMBER (no spaces: rational literal)
             | IDENT | FUNC '(' expr ')' | '(' expr ')'

Identifiers: ``t``, ``tau``, ``q<i>``, ``dq<i>``, ``ddq<i>``, ``u<j>``,
``du<j>``, ``p<i>``, ``dp<i>``, each optionally suffixed ``_tau[k]`` or
``_adv[k]`` for delayed / advanced instances.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

from delaynoether.symexpr import (
    FUNCTIONS,
    TAU,
    Add,
    Const,
    Expr,
    Func,
    Kind,
    Mul,
    Neg,
    Pow,
    Sym,
    Symbol,
    T,
)


class ExprSyntaxError(ValueError):
    """Syntax or identifier error; ``column`` is 1-based within the source."""

    def __init__(self, message: str, column: int, category: str = "syntax"):
        super().__init__(f"column {column}: {message}")
        self.column = column
        self.category = category
        self.detail = message


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^()]))"
)

_IDENT = re.compile(r"^(ddq|dq|du|dp|q|u|p)(\d+)(?:_(tau|adv)(\d*))?$")
_PREFIX_KIND = {
    "q": Kind.STATE,
    "dq": Kind.STATE_DOT,
    "ddq": Kind.STATE_DDOT,
    "u": Kind.CONTROL,
    "du": Kind.CONTROL_DOT,
    "p": Kind.COSTATE,
    "dp": Kind.COSTATE_DOT,
}


@dataclass(frozen=True)
class Token:
    kind: str  # num | ident | op | end
    text: str
    start: int  # 0-based
    end: int


def tokenize(src: str) -> list[Token]:
    tokens = []
    pos = 0
    while True:
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            rest = src[pos:]
            if rest.strip() == "":
                break
            col = pos + (len(rest) - len(rest.lstrip())) + 1
            raise ExprSyntaxError(f"unexpected character {src[col - 1]!r}", col)
        kind = m.lastgroup
        tokens.append(Token(kind, m.group(kind), m.start(kind), m.end(kind)))
        pos = m.end()
    tokens.append(Token("end", "", len(src), len(src)))
    return tokens


def symbol_from_name(name: str) -> Symbol | None:
    if name == "t":
        return T
    if name == "tau":
        return TAU
    m = _IDENT.match(name)
    if m is None:
        return None
    prefix, idx, which, k = m.groups()
    index = int(idx)
    if index < 1:
        return None
    offset = 0
    if which:
        step = int(k) if k else 1
        if step < 1:
            return None
        offset = -step if which == "tau" else step
    return Symbol(_PREFIX_KIND[prefix], index, offset)


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.tokens = tokenize(src)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> Token:
        if self.tok.text != text or self.tok.kind not in ("op",):
            self.fail(f"expected {text!r}")
        return self.advance()

    def fail(self, message: str, tok: Token | None = None, category: str = "syntax"):
        tok = tok or self.tok
        found = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ExprSyntaxError(f"{message}, found {found}", tok.start + 1, category)

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok.kind != "end":
            self.fail("unexpected token")
        return e

    def expr(self) -> Expr:
        terms = [self.term()]
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            t = self.term()
            terms.append(t if op == "+" else Neg(t))
        return terms[0] if len(terms) == 1 else Add(tuple(terms))

    def term(self) -> Expr:
        factors = [self.unary()]
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            f = self.unary()
            factors.append(f if op == "*" else Pow(f, -1))
        return factors[0] if len(factors) == 1 else Mul(tuple(factors))

    def unary(self) -> Expr:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            sign = 1
            parens = False
            if self.tok.kind == "op" and self.tok.text == "(":
                parens = True
                self.advance()
            if self.tok.kind == "op" and self.tok.text == "-":
                sign = -1
                self.advance()
            tok = self.tok
            if tok.kind != "num" or not tok.text.isdigit():
                self.fail("exponent must be an integer literal")
            self.advance()
            if parens:
                self.expect(")")
            return Pow(base, sign * int(tok.text))
        return base

    def primary(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            value = Fraction(tok.text)
            # a/b written without spaces is a rational literal
            nxt = self.tok
            if (
                tok.text.isdigit()
                and nxt.kind == "op"
                and nxt.text == "/"
                and nxt.start == tok.end
                and self.tokens[self.i + 1].kind == "num"
                and self.tokens[self.i + 1].text.isdigit()
                and self.tokens[self.i + 1].start == nxt.end
            ):
                self.advance()
                den = self.advance()
                if int(den.text) == 0:
                    self.fail("zero denominator", den)
                value = Fraction(int(tok.text), int(den.text))
            return Const(value)
        if tok.kind == "ident":
            self.advance()
            if tok.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Func(tok.text, arg)
            sym = symbol_from_name(tok.text)
            if sym is None:
                raise ExprSyntaxError(
                    f"unknown identifier {tok.text!r}", tok.start + 1, "identifier"
                )
            return Sym(sym)
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            e = self.expr()
            self.expect(")")
            return e
        self.fail("expected a number, identifier or '('")


def parse_expr(src: str) -> Expr:
    """Parse infix text into a (non-simplified) expression."""
    return _Parser(src).parse()


# ---------------------------------------------------------------------------
# Rendering


def _const_text(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if v.denominator == 1:
        return str(v.numerator)
    return f"{v.numerator}/{v.denominator}"


def _is_negative_const(e: Expr) -> bool:
    return isinstance(e, Const) and e.value < 0


def _atom(e: Expr) -> str:
    """Render ``e`` so it can stand as a power base."""
    if isinstance(e, Const):
        v = e.value
        if v < 0 or isinstance(v, float) or v.denominator != 1:
            return f"({_const_text(v)})"
        return _const_text(v)
    if isinstance(e, (Sym, Func)):
        return render(e)
    return f"({render(e)})"


def _factor(e: Expr) -> str:
    """Render ``e`` as one factor of a product."""
    if isinstance(e, (Add, Mul, Neg)) or _is_negative_const(e):
        return f"({render(e)})"
    if isinstance(e, Const) and isinstance(e.value, Fraction) and e.value.denominator != 1:
        return _const_text(e.value)
    return render(e)


def _negated_term(e: Expr) -> Expr | None:
    """If ``e`` is a product led by a negative constant, return its negation."""
    if isinstance(e, Mul) and _is_negative_const(e.children[0]):
        c = -e.children[0].value
        rest = e.children[1:]
        if c == 1:
            return rest[0] if len(rest) == 1 else Mul(rest)
        return Mul((Const(c),) + rest)
    if _is_negative_const(e):
        return Const(-e.value)
    return None


def render(e: Expr) -> str:
    if isinstance(e, Const):
        return _const_text(e.value)
    if isinstance(e, Sym):
        return e.symbol.name
    if isinstance(e, Func):
        return f"{e.name}({render(e.arg)})"
    if isinstance(e, Pow):
        return f"{_atom(e.base)}^{e.exponent}"
    if isinstance(e, Neg):
        inner = e.arg
        if isinstance(inner, (Add, Mul, Neg)) or _is_negative_const(inner):
            return f"-({render(inner)})"
        return "-" + render(inner)
    if isinstance(e, Mul):
        neg = _negated_term(e)
        if neg is not None:
            return "-" + (render(neg) if isinstance(neg, Mul) else _factor(neg))
        return "*".join(_factor(c) for c in e.children)
    if isinstance(e, Add):
        parts = []
        for i, c in enumerate(e.children):
            sign = "+"
            if isinstance(c, Add):
                text = f"({render(c)})"
            elif isinstance(c, Neg):
                sign = "-"
                inner = c.arg
                wrap = isinstance(inner, (Add, Neg)) or _is_negative_const(inner)
                # a leading "-a*b" would re-parse as (-a)*b
                wrap = wrap or (i == 0 and isinstance(inner, Mul))
                text = f"({render(inner)})" if wrap else render(inner)
            else:
                neg = _negated_term(c)
                if neg is not None:
                    sign = "-"
                    text = f"({render(neg)})" if isinstance(neg, Add) else render(neg)
                else:
                    text = render(c)
            if i == 0:
                parts.append(text if sign == "+" else "-" + text)
            else:
                parts.append(f" {sign} {text}")
        return "".join(parts)
    raise TypeError(type(e))
