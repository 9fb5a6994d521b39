"""Problem data: delayed variational / optimal-control problems, prehistories,
symmetry generators, charges and discrete trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, Union

import numpy as np

from delaynoether.symexpr import (
    T,
    Expr,
    Kind,
    Symbol,
    as_expr,
    evaluate,
    free_symbols,
    partial,
)

Real = Union[int, float, Fraction]

# Relative tolerance for "is an integer multiple of h".
COMMENSURATE_RTOL = 1e-12


class DomainError(ValueError):
    """Raised when a function is evaluated outside its domain."""


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str
    message: str

    def __str__(self):
        return f"{self.field}: {self.rule}: {self.message}"


@dataclass(frozen=True)
class Piece:
    start: Real
    end: Real
    expr: Expr


@dataclass(frozen=True)
class Prehistory:
    """Piecewise-smooth initial function on ``[t1 - tau, t1]``.

    ``components[i]`` is the ordered list of pieces for state ``q_{i+1}``.
    At an interior junction the right piece wins.
    """

    components: tuple[tuple[Piece, ...], ...]

    @classmethod
    def constant(cls, values: Sequence[Real], start: Real, end: Real) -> "Prehistory":
        return cls(tuple((Piece(start, end, as_expr(v)),) for v in values))

    @classmethod
    def from_exprs(cls, exprs: Sequence[Expr], start: Real, end: Real) -> "Prehistory":
        return cls(tuple((Piece(start, end, e),) for e in exprs))

    @property
    def n(self) -> int:
        return len(self.components)

    def _piece(self, i: int, t: float) -> Piece:
        pieces = self.components[i]
        lo, hi = float(pieces[0].start), float(pieces[-1].end)
        slack = 1e-12 * max(1.0, abs(lo), abs(hi))
        if t < lo - slack or t > hi + slack:
            raise DomainError(f"t={t!r} outside prehistory interval [{lo}, {hi}]")
        for piece in reversed(pieces):
            if t >= float(piece.start) - slack:
                return piece
        return pieces[0]

    def value(self, t: float, order: int = 0) -> np.ndarray:
        """delta(t), or its ``order``-th derivative, for every component."""
        out = np.empty(self.n)
        for i in range(self.n):
            e = self._piece(i, t).expr
            for _ in range(order):
                e = partial(e, T)
            out[i] = evaluate(e, {T: t})
        return out


def prehistory_eval(pre: Prehistory, t: float) -> np.ndarray:
    return pre.value(t)


@dataclass(frozen=True)
class DelayedVariationalProblem:
    n: int
    lagrangian: Expr
    tau: Real
    t1: Real
    t2: Real
    prehistory: Prehistory
    terminal: tuple[Real, ...] | None = None


@dataclass(frozen=True)
class OptimalControlDelayProblem:
    n: int
    m: int
    cost: Expr
    dynamics: tuple[Expr, ...]
    tau: Real
    t1: Real
    t2: Real
    prehistory: Prehistory


Problem = Union[DelayedVariationalProblem, OptimalControlDelayProblem]


@dataclass(frozen=True)
class GeneratorSet:
    """Infinitesimal generators of a one-parameter transformation group."""

    eta: Expr
    xi: tuple[Expr, ...]
    rho: tuple[Expr, ...] | None = None
    sigma: tuple[Expr, ...] | None = None

    def scaled(self, c: Real) -> "GeneratorSet":
        def sc(es):
            return None if es is None else tuple(as_expr(c) * e for e in es)

        return GeneratorSet(as_expr(c) * self.eta, sc(self.xi), sc(self.rho), sc(self.sigma))


@dataclass(frozen=True)
class PiecewiseCharge:
    """Constant of motion valid on ``[t1, t2 - tau]`` (inner) and
    ``[t2 - tau, t2]`` (outer); the two constants are independent."""

    inner: Expr
    outer: Expr


# ---------------------------------------------------------------------------
# validation


def _check_symbols(expr: Expr, where: str, allowed: dict, offsets: set[int]) -> list[Violation]:
    out = []
    for s in sorted(free_symbols(expr), key=Symbol.sort_key):
        if s.kind in (Kind.TIME, Kind.DELAY):
            if s.kind not in allowed:
                out.append(Violation(where, "symbol", f"{s.name} not allowed here"))
            continue
        if s.kind not in allowed:
            out.append(Violation(where, "symbol", f"{s.name} not allowed here"))
        elif s.index > allowed[s.kind]:
            out.append(Violation(where, "index", f"{s.name} exceeds dimension {allowed[s.kind]}"))
        elif s.offset not in offsets:
            out.append(Violation(where, "offset", f"{s.name} has offset {s.offset}, allowed {sorted(offsets)}"))
    return out


def _check_horizon(p) -> list[Violation]:
    out = []
    tau, t1, t2 = p.tau, p.t1, p.t2
    if not all(math.isfinite(float(x)) for x in (tau, t1, t2)):
        return [Violation("problem", "finite", "tau, t1, t2 must be finite")]
    if not t1 < t2:
        out.append(Violation("t2", "horizon", f"need t1 < t2, got t1={t1}, t2={t2}"))
    if not tau > 0:
        out.append(Violation("tau", "positive", f"need tau > 0, got {tau}"))
    elif not tau < t2 - t1:
        out.append(Violation("tau", "delay-bound", f"need tau < t2 - t1 = {t2 - t1}, got {tau}"))
    return out


def _check_prehistory(pre: Prehistory, n: int, start, end) -> list[Violation]:
    out = []
    if pre.n != n:
        return [Violation("prehistory", "dimension", f"{pre.n} components for n={n}")]
    slack = 1e-12 * max(1.0, abs(float(start)), abs(float(end)))
    for i, pieces in enumerate(pre.components, start=1):
        where = f"prehistory.q{i}"
        if not pieces:
            out.append(Violation(where, "cover", "no pieces"))
            continue
        if abs(float(pieces[0].start) - float(start)) > slack:
            out.append(Violation(where, "cover", f"first piece starts at {pieces[0].start}, expected {start}"))
        if abs(float(pieces[-1].end) - float(end)) > slack:
            out.append(Violation(where, "cover", f"last piece ends at {pieces[-1].end}, expected {end}"))
        for a, b in zip(pieces, pieces[1:]):
            if abs(float(a.end) - float(b.start)) > slack:
                out.append(Violation(where, "cover", f"gap or overlap between {a.end} and {b.start}"))
        for piece in pieces:
            if not piece.start < piece.end:
                out.append(Violation(where, "cover", f"empty piece [{piece.start}, {piece.end}]"))
            extra = [s.name for s in free_symbols(piece.expr) if s != T]
            if extra:
                out.append(Violation(where, "time-only", f"piece uses {', '.join(sorted(extra))}"))
    return out


def validate(p: Problem) -> list[Violation]:
    """All invariant violations of ``p``; empty iff valid."""
    out: list[Violation] = []
    if p.n < 1:
        out.append(Violation("n", "dimension", "n must be >= 1"))
    out += _check_horizon(p)
    if isinstance(p, DelayedVariationalProblem):
        allowed = {Kind.TIME: 0, Kind.DELAY: 0, Kind.STATE: p.n, Kind.STATE_DOT: p.n}
        out += _check_symbols(p.lagrangian, "lagrangian", allowed, {-1, 0})
        if p.terminal is not None and len(p.terminal) != p.n:
            out.append(Violation("terminal", "dimension", f"{len(p.terminal)} values for n={p.n}"))
    else:
        if p.m < 1:
            out.append(Violation("m", "dimension", "m must be >= 1"))
        allowed = {Kind.TIME: 0, Kind.DELAY: 0, Kind.STATE: p.n, Kind.CONTROL: p.m}
        out += _check_symbols(p.cost, "cost", allowed, {-1, 0})
        if len(p.dynamics) != p.n:
            out.append(Violation("dynamics", "dimension", f"{len(p.dynamics)} equations for n={p.n}"))
        for i, phi in enumerate(p.dynamics, start=1):
            out += _check_symbols(phi, f"dynamics.phi{i}", allowed, {-1, 0})
    if not any(v.rule in ("finite",) for v in out):
        out += _check_prehistory(p.prehistory, p.n, p.t1 - p.tau, p.t1)
    return out


def validate_generators(p: Problem, g: GeneratorSet) -> list[Violation]:
    out = []
    allowed = {Kind.TIME: 0, Kind.DELAY: 0, Kind.STATE: p.n}
    if isinstance(p, OptimalControlDelayProblem):
        allowed[Kind.CONTROL] = p.m
    if len(g.xi) != p.n:
        out.append(Violation("generators.xi", "dimension", f"{len(g.xi)} components for n={p.n}"))
    exprs = [("eta", g.eta)] + [(f"xi_{i}", e) for i, e in enumerate(g.xi, start=1)]
    if isinstance(p, DelayedVariationalProblem):
        if g.rho is not None or g.sigma is not None:
            out.append(Violation("generators", "variational", "rho/sigma only apply to control problems"))
    else:
        rho = g.rho or ()
        sigma = g.sigma or ()
        if g.rho is not None and len(rho) != p.m:
            out.append(Violation("generators.rho", "dimension", f"{len(rho)} components for m={p.m}"))
        if g.sigma is not None and len(sigma) != p.n:
            out.append(Violation("generators.sigma", "dimension", f"{len(sigma)} components for n={p.n}"))
        exprs += [(f"rho_{j}", e) for j, e in enumerate(rho, start=1)]
        exprs += [(f"sigma_{i}", e) for i, e in enumerate(sigma, start=1)]
    for name, e in exprs:
        out += _check_symbols(e, f"generators.{name}", allowed, {0})
    return out


def padded_generators(p: Problem, g: GeneratorSet) -> GeneratorSet:
    """Fill absent rho/sigma of a control problem with zeros."""
    if isinstance(p, DelayedVariationalProblem):
        return g
    zero = as_expr(0)
    return GeneratorSet(
        g.eta,
        g.xi,
        g.rho if g.rho is not None else (zero,) * p.m,
        g.sigma if g.sigma is not None else (zero,) * p.n,
    )


# ---------------------------------------------------------------------------
# trajectories


def steps_per(length: float, h: float, what: str) -> int:
    """``length / h`` as an integer, or ValueError when not commensurate."""
    ratio = float(length) / float(h)
    k = round(ratio)
    if k < 1 or abs(ratio - k) > COMMENSURATE_RTOL * max(1.0, abs(ratio)):
        raise ValueError(f"{what}={length} is not an integer multiple of h={h}")
    return k


@dataclass
class Trajectory:
    """Node values on the uniform grid ``t1 - tau = s_0 < ... < s_N = t2``.

    Arrays have one row per node.  Costates are only meaningful on
    ``[t1, t2]``; rows before ``t1`` (and any unknown row) hold NaN.
    """

    t1: float
    tau: float
    h: float
    states: np.ndarray
    controls: np.ndarray | None = None
    costates: np.ndarray | None = None
    prehistory: Prehistory | None = None
    k: int = field(init=False)

    def __post_init__(self):
        self.t1 = float(self.t1)
        self.tau = float(self.tau)
        self.h = float(self.h)
        self.k = steps_per(self.tau, self.h, "tau")
        if self.k < 2:
            raise ValueError(f"need tau = k*h with k >= 2, got k={self.k}")
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.states.shape[0] == 1 and self.states.shape[1] > 1:
            self.states = self.states.T
        rows = self.states.shape[0]
        if rows <= self.k + 1:
            raise ValueError("trajectory must extend past t1")
        for name in ("controls", "costates"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                if arr.ndim == 1:
                    arr = arr[:, None]
                if arr.shape[0] != rows:
                    raise ValueError(f"{name} has {arr.shape[0]} rows, expected {rows}")
                setattr(self, name, arr)

    @property
    def N(self) -> int:
        return self.states.shape[0] - 1

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def t2(self) -> float:
        return self.t1 + (self.N - self.k) * self.h

    @property
    def grid(self) -> np.ndarray:
        return (self.t1 - self.tau) + self.h * np.arange(self.N + 1)

    def node_of(self, t: float) -> int:
        i = round((t - (self.t1 - self.tau)) / self.h)
        if not 0 <= i <= self.N:
            raise ValueError(f"t={t} is off the grid")
        return i
