"""Invariance checking and Noether constants of motion with time delay."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from delaynoether.conditions import hamiltonian, momentum, require_valid
from delaynoether.problem import (
    DelayedVariationalProblem,
    GeneratorSet,
    OptimalControlDelayProblem,
    PiecewiseCharge,
    padded_generators,
    validate_generators,
)
from delaynoether.symexpr import (
    TAU,
    ZERO,
    Add,
    Expr,
    Kind,
    Mul,
    Sym,
    T,
    compile_expr,
    dq,
    du,
    free_symbols,
    p,
    partial,
    q,
    shift,
    simplify,
    sorted_symbols,
    total_time_derivative,
    u,
)
from delaynoether.conditions import InvalidProblemError


class Verdict(enum.Enum):
    INVARIANT = "Invariant"
    NOT_INVARIANT = "NotInvariant"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class InvarianceConfig:
    samples: int = 200
    tolerance: float = 1e-9
    seed: int = 42


@dataclass(frozen=True)
class InvarianceReport:
    symbolic_zero: dict[str, bool]
    sampled_max_residual: dict[str, float]
    samples: int
    verdict: Verdict
    tolerance: float

    @property
    def symbolic(self) -> bool:
        return all(self.symbolic_zero.values())

    def summary(self) -> str:
        how = " (symbolic)" if self.verdict is Verdict.INVARIANT and self.symbolic else ""
        return f"{self.verdict.value}{how}"


@dataclass(frozen=True)
class Integrands:
    inner: Expr
    outer: Expr


def _require_generators(prob, g: GeneratorSet) -> None:
    require_valid(prob)
    bad = validate_generators(prob, g)
    if bad:
        raise InvalidProblemError(bad)


def _dot(a, b) -> Expr:
    return Add(tuple(Mul((x, y)) for x, y in zip(a, b))) if a else ZERO


def _variational_integrands(prob: DelayedVariationalProblem, g: GeneratorSet) -> Integrands:
    L = prob.lagrangian
    n = prob.n
    D_eta = total_time_derivative(g.eta)
    D_xi = [total_time_derivative(x) for x in g.xi]
    velocity_part = [D_xi[i] - Sym(dq(i + 1)) * D_eta for i in range(n)]
    common = partial(L, T) * g.eta + L * D_eta

    def branch(advanced: bool) -> Expr:
        if advanced:
            forces = [partial(L, q(i)) + shift(partial(L, q(i, -1)), 1) for i in range(1, n + 1)]
            moms = [momentum(L, i) for i in range(1, n + 1)]
        else:
            forces = [partial(L, q(i)) for i in range(1, n + 1)]
            moms = [partial(L, dq(i)) for i in range(1, n + 1)]
        return simplify(common + _dot(forces, g.xi) + _dot(moms, velocity_part))

    return Integrands(branch(True), branch(False))


def _control_derivative(e: Expr, m: int) -> Expr:
    """d/dt of a generator depending on (t, q, u): t -> 1, q -> dq, u -> du."""
    terms = []
    for s in sorted_symbols(free_symbols(e)):
        if s == T:
            terms.append(partial(e, s))
        elif s.kind == Kind.STATE:
            terms.append(partial(e, s) * Sym(dq(s.index, s.offset)))
        elif s.kind == Kind.CONTROL:
            terms.append(partial(e, s) * Sym(du(s.index, s.offset)))
    return simplify(Add(tuple(terms))) if terms else ZERO


def _control_integrands(prob: OptimalControlDelayProblem, g: GeneratorSet) -> Integrands:
    # Lagrangian of the augmented functional: H - p.dq over (q, u, p, dq).
    g = padded_generators(prob, g)
    n, m = prob.n, prob.m
    H = hamiltonian(prob)
    aug = H - _dot([Sym(p(i)) for i in range(1, n + 1)], [Sym(dq(i)) for i in range(1, n + 1)])
    D_eta = _control_derivative(g.eta, m)
    D_xi = [_control_derivative(x, m) for x in g.xi]
    velocity_part = [D_xi[i] - Sym(dq(i + 1)) * D_eta for i in range(n)]
    moms = [-Sym(p(i)) for i in range(1, n + 1)]
    costate_part = _dot([partial(aug, p(i)) for i in range(1, n + 1)], g.sigma)
    common = partial(aug, T) * g.eta + aug * D_eta + _dot(moms, velocity_part) + costate_part

    def branch(advanced: bool) -> Expr:
        fq = [partial(aug, q(i)) for i in range(1, n + 1)]
        fu = [partial(aug, u(j)) for j in range(1, m + 1)]
        if advanced:
            fq = [f + shift(partial(aug, q(i, -1)), 1) for i, f in enumerate(fq, start=1)]
            fu = [f + shift(partial(aug, u(j, -1)), 1) for j, f in enumerate(fu, start=1)]
        return simplify(common + _dot(fq, g.xi) + _dot(fu, g.rho))

    return Integrands(branch(True), branch(False))


def invariance_integrands(prob, g: GeneratorSet) -> Integrands:
    """Integrands of the necessary condition of invariance on each interval.

    For control problems the condition is that of the augmented functional
    with Lagrangian ``H - p.dq``; the costate generator sigma enters only
    here, never in the charge.
    """
    _require_generators(prob, g)
    if isinstance(prob, DelayedVariationalProblem):
        return _variational_integrands(prob, g)
    return _control_integrands(prob, g)


def _sample_max(expr: Expr, tau: float, samples: int, rng: np.random.Generator) -> float:
    syms = [s for s in sorted_symbols(free_symbols(expr)) if s != TAU]
    draws = rng.uniform(-2.0, 2.0, size=(len(syms), samples))
    env = {s: draws[i] for i, s in enumerate(syms)}
    env[TAU] = tau
    values = compile_expr(expr, syms + [TAU])(env)
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return float("nan")
    return float(np.max(np.abs(finite)))


def check_invariance(prob, g: GeneratorSet, cfg: InvarianceConfig | None = None) -> InvarianceReport:
    """Symbolic zero test per interval, falling back to seeded sampling over
    the box [-2, 2] for every symbol (the condition is pointwise)."""
    cfg = cfg or InvarianceConfig()
    integrands = invariance_integrands(prob, g)
    rng = np.random.default_rng(cfg.seed)
    symbolic, sampled = {}, {}
    for name in ("inner", "outer"):
        expr = getattr(integrands, name)
        symbolic[name] = expr == ZERO
        sampled[name] = 0.0 if symbolic[name] else _sample_max(expr, float(prob.tau), cfg.samples, rng)
    worst = [v for v in sampled.values()]
    if any(np.isnan(v) for v in worst):
        verdict = Verdict.INCONCLUSIVE
    elif all(v <= cfg.tolerance for v in worst):
        verdict = Verdict.INVARIANT
    elif any(v > 10 * cfg.tolerance for v in worst):
        verdict = Verdict.NOT_INVARIANT
    else:
        verdict = Verdict.INCONCLUSIVE
    return InvarianceReport(symbolic, sampled, cfg.samples, verdict, cfg.tolerance)


def noether_charge(prob: DelayedVariationalProblem, g: GeneratorSet) -> PiecewiseCharge:
    _require_generators(prob, g)
    L = prob.lagrangian
    n = prob.n
    velocities = [Sym(dq(i)) for i in range(1, n + 1)]

    def charge(moms):
        return simplify(_dot(moms, g.xi) + (L - _dot(velocities, moms)) * g.eta)

    inner = charge([momentum(L, i) for i in range(1, n + 1)])
    outer = charge([partial(L, dq(i)) for i in range(1, n + 1)])
    return PiecewiseCharge(inner, outer)


def noether_charge_oc(prob: OptimalControlDelayProblem, g: GeneratorSet) -> Expr:
    """``-p.xi + H*eta``, the same expression on both intervals."""
    _require_generators(prob, g)
    H = hamiltonian(prob)
    costates = [Sym(p(i)) for i in range(1, prob.n + 1)]
    return simplify(H * g.eta - _dot(costates, g.xi))
