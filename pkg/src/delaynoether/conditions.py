"""Necessary conditions for delayed problems, as residual expressions.

Every condition is stored as ``lhs - rhs`` and is satisfied where it
evaluates to zero.  Conditions come in two branches: *inner* on
``[t1, t2 - tau]``, where the delayed partials re-enter advanced by one
delay, and *outer* on ``[t2 - tau, t2]`` with classical form.

The DuBois-Reymond residual places no condition on the prehistory,
although its derivation assumes ``L == 0`` on ``[t1 - tau, t1]``.
"""

from __future__ import annotations

from dataclasses import dataclass

from delaynoether.problem import (
    DelayedVariationalProblem,
    OptimalControlDelayProblem,
    validate,
)
from delaynoether.symexpr import (
    Add,
    Expr,
    Mul,
    Sym,
    T,
    dp,
    dq,
    p,
    partial,
    q,
    shift,
    simplify,
    substitute,
    total_time_derivative,
    u,
)


class InvalidProblemError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


def require_valid(prob) -> None:
    violations = validate(prob)
    if violations:
        raise InvalidProblemError(violations)


@dataclass(frozen=True)
class TwoIntervalSystem:
    inner: tuple[Expr, ...]
    outer: tuple[Expr, ...]


def momentum(L: Expr, i: int) -> Expr:
    """Combined momentum dL/d(dq_i) + dL/d(dq_i_tau) advanced by one delay."""
    return simplify(partial(L, dq(i)) + shift(partial(L, dq(i, -1)), 1))


def force(L: Expr, i: int) -> Expr:
    """dL/dq_i + dL/dq_i_tau advanced by one delay."""
    return simplify(partial(L, q(i)) + shift(partial(L, q(i, -1)), 1))


def euler_lagrange(prob: DelayedVariationalProblem) -> TwoIntervalSystem:
    require_valid(prob)
    L = prob.lagrangian
    inner, outer = [], []
    for i in range(1, prob.n + 1):
        inner.append(simplify(total_time_derivative(momentum(L, i)) - force(L, i)))
        outer.append(simplify(total_time_derivative(partial(L, dq(i))) - partial(L, q(i))))
    return TwoIntervalSystem(tuple(inner), tuple(outer))


def _energy(L: Expr, moms: list[Expr]) -> Expr:
    return simplify(L - Add(tuple(Mul((Sym(dq(i)), m)) for i, m in enumerate(moms, start=1))))


def dubois_reymond(prob: DelayedVariationalProblem) -> TwoIntervalSystem:
    require_valid(prob)
    L = prob.lagrangian
    dLdt = partial(L, T)
    inner_energy = _energy(L, [momentum(L, i) for i in range(1, prob.n + 1)])
    outer_energy = _energy(L, [partial(L, dq(i)) for i in range(1, prob.n + 1)])
    return TwoIntervalSystem(
        (simplify(total_time_derivative(inner_energy) - dLdt),),
        (simplify(total_time_derivative(outer_energy) - dLdt),),
    )


def hamiltonian(prob: OptimalControlDelayProblem) -> Expr:
    require_valid(prob)
    terms = [prob.cost] + [Mul((Sym(p(i)), phi)) for i, phi in enumerate(prob.dynamics, start=1)]
    return simplify(Add(tuple(terms)))


@dataclass(frozen=True)
class PontryaginBranch:
    state: tuple[Expr, ...]
    costate: tuple[Expr, ...]
    stationary: tuple[Expr, ...]

    def all(self) -> tuple[Expr, ...]:
        return self.state + self.costate + self.stationary


@dataclass(frozen=True)
class PontryaginSystem:
    inner: PontryaginBranch
    outer: PontryaginBranch


def pontryagin_system(prob: OptimalControlDelayProblem) -> PontryaginSystem:
    """Delayed Hamiltonian system and stationary conditions.

    ``dp_i`` stands for the costate derivative; it is bound numerically by
    the verifier and never differentiated symbolically.
    """
    H = hamiltonian(prob)
    state = tuple(simplify(Sym(dq(i)) - partial(H, p(i))) for i in range(1, prob.n + 1))
    costate_in, costate_out = [], []
    for i in range(1, prob.n + 1):
        local = partial(H, q(i))
        costate_in.append(simplify(Sym(dp(i)) + local + shift(partial(H, q(i, -1)), 1)))
        costate_out.append(simplify(Sym(dp(i)) + local))
    stat_in, stat_out = [], []
    for j in range(1, prob.m + 1):
        local = partial(H, u(j))
        stat_in.append(simplify(local + shift(partial(H, u(j, -1)), 1)))
        stat_out.append(local)
    return PontryaginSystem(
        PontryaginBranch(state, tuple(costate_in), tuple(stat_in)),
        PontryaginBranch(state, tuple(costate_out), tuple(stat_out)),
    )


def dH_dt_residual(prob: OptimalControlDelayProblem) -> tuple[Expr, Expr]:
    """``(H, dH/dt explicit)``; the total derivative of H is taken numerically."""
    H = hamiltonian(prob)
    return H, partial(H, T)


# ---------------------------------------------------------------------------
# phi = u reduction


def control_reduction(prob: DelayedVariationalProblem) -> OptimalControlDelayProblem:
    """The control problem with ``phi = u`` whose cost is L with dq -> u."""
    mapping = {}
    for i in range(1, prob.n + 1):
        for off in (0, -1):
            mapping[dq(i, off)] = Sym(u(i, off))
    return OptimalControlDelayProblem(
        n=prob.n,
        m=prob.n,
        cost=simplify(substitute(prob.lagrangian, mapping)),
        dynamics=tuple(Sym(u(i)) for i in range(1, prob.n + 1)),
        tau=prob.tau,
        t1=prob.t1,
        t2=prob.t2,
        prehistory=prob.prehistory,
    )


def reduction_costate(prob: DelayedVariationalProblem) -> TwoIntervalSystem:
    """Costate from the stationary condition of the ``phi = u`` reduction,
    written in Lagrangian variables: ``p = -(momentum)`` on each branch."""
    require_valid(prob)
    L = prob.lagrangian
    inner = tuple(simplify(-momentum(L, i)) for i in range(1, prob.n + 1))
    outer = tuple(simplify(-partial(L, dq(i))) for i in range(1, prob.n + 1))
    return TwoIntervalSystem(inner, outer)


__all__ = [
    "TwoIntervalSystem",
    "PontryaginBranch",
    "PontryaginSystem",
    "InvalidProblemError",
    "euler_lagrange",
    "dubois_reymond",
    "hamiltonian",
    "pontryagin_system",
    "dH_dt_residual",
    "control_reduction",
    "reduction_costate",
    "momentum",
    "force",
]
