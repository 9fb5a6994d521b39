"""Direct transcription of delayed variational problems.

The functional is discretised on a grid commensurate with the delay
(``tau = k*h``) by the rectangle rule with forward differences::

    J(q) = h * sum_{t1 <= s_i < t2} L(s_i, q_i, (q_{i+1}-q_i)/h,
                                       q_{i-k}, (q_{i-k+1}-q_{i-k})/h)

Prehistory nodes (``s_i <= t1``) are fixed from delta.  The stationary
point of J is found by a safeguarded Newton iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from delaynoether.conditions import require_valid
from delaynoether.problem import DelayedVariationalProblem, Trajectory, steps_per
from delaynoether.symexpr import (
    TAU,
    T,
    compile_expr,
    dq,
    partial,
    polynomial_degree,
    q,
)

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Non-finite objective; carries the offending node index."""

    def __init__(self, message: str, node: int | None = None):
        super().__init__(message)
        self.node = node


def _slots(n: int):
    """The 4n slot symbols of L in a fixed order: q, dq, q_tau, dq_tau."""
    return (
        [q(i) for i in range(1, n + 1)]
        + [dq(i) for i in range(1, n + 1)]
        + [q(i, -1) for i in range(1, n + 1)]
        + [dq(i, -1) for i in range(1, n + 1)]
    )


@dataclass
class DiscretizedObjective:
    problem: DelayedVariationalProblem
    h: float
    k: int
    M: int  # integration nodes
    _L: object = field(init=False, repr=False)
    _grad: list = field(init=False, repr=False)
    _hess: list | None = field(init=False, repr=False)

    def __post_init__(self):
        n = self.problem.n
        L = self.problem.lagrangian
        slots = _slots(n)
        syms = [T, TAU] + slots
        self._L = compile_expr(L, syms)
        firsts = [partial(L, s) for s in slots]
        self._grad = [compile_expr(d, syms) for d in firsts]
        deg = polynomial_degree(L)
        if deg is not None and deg <= 4:
            self._hess = [[compile_expr(partial(d, s), syms) for s in slots] for d in firsts]
        else:
            self._hess = None
        self.prehistory_values = np.array(
            [self.problem.prehistory.value(self.t1 - self.tau + i * self.h) for i in range(self.k + 1)]
        )

    # grid bookkeeping -----------------------------------------------------

    @property
    def n(self) -> int:
        return self.problem.n

    @property
    def tau(self) -> float:
        return float(self.problem.tau)

    @property
    def t1(self) -> float:
        return float(self.problem.t1)

    @property
    def N(self) -> int:
        return self.k + self.M

    @property
    def grid(self) -> np.ndarray:
        return (self.t1 - self.tau) + self.h * np.arange(self.N + 1)

    @property
    def integration_nodes(self) -> np.ndarray:
        return np.arange(self.k, self.N)

    @property
    def free_nodes(self) -> np.ndarray:
        last = self.N if self.problem.terminal is None else self.N - 1
        return np.arange(self.k + 1, last + 1)

    @property
    def size(self) -> int:
        return len(self.free_nodes) * self.n

    def full(self, x: np.ndarray) -> np.ndarray:
        """Node values (N+1, n) from the free-variable vector."""
        Q = np.empty((self.N + 1, self.n))
        Q[: self.k + 1] = self.prehistory_values
        free = self.free_nodes
        Q[free] = np.asarray(x, dtype=float).reshape(len(free), self.n)
        if self.problem.terminal is not None:
            Q[self.N] = np.asarray(self.problem.terminal, dtype=float)
        return Q

    def free(self, Q: np.ndarray) -> np.ndarray:
        return np.asarray(Q, dtype=float)[self.free_nodes].reshape(-1)

    def _env(self, Q: np.ndarray) -> dict:
        i = self.integration_nodes
        h, k = self.h, self.k
        V = (Q[1:] - Q[:-1]) / h
        env = {T: self.grid[i], TAU: self.tau}
        for c in range(self.n):
            env[q(c + 1)] = Q[i, c]
            env[dq(c + 1)] = V[i, c]
            env[q(c + 1, -1)] = Q[i - k, c]
            env[dq(c + 1, -1)] = V[i - k, c]
        return env

    # objective, gradient, Hessian -------------------------------------------

    def value(self, x: np.ndarray) -> float:
        vals = self._L(self._env(self.full(x)))
        bad = np.flatnonzero(~np.isfinite(vals))
        if bad.size:
            node = int(self.integration_nodes[bad[0]])
            raise SolverError(f"non-finite Lagrangian at node {node} (t={self.grid[node]!r})", node)
        return float(self.h * np.sum(vals))

    def _scatter_targets(self):
        """Node index of each slot's dependence, as (node, weight) pairs."""
        i = self.integration_nodes
        k, h = self.k, self.h
        return {
            "q": [(i, 1.0)],
            "dq": [(i + 1, 1.0 / h), (i, -1.0 / h)],
            "q_tau": [(i - k, 1.0)],
            "dq_tau": [(i - k + 1, 1.0 / h), (i - k, -1.0 / h)],
        }

    def full_gradient(self, Q: np.ndarray) -> np.ndarray:
        """dJ/dQ for every node (prehistory rows included)."""
        env = self._env(Q)
        n = self.n
        G = np.zeros((self.N + 1, n))
        targets = self._scatter_targets()
        kinds = ["q", "dq", "q_tau", "dq_tau"]
        for slot_no, fn in enumerate(self._grad):
            kind, comp = kinds[slot_no // n], slot_no % n
            d = fn(env)
            for nodes, w in targets[kind]:
                np.add.at(G[:, comp], nodes, self.h * w * d)
        return G

    def gradient(self, x: np.ndarray) -> np.ndarray:
        Q = self.full(x)
        return self.free(self.full_gradient(Q))

    def _local_jacobian(self):
        """Per integration node: node indices (4 per component) and the
        matrix mapping those node values to the 4n slots."""
        n, h, k = self.n, self.h, self.k
        i = self.integration_nodes
        nodes = np.stack([i, i + 1, i - k, i - k + 1], axis=1)  # (M, 4)
        A1 = np.array(
            [[1, 0, 0, 0], [-1 / h, 1 / h, 0, 0], [0, 0, 1, 0], [0, 0, -1 / h, 1 / h]], dtype=float
        )
        return nodes, A1

    def hessian(self, x: np.ndarray) -> np.ndarray:
        if self._hess is None:
            return self._fd_hessian(x)
        Q = self.full(x)
        env = self._env(Q)
        n = self.n
        S = 4 * n
        Hs = np.empty((len(self.integration_nodes), S, S))
        for a in range(S):
            for b in range(S):
                Hs[:, a, b] = self._hess[a][b](env)
        nodes, A1 = self._local_jacobian()
        # variable ordering inside a node block: (slot kind, component)
        # slot a = kind*n + comp depends on local node column c via A1[kind, c]
        dim = (self.N + 1) * n
        H = np.zeros((dim, dim))
        for ka in range(4):
            for kb in range(4):
                for ca in range(4):
                    wa = A1[ka, ca]
                    if wa == 0.0:
                        continue
                    for cb in range(4):
                        wb = A1[kb, cb]
                        if wb == 0.0:
                            continue
                        for comp_a in range(n):
                            rows = nodes[:, ca] * n + comp_a
                            for comp_b in range(n):
                                cols = nodes[:, cb] * n + comp_b
                                vals = self.h * wa * wb * Hs[:, ka * n + comp_a, kb * n + comp_b]
                                np.add.at(H, (rows, cols), vals)
        idx = (self.free_nodes[:, None] * n + np.arange(n)[None, :]).reshape(-1)
        return H[np.ix_(idx, idx)]

    def _fd_hessian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        H = np.empty((x.size, x.size))
        for j in range(x.size):
            step = 1e-5 * max(1.0, abs(x[j]))
            xp, xm = x.copy(), x.copy()
            xp[j] += step
            xm[j] -= step
            H[:, j] = (self.gradient(xp) - self.gradient(xm)) / (2 * step)
        return 0.5 * (H + H.T)


def discretize(prob: DelayedVariationalProblem, h: float) -> DiscretizedObjective:
    require_valid(prob)
    k = steps_per(float(prob.tau), h, "tau")
    if k < 2:
        raise ValueError(f"need tau = k*h with k >= 2, got k={k}")
    M = steps_per(float(prob.t2) - float(prob.t1), h, "t2 - t1")
    return DiscretizedObjective(prob, float(h), k, M)


@dataclass(frozen=True)
class SolveConfig:
    h: float = 0.01
    gtol: float = 1e-10
    max_iter: int = 50


@dataclass
class SolveReport:
    trajectory: Trajectory
    objective: float
    grad_norm: float
    iterations: int
    converged: bool
    gtol: float
    history: list = field(default_factory=list)


def initial_guess(obj: DiscretizedObjective) -> np.ndarray:
    prob = obj.problem
    start = obj.prehistory_values[-1]
    Q = np.tile(start, (obj.N + 1, 1))
    if prob.terminal is not None:
        end = np.asarray(prob.terminal, dtype=float)
        s = (np.arange(obj.N + 1) - obj.k) / obj.M
        Q = start[None, :] + s[:, None] * (end - start)[None, :]
    return obj.free(Q)


def _armijo(obj, x, f, g, max_halvings=60):
    d = -g
    slope = float(g @ d)
    step = 1.0
    for _ in range(max_halvings):
        xn = x + step * d
        fn = obj.value(xn)
        if fn <= f + 1e-4 * step * slope:
            return xn, fn
        step *= 0.5
    return None, None


def solve(prob: DelayedVariationalProblem, cfg: SolveConfig | None = None) -> SolveReport:
    """Damped Newton with a Levenberg shift; gradient descent with Armijo
    backtracking when the shifted system cannot be factored."""
    cfg = cfg or SolveConfig()
    obj = discretize(prob, cfg.h)
    x = initial_guess(obj)
    f = obj.value(x)
    g = obj.gradient(x)
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    lam = 0.0
    it = 0
    history = [f]
    while gnorm > cfg.gtol and it < cfg.max_iter:
        it += 1
        H = obj.hessian(x)
        scale = max(1.0, float(np.max(np.abs(np.diag(H))))) if H.size else 1.0
        accepted = False
        for _ in range(60):
            try:
                C = np.linalg.cholesky(H + lam * np.eye(H.shape[0]))
            except np.linalg.LinAlgError:
                lam = max(2.0 * lam, 1e-10 * scale)
                continue
            step = -np.linalg.solve(C.T, np.linalg.solve(C, g))
            xn = x + step
            fn = obj.value(xn)
            if fn <= f:
                accepted = True
                break
            lam = max(2.0 * lam, 1e-10 * scale)
        if accepted:
            lam = 0.0 if lam < 1e-8 * scale else lam / 4.0
        else:
            log.debug("Newton system unusable at iteration %d; Armijo descent", it)
            xn, fn = _armijo(obj, x, f, g)
            if xn is None:
                break
        x, f = xn, fn
        history.append(f)
        g = obj.gradient(x)
        gnorm = float(np.max(np.abs(g)))
    traj = Trajectory(obj.t1, obj.tau, obj.h, obj.full(x), prehistory=prob.prehistory)
    return SolveReport(traj, f, gnorm, it, gnorm <= cfg.gtol, cfg.gtol, history)
