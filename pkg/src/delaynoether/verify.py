"""Numerical checks of the necessary conditions along discrete trajectories.

Verification uses central differences (the solver uses forward
differences), so a solver bug cannot hide behind a shared discretisation.
Nodes before ``t1`` use the exact prehistory and its analytic derivatives
when the trajectory carries one.

Extremals of delayed problems are typically only piecewise smooth, with
corners at ``t1 + j*tau`` and ``t2 - j*tau``.  Pointwise derivative checks
skip a one-node neighbourhood of those corners; drift statistics also skip
the neighbourhood but still span every smooth segment of an interval, so a
jump of the charge across a corner shows up as drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from delaynoether.conditions import (
    PontryaginSystem,
    TwoIntervalSystem,
    dH_dt_residual,
    reduction_costate,
)
from delaynoether.problem import (
    DelayedVariationalProblem,
    OptimalControlDelayProblem,
    PiecewiseCharge,
    Trajectory,
)
from delaynoether.symexpr import (
    TAU,
    Expr,
    Kind,
    Symbol,
    T,
    compile_expr,
    dq,
    free_symbols,
    sorted_symbols,
)


class BindingError(LookupError):
    """A symbol cannot be read at the requested node."""


# ---------------------------------------------------------------------------
# node values


def _central(a: np.ndarray, h: float) -> np.ndarray:
    out = np.full_like(a, np.nan)
    out[1:-1] = (a[2:] - a[:-2]) / (2 * h)
    return out


def _second(a: np.ndarray, h: float) -> np.ndarray:
    out = np.full_like(a, np.nan)
    out[1:-1] = (a[2:] - 2 * a[1:-1] + a[:-2]) / (h * h)
    return out


class NodeTable:
    """Per-kind value arrays over the whole grid (NaN where unavailable)."""

    def __init__(self, traj: Trajectory):
        self.traj = traj
        self._cache: dict = {}

    def base(self, kind: Kind, index: int) -> np.ndarray:
        key = (kind, index)
        if key not in self._cache:
            self._cache[key] = self._build(kind, index)
        return self._cache[key]

    def _prehistory(self, order: int, c: int) -> np.ndarray | None:
        tr = self.traj
        if tr.prehistory is None:
            return None
        return np.array([tr.prehistory.value(t, order)[c] for t in tr.grid[: tr.k]])

    def _build(self, kind: Kind, index: int) -> np.ndarray:
        tr = self.traj
        c = index - 1
        N1 = tr.N + 1
        if kind in (Kind.STATE, Kind.STATE_DOT, Kind.STATE_DDOT):
            if c >= tr.n:
                return np.full(N1, np.nan)
            x = tr.states[:, c]
            order = {Kind.STATE: 0, Kind.STATE_DOT: 1, Kind.STATE_DDOT: 2}[kind]
            out = x.copy() if order == 0 else (_central(x, tr.h) if order == 1 else _second(x, tr.h))
            exact = self._prehistory(order, c)
            if exact is not None:
                out[: tr.k] = exact
            return out
        if kind == Kind.CONTROL:
            if tr.controls is None or c >= tr.controls.shape[1]:
                return np.full(N1, np.nan)
            return tr.controls[:, c].copy()
        if kind in (Kind.COSTATE, Kind.COSTATE_DOT):
            if tr.costates is None or c >= tr.costates.shape[1]:
                return np.full(N1, np.nan)
            pvals = tr.costates[:, c].copy()
            pvals[: tr.k] = np.nan
            return pvals if kind == Kind.COSTATE else _central(pvals, tr.h)
        return np.full(N1, np.nan)

    def values(self, s: Symbol, nodes: np.ndarray) -> np.ndarray:
        tr = self.traj
        nodes = np.asarray(nodes)
        if s == T:
            return tr.grid[nodes]
        if s == TAU:
            return np.full(nodes.shape, tr.tau)
        src = nodes + s.offset * tr.k
        out = np.full(nodes.shape, np.nan)
        ok = (src >= 0) & (src <= tr.N)
        out[ok] = self.base(s.kind, s.index)[src[ok]]
        return out

    def env(self, symbols: Iterable[Symbol], nodes: np.ndarray) -> dict:
        return {s: self.values(s, nodes) for s in symbols}


def bind(traj: Trajectory, i: int, needs: Iterable[Symbol]) -> dict:
    """Binding for the symbols ``needs`` at node ``i``."""
    table = NodeTable(traj)
    out = {}
    for s in sorted_symbols(needs):
        if s not in (T, TAU):
            src = i + s.offset * traj.k
            if not 0 <= src <= traj.N:
                raise BindingError(f"{s.name} at node {i} reads node {src}, off the grid [0, {traj.N}]")
        v = float(table.values(s, np.array([i]))[0])
        if not np.isfinite(v):
            raise BindingError(f"{s.name} unavailable at node {i}")
        out[s] = v
    return out


def evaluate_on_nodes(traj: Trajectory, expr: Expr, nodes: np.ndarray, table: NodeTable | None = None):
    """Values of ``expr`` at ``nodes``; NaN where some input is unavailable."""
    table = table or NodeTable(traj)
    syms = sorted_symbols(free_symbols(expr) | {T, TAU})
    env = table.env(syms, nodes)
    vals = np.array(compile_expr(expr, syms)(env), dtype=float)
    mask = np.ones(len(nodes), dtype=bool)
    for s in syms:
        mask &= np.isfinite(env[s])
    vals = vals.copy()
    vals[~mask] = np.nan
    return vals


# ---------------------------------------------------------------------------
# intervals and corners


def interval_nodes(traj: Trajectory) -> dict[str, np.ndarray]:
    k, N = traj.k, traj.N
    return {"inner": np.arange(k, N - k + 1), "outer": np.arange(N - k, N + 1)}


def corner_nodes(traj: Trajectory) -> np.ndarray:
    """Nodes at t1 + j*tau and t2 - j*tau inside [t1, t2]."""
    k, N = traj.k, traj.N
    fwd = np.arange(k, N + 1, k)
    bwd = np.arange(N, k - 1, -k)
    return np.unique(np.concatenate([fwd, bwd]))


def _near(nodes: np.ndarray, marks: np.ndarray, width: int = 1) -> np.ndarray:
    if marks.size == 0:
        return np.zeros(nodes.shape, dtype=bool)
    return np.min(np.abs(nodes[:, None] - marks[None, :]), axis=1) <= width


# ---------------------------------------------------------------------------
# drift


@dataclass
class IntervalDrift:
    name: str
    times: np.ndarray
    values: np.ndarray
    used: np.ndarray  # mask over times: evaluable and not near a corner
    mean: float
    max_deviation: float
    relative_drift: float
    segments: list = field(default_factory=list)

    @property
    def node_range(self) -> tuple[float, float]:
        t = self.times[self.used]
        return (float(t[0]), float(t[-1])) if t.size else (float("nan"), float("nan"))


@dataclass
class DriftReport:
    intervals: dict[str, IntervalDrift]
    junction: tuple[float, float] | None = None

    def worst(self) -> float:
        return max(d.relative_drift for d in self.intervals.values())


def _drift_stats(values: np.ndarray, used: np.ndarray):
    v = values[used]
    if v.size == 0:
        return float("nan"), float("nan"), float("nan")
    mean = float(np.mean(v))
    dev = float(np.max(np.abs(v - mean)))
    return mean, dev, dev / max(1.0, abs(mean))


def _segments(times, values, used, nodes, corners):
    """Per smooth segment (between consecutive corners) statistics."""
    out = []
    cuts = [c for c in corners if nodes[0] < c < nodes[-1]]
    bounds = [nodes[0]] + cuts + [nodes[-1]]
    for a, b in zip(bounds, bounds[1:]):
        sel = used & (nodes >= a) & (nodes <= b)
        mean, dev, rel = _drift_stats(values, sel)
        out.append({"start": float(times[nodes == a][0]), "end": float(times[nodes == b][0]),
                    "mean": mean, "max_deviation": dev, "relative_drift": rel})
    return out


def charge_drift(traj: Trajectory, charge: PiecewiseCharge | Expr, exclude_corners: bool = True) -> DriftReport:
    """Deviation-from-mean drift of a charge on each interval.

    A :class:`PiecewiseCharge` is reported on ``inner`` and ``outer``
    separately (independent constants); a single expression on ``whole``.
    The node at ``t2 - tau`` is evaluated under both pieces (``junction``).
    """
    table = NodeTable(traj)
    corners = corner_nodes(traj)
    if isinstance(charge, PiecewiseCharge):
        pieces = {"inner": charge.inner, "outer": charge.outer}
        ranges = interval_nodes(traj)
    else:
        pieces = {"whole": charge}
        ranges = {"whole": np.arange(traj.k, traj.N + 1)}
    intervals = {}
    for name, expr in pieces.items():
        nodes = ranges[name]
        vals = evaluate_on_nodes(traj, expr, nodes, table)
        used = np.isfinite(vals)
        if exclude_corners:
            used &= ~_near(nodes, corners)
        mean, dev, rel = _drift_stats(vals, used)
        segs = _segments(traj.grid[nodes], vals, used, nodes, corners)
        intervals[name] = IntervalDrift(name, traj.grid[nodes], vals, used, mean, dev, rel, segs)
    junction = None
    if isinstance(charge, PiecewiseCharge):
        j = np.array([traj.N - traj.k])
        junction = (
            float(evaluate_on_nodes(traj, charge.inner, j, table)[0]),
            float(evaluate_on_nodes(traj, charge.outer, j, table)[0]),
        )
    return DriftReport(intervals, junction)


def charge_rate(traj: Trajectory, charge: PiecewiseCharge, exclude_corners: bool = True) -> dict[str, float]:
    """Max |dC/dt| per interval, by central differences of the charge values,
    over the same node set as :func:`residual_check`."""
    table = NodeTable(traj)
    out = {}
    for name, nodes in interval_nodes(traj).items():
        expr = getattr(charge, name)
        ext = np.arange(nodes[0] - 1, nodes[-1] + 2)
        ext = ext[(ext >= 0) & (ext <= traj.N)]
        vals = evaluate_on_nodes(traj, expr, ext, table)
        rate = _central(vals, traj.h)
        keep = _residual_mask(traj, ext, nodes, exclude_corners)
        r = np.abs(rate[keep])
        r = r[np.isfinite(r)]
        out[name] = float(np.max(r)) if r.size else float("nan")
    return out


# ---------------------------------------------------------------------------
# residuals


@dataclass
class ResidualEntry:
    expr: Expr
    max_abs: float
    argmax_node: int | None
    argmax_time: float | None
    nodes_checked: int


@dataclass
class ResidualReport:
    intervals: dict[str, list[ResidualEntry]]

    def max_abs(self, interval: str | None = None) -> float:
        names = [interval] if interval else list(self.intervals)
        vals = [e.max_abs for n in names for e in self.intervals[n] if np.isfinite(e.max_abs)]
        return max(vals) if vals else float("nan")


def _residual_mask(traj, nodes, interval, exclude_corners):
    """Interior of ``interval`` (one stencil away from its ends)."""
    keep = (nodes >= interval[0] + 2) & (nodes <= interval[-1] - 2)
    if exclude_corners:
        keep &= ~_near(nodes, corner_nodes(traj))
    return keep


def _branches(system) -> dict[str, Sequence[Expr]]:
    if isinstance(system, PontryaginSystem):
        return {"inner": system.inner.all(), "outer": system.outer.all()}
    if isinstance(system, TwoIntervalSystem):
        return {"inner": system.inner, "outer": system.outer}
    raise TypeError(f"not a condition system: {type(system).__name__}")


def residual_check(traj: Trajectory, system, exclude_corners: bool = False) -> ResidualReport:
    """Max |residual| per expression per interval.

    Corners are reported by default: large local residuals there are a
    property of piecewise-smooth extremals, not something to hide.
    """
    table = NodeTable(traj)
    ranges = interval_nodes(traj)
    out = {}
    for name, exprs in _branches(system).items():
        nodes = ranges[name]
        keep = _residual_mask(traj, nodes, nodes, exclude_corners)
        entries = []
        for e in exprs:
            vals = np.abs(evaluate_on_nodes(traj, e, nodes, table))
            sel = keep & np.isfinite(vals)
            if not sel.any():
                entries.append(ResidualEntry(e, float("nan"), None, None, 0))
                continue
            idx = np.flatnonzero(sel)
            j = idx[np.argmax(vals[idx])]
            entries.append(ResidualEntry(e, float(vals[j]), int(nodes[j]), float(traj.grid[nodes[j]]), int(sel.sum())))
        out[name] = entries
    return ResidualReport(out)


# ---------------------------------------------------------------------------
# gradient oracle


def gradient_check(obj, point: np.ndarray) -> float:
    """Worst component-wise relative error of the analytic gradient against
    central differences (step ``1e-6 * max(1, |x_i|)``)."""
    x = np.asarray(point, dtype=float)
    if x.shape != (obj.size,):
        raise ValueError(f"point has shape {x.shape}, objective has {obj.size} free variables")
    g = obj.gradient(x)
    worst = 0.0
    for i in range(x.size):
        step = 1e-6 * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        fd = (obj.value(xp) - obj.value(xm)) / (2 * step)
        worst = max(worst, abs(fd - g[i]) / max(1.0, abs(g[i])))
    return worst


# ---------------------------------------------------------------------------
# optimal control


@dataclass
class DHReport:
    times: np.ndarray
    H: np.ndarray
    dHdt_numeric: np.ndarray
    dHdt_explicit: np.ndarray
    used: np.ndarray
    max_mismatch: float
    argmax_time: float | None


def dH_dt_check(traj: Trajectory, prob: OptimalControlDelayProblem, exclude_corners: bool = True) -> DHReport:
    """Central differences of H along the nodes against the explicit time
    partial of H, on ``[t1, t2]`` minus one node at each end."""
    if traj.controls is None or traj.costates is None:
        raise BindingError("trajectory carries no controls/costates")
    H, dHdt = dH_dt_residual(prob)
    table = NodeTable(traj)
    nodes = np.arange(traj.k, traj.N + 1)
    Hv = evaluate_on_nodes(traj, H, nodes, table)
    explicit = evaluate_on_nodes(traj, dHdt, nodes, table)
    numeric = _central(Hv, traj.h)
    used = (nodes > traj.k) & (nodes < traj.N) & np.isfinite(numeric) & np.isfinite(explicit)
    if exclude_corners:
        used &= ~_near(nodes, corner_nodes(traj))
    diff = np.abs(numeric - explicit)
    if used.any():
        idx = np.flatnonzero(used)
        j = idx[np.argmax(diff[idx])]
        worst, at = float(diff[j]), float(traj.grid[nodes[j]])
    else:
        worst, at = float("nan"), None
    return DHReport(traj.grid[nodes], Hv, numeric, explicit, used, worst, at)


def reduction_trajectory(prob: DelayedVariationalProblem, traj: Trajectory) -> Trajectory:
    """Controls ``u = dq`` and costates ``p = -(momentum)`` of the ``phi = u``
    reduction, evaluated along a variational trajectory."""
    table = NodeTable(traj)
    all_nodes = np.arange(traj.N + 1)
    controls = np.column_stack([table.values(dq(i), all_nodes) for i in range(1, traj.n + 1)])
    costate = reduction_costate(prob)
    k, N = traj.k, traj.N
    P = np.full((N + 1, traj.n), np.nan)
    inner = np.arange(k, N - k)
    outer = np.arange(N - k, N + 1)
    for c in range(traj.n):
        P[inner, c] = evaluate_on_nodes(traj, costate.inner[c], inner, table)
        P[outer, c] = evaluate_on_nodes(traj, costate.outer[c], outer, table)
    return Trajectory(traj.t1, traj.tau, traj.h, traj.states, controls, P, traj.prehistory)

