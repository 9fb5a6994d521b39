"""Command line front end: problem files, command dispatch, text/CSV output.

Problem files are TOML::

    [problem]
    kind = "variational"        # or "control" (then also m = ...)
    n = 1
    tau = 1
    t1 = 0
    t2 = 3

    [lagrangian]
    L = "(dq1 + dq1_tau)^2"

    [prehistory]
    q1 = [{from = -1, to = 0, expr = "-t"}]    # or simply q1 = "-t"

    [terminal]                  # optional
    q1 = 2

    [generators]                # optional
    eta = "1"
    xi1 = "0"

Control problems add ``[dynamics]`` with ``phi1 ... phin`` and may give
``rho1 ... rhom`` / ``sigma1 ... sigman`` generators.  Numbers may be
integers, floats or rational strings such as ``"1/3"``.
"""

from __future__ import annotations

import argparse
import csv
import io
import re
import sys
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import tomli

from delaynoether.conditions import (
    InvalidProblemError,
    dubois_reymond,
    euler_lagrange,
    hamiltonian,
    pontryagin_system,
)
from delaynoether.noether import (
    InvarianceConfig,
    Verdict,
    check_invariance,
    noether_charge,
    noether_charge_oc,
)
from delaynoether.parsing import ExprSyntaxError, parse_expr
from delaynoether.problem import (
    DelayedVariationalProblem,
    GeneratorSet,
    OptimalControlDelayProblem,
    Piece,
    Prehistory,
    Trajectory,
    validate,
    validate_generators,
)
from delaynoether.solver import SolveConfig, SolverError, solve
from delaynoether.verify import (
    BindingError,
    charge_drift,
    dH_dt_check,
    residual_check,
)

EXIT_USAGE = 64
EXIT_DATA = 65
EXIT_IO = 66

FMT = "%.17g"


class ProblemFileError(ValueError):
    """Invalid problem file; ``category`` is machine-readable."""

    def __init__(self, category: str, detail: str, line: int | None = None, column: int | None = None):
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(f"{where}{detail}")
        self.category = category
        self.detail = f"{where}{detail}"
        self.line = line
        self.column = column


class _UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# source locations


class _Locator:
    """Line/column of ``key = value`` entries, by section."""

    _HEADER = re.compile(r"^\s*\[\s*([A-Za-z0-9_]+)\s*\]")
    _KEY = re.compile(r"^\s*([A-Za-z0-9_]+)\s*=\s*")

    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.keys: dict[tuple[str, str], tuple[int, int]] = {}
        self.sections: dict[str, int] = {}
        section = ""
        for no, line in enumerate(self.lines, start=1):
            m = self._HEADER.match(line)
            if m:
                section = m.group(1)
                self.sections.setdefault(section, no)
                continue
            m = self._KEY.match(line)
            if m:
                self.keys.setdefault((section, m.group(1)), (no, m.end() + 1))

    def key(self, section: str, key: str) -> tuple[int | None, int | None]:
        if (section, key) in self.keys:
            return self.keys[(section, key)]
        return self.sections.get(section), 1 if section in self.sections else None

    def string(self, section: str, key: str, src: str) -> tuple[int | None, int | None]:
        """Position of the first character inside the quoted ``src``."""
        line, col = self.key(section, key)
        if line is None:
            return None, None
        for no in range(line, len(self.lines) + 1):
            text = self.lines[no - 1]
            start = col - 1 if no == line else 0
            for quote in ('"', "'"):
                at = text.find(quote + src + quote, start)
                if at >= 0:
                    return no, at + 2
        return line, col


# ---------------------------------------------------------------------------
# problem files

_SECTIONS = {"problem", "lagrangian", "dynamics", "prehistory", "terminal", "generators"}


@dataclass
class _Reader:
    data: dict
    loc: _Locator

    def fail(self, category, detail, section, key=None):
        line, col = self.loc.key(section, key) if key else (self.loc.sections.get(section), 1)
        raise ProblemFileError(category, detail, line, col)

    def section(self, name: str, required: bool = True) -> dict:
        if name not in self.data:
            if required:
                raise ProblemFileError("missing", f"section [{name}] is required")
            return {}
        value = self.data[name]
        if not isinstance(value, dict):
            self.fail("type", f"[{name}] must be a table", name)
        return value

    def only(self, name: str, allowed: set[str]) -> None:
        for key in self.section(name, required=False):
            if key not in allowed:
                self.fail("unknown-key", f"unknown key {key!r} in [{name}]", name, key)

    def number(self, name: str, key: str, value=None) -> Fraction:
        sec = self.section(name)
        if value is None:
            if key not in sec:
                self.fail("missing", f"[{name}] needs {key!r}", name)
            value = sec[key]
        try:
            if isinstance(value, bool):
                raise TypeError
            if isinstance(value, int):
                return Fraction(value)
            if isinstance(value, float):
                return Fraction(repr(value))
            if isinstance(value, str):
                return Fraction(value.strip())
            raise TypeError
        except (TypeError, ValueError, ZeroDivisionError):
            self.fail("type", f"{name}.{key} must be a number, got {value!r}", name, key)

    def integer(self, name: str, key: str) -> int:
        value = self.section(name).get(key)
        if not isinstance(value, int) or isinstance(value, bool):
            self.fail("type", f"{name}.{key} must be an integer, got {value!r}", name, key)
        return value

    def expr(self, name: str, key: str, src=None):
        if src is None:
            src = self.section(name).get(key)
        if not isinstance(src, str):
            self.fail("type", f"{name}.{key} must be an expression string, got {src!r}", name, key)
        try:
            return parse_expr(src)
        except ExprSyntaxError as exc:
            line, col = self.loc.string(name, key, src)
            col = None if col is None else col + exc.column - 1
            raise ProblemFileError(exc.category, f"{name}.{key}: {exc.detail}", line, col) from None


def _indexed(reader: _Reader, section: str, prefix: str, count: int, required: bool = True) -> list | None:
    sec = reader.section(section, required=False)
    keys = [f"{prefix}{i}" for i in range(1, count + 1)]
    present = [k for k in keys if k in sec]
    if not present and not required:
        return None
    missing = [k for k in keys if k not in sec]
    if missing:
        reader.fail("missing", f"[{section}] needs {', '.join(missing)}", section)
    return [reader.expr(section, k) for k in keys]


def _prehistory(reader: _Reader, n: int, start: Fraction, end: Fraction) -> Prehistory:
    sec = reader.section("prehistory")
    comps = []
    for i in range(1, n + 1):
        key = f"q{i}"
        if key not in sec:
            reader.fail("missing", f"[prehistory] needs {key}", "prehistory")
        value = sec[key]
        if isinstance(value, str):
            comps.append((Piece(start, end, reader.expr("prehistory", key)),))
            continue
        if not isinstance(value, list) or not all(isinstance(v, dict) for v in value):
            reader.fail("type", f"prehistory.{key} must be a string or a list of {{from, to, expr}}", "prehistory", key)
        pieces = []
        for piece in value:
            extra = set(piece) - {"from", "to", "expr"}
            if extra or not {"from", "to", "expr"} <= set(piece):
                reader.fail("unknown-key", f"prehistory.{key} pieces need exactly from, to, expr", "prehistory", key)
            pieces.append(
                Piece(
                    reader.number("prehistory", key, piece["from"]),
                    reader.number("prehistory", key, piece["to"]),
                    reader.expr("prehistory", key, piece["expr"]),
                )
            )
        comps.append(tuple(pieces))
    return Prehistory(tuple(comps))


def _violation_error(reader: _Reader, violations) -> ProblemFileError:
    v = violations[0]
    head = v.field.split(".")[0]
    section, key = {
        "tau": ("problem", "tau"),
        "t2": ("problem", "t2"),
        "n": ("problem", "n"),
        "m": ("problem", "m"),
        "problem": ("problem", None),
        "lagrangian": ("lagrangian", "L"),
        "cost": ("lagrangian", "L"),
    }.get(head, (head, None))
    if "." in v.field:
        key = v.field.split(".", 1)[1].replace("_", "")
    line, col = reader.loc.key(section, key) if key else (reader.loc.sections.get(section), 1)
    detail = "; ".join(str(x) for x in violations)
    return ProblemFileError("validation", detail, line, col)


def parse_problem(text: str):
    """``(problem, generators or None)`` from problem-file text."""
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ProblemFileError("syntax", getattr(exc, "msg", str(exc)),
                               getattr(exc, "lineno", None), getattr(exc, "colno", None)) from None
    reader = _Reader(data, _Locator(text))
    for name in data:
        if name not in _SECTIONS:
            reader.fail("unknown-key", f"unknown section [{name}]", name)

    prob_sec = reader.section("problem")
    kind = prob_sec.get("kind")
    if kind not in ("variational", "control"):
        reader.fail("type", f"problem.kind must be 'variational' or 'control', got {kind!r}", "problem", "kind")
    control = kind == "control"
    base = {"kind", "n", "tau", "t1", "t2"} | ({"m"} if control else set())
    reader.only("problem", base)
    n = reader.integer("problem", "n")
    m = reader.integer("problem", "m") if control else 0
    tau, t1, t2 = (reader.number("problem", key) for key in ("tau", "t1", "t2"))
    if n < 1 or m < 0:
        reader.fail("validation", "dimensions must be positive", "problem", "n")

    reader.only("lagrangian", {"L"})
    reader.only("dynamics", {f"phi{i}" for i in range(1, n + 1)})
    reader.only("prehistory", {f"q{i}" for i in range(1, n + 1)})
    reader.only("terminal", {f"q{i}" for i in range(1, n + 1)})
    gen_keys = {"eta"} | {f"xi{i}" for i in range(1, n + 1)}
    if control:
        gen_keys |= {f"rho{j}" for j in range(1, m + 1)} | {f"sigma{i}" for i in range(1, n + 1)}
    reader.only("generators", gen_keys)

    if "L" not in reader.section("lagrangian"):
        reader.fail("missing", "[lagrangian] needs L", "lagrangian")
    L = reader.expr("lagrangian", "L")
    pre = _prehistory(reader, n, t1 - tau, t1)

    if control:
        if "terminal" in data:
            reader.fail("unknown-key", "[terminal] only applies to variational problems", "terminal")
        prob = OptimalControlDelayProblem(n, m, L, tuple(_indexed(reader, "dynamics", "phi", n)), tau, t1, t2, pre)
    else:
        if "dynamics" in data:
            reader.fail("unknown-key", "[dynamics] only applies to control problems", "dynamics")
        terminal = None
        if "terminal" in data:
            sec = reader.section("terminal")
            missing = [f"q{i}" for i in range(1, n + 1) if f"q{i}" not in sec]
            if missing:
                reader.fail("missing", f"[terminal] needs {', '.join(missing)}", "terminal")
            terminal = tuple(reader.number("terminal", f"q{i}") for i in range(1, n + 1))
        prob = DelayedVariationalProblem(n, L, tau, t1, t2, pre, terminal)

    violations = validate(prob)
    if violations:
        raise _violation_error(reader, violations)

    gens = None
    if "generators" in data:
        sec = reader.section("generators")
        if "eta" not in sec:
            reader.fail("missing", "[generators] needs eta", "generators")
        gens = GeneratorSet(
            reader.expr("generators", "eta"),
            tuple(_indexed(reader, "generators", "xi", n)),
            tuple(_indexed(reader, "generators", "rho", m, required=False) or ()) or None if control else None,
            tuple(_indexed(reader, "generators", "sigma", n, required=False) or ()) or None if control else None,
        )
        violations = validate_generators(prob, gens)
        if violations:
            raise _violation_error(reader, violations)
    return prob, gens


# ---------------------------------------------------------------------------
# rendering


def _num(x) -> str:
    return str(x) if isinstance(x, (int, Fraction)) else FMT % x


def _intervals(prob) -> dict[str, str]:
    return {
        "inner": f"inner [{_num(prob.t1)}, {_num(prob.t2 - prob.tau)}]",
        "outer": f"outer [{_num(prob.t2 - prob.tau)}, {_num(prob.t2)}]",
    }


def render_derive(prob) -> str:
    labels = _intervals(prob)
    lines = []
    if isinstance(prob, DelayedVariationalProblem):
        el, dr = euler_lagrange(prob), dubois_reymond(prob)
        for part in ("inner", "outer"):
            for i, e in enumerate(getattr(el, part), start=1):
                lines.append(f"EL {labels[part]} q{i}: {e} = 0")
        for part in ("inner", "outer"):
            lines.append(f"DR {labels[part]}: {getattr(dr, part)[0]} = 0")
        return "\n".join(lines)
    lines.append(f"H = {hamiltonian(prob)}")
    system = pontryagin_system(prob)
    for part in ("inner", "outer"):
        branch = getattr(system, part)
        for i, e in enumerate(branch.state, start=1):
            lines.append(f"state {labels[part]} q{i}: {e} = 0")
        for i, e in enumerate(branch.costate, start=1):
            lines.append(f"costate {labels[part]} p{i}: {e} = 0")
        for j, e in enumerate(branch.stationary, start=1):
            lines.append(f"stationary {labels[part]} u{j}: {e} = 0")
    return "\n".join(lines)


def render_charge(prob, gens) -> str:
    if isinstance(prob, DelayedVariationalProblem):
        c = noether_charge(prob, gens)
        labels = _intervals(prob)
        return f"C {labels['inner']}: {c.inner}\nC {labels['outer']}: {c.outer}"
    return f"C [{_num(prob.t1)}, {_num(prob.t2)}]: {noether_charge_oc(prob, gens)}"


def trajectory_csv(traj: Trajectory) -> str:
    buf = io.StringIO()
    cols = ["t"] + [f"q{i}" for i in range(1, traj.n + 1)]
    blocks = [traj.states]
    if traj.controls is not None:
        cols += [f"u{j}" for j in range(1, traj.controls.shape[1] + 1)]
        blocks.append(traj.controls)
    if traj.costates is not None:
        cols += [f"p{i}" for i in range(1, traj.costates.shape[1] + 1)]
        blocks.append(traj.costates)
    buf.write(",".join(cols) + "\n")
    data = np.column_stack([traj.grid] + blocks) + 0.0  # no "-0" in output
    for row in data:
        buf.write(",".join(FMT % v for v in row) + "\n")
    return buf.getvalue()


def read_trajectory_csv(text: str, prob) -> Trajectory:
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and not r[0].startswith("#")]
    if not rows:
        raise ProblemFileError("trajectory", "empty trajectory file")
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ProblemFileError("trajectory", f"non-numeric entry: {exc}") from None
    if data.ndim != 2 or data.shape[0] < 3 or data.shape[1] != len(header):
        raise ProblemFileError("trajectory", "rows must match the header and number at least 3")
    col = {name: i for i, name in enumerate(header)}

    def block(prefix, count, required):
        names = [f"{prefix}{i}" for i in range(1, count + 1)]
        if not all(nm in col for nm in names):
            if required:
                raise ProblemFileError("trajectory", f"missing columns {', '.join(nm for nm in names if nm not in col)}")
            return None
        return data[:, [col[nm] for nm in names]]

    if "t" not in col:
        raise ProblemFileError("trajectory", "missing column t")
    t = data[:, col["t"]]
    h = float(t[1] - t[0])
    expected = (float(prob.t1) - float(prob.tau)) + h * np.arange(len(t))
    if h <= 0 or not np.allclose(t, expected, rtol=0, atol=1e-9 * max(1.0, abs(float(prob.t2)))):
        raise ProblemFileError("trajectory", "t must be the uniform grid from t1 - tau")
    control = isinstance(prob, OptimalControlDelayProblem)
    states = block("q", prob.n, True)
    controls = block("u", prob.m, control) if control else None
    costates = block("p", prob.n, control) if control else None
    try:
        traj = Trajectory(float(prob.t1), float(prob.tau), h, states, controls, costates, prob.prehistory)
    except ValueError as exc:
        raise ProblemFileError("trajectory", str(exc)) from None
    if abs(traj.t2 - float(prob.t2)) > 1e-9 * max(1.0, abs(float(prob.t2))):
        raise ProblemFileError("trajectory", f"grid ends at {traj.t2!r}, expected t2={_num(prob.t2)}")
    return traj


def charge_csv(traj: Trajectory, report) -> str:
    buf = io.StringIO()
    buf.write("t,charge_value,piece\n")
    for name, d in report.intervals.items():
        for t, v in zip(d.times, d.values):
            if np.isfinite(v):
                buf.write(f"{FMT % (t + 0.0)},{FMT % (v + 0.0)},{name}\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# commands


def _load(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from None
    return parse_problem(text)


def _emit(text: str, out: str | None, stdout) -> None:
    if out is None:
        stdout.write(text)
        return
    try:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"{out}: {exc.strerror or exc}") from None


def _need_generators(gens):
    if gens is None:
        raise ProblemFileError("generators", "problem file has no [generators] section")
    return gens


def cmd_derive(args, stdout) -> int:
    prob, _ = _load(args.file)
    stdout.write(render_derive(prob) + "\n")
    return 0


def cmd_invariance(args, stdout) -> int:
    prob, gens = _load(args.file)
    report = check_invariance(prob, _need_generators(gens), InvarianceConfig(args.samples, args.tol_invariance, args.seed))
    stdout.write(report.summary() + "\n")
    for name in ("inner", "outer"):
        if report.symbolic_zero[name]:
            stdout.write(f"{name}: symbolic zero\n")
        else:
            stdout.write(f"{name}: max sampled |residual| = {FMT % report.sampled_max_residual[name]} "
                         f"over {report.samples} samples\n")
    return {Verdict.INVARIANT: 0, Verdict.NOT_INVARIANT: 1, Verdict.INCONCLUSIVE: 2}[report.verdict]


def cmd_charge(args, stdout) -> int:
    prob, gens = _load(args.file)
    stdout.write(render_charge(prob, _need_generators(gens)) + "\n")
    return 0


def _variational_only(prob, what):
    if not isinstance(prob, DelayedVariationalProblem):
        raise ProblemFileError("unsupported", f"{what} needs a variational problem (control problems take --traj)")


def cmd_solve(args, stdout) -> int:
    prob, _ = _load(args.file)
    _variational_only(prob, "solve")
    rep = solve(prob, SolveConfig(h=args.h, gtol=args.gtol, max_iter=args.max_iter))
    summary = (
        f"# converged={str(rep.converged).lower()} iterations={rep.iterations} "
        f"objective={FMT % rep.objective} grad_inf={FMT % rep.grad_norm} gtol={FMT % rep.gtol}\n"
    )
    csv_text = trajectory_csv(rep.trajectory)
    if args.out is None:
        stdout.write(summary + csv_text)
    else:
        _emit(csv_text, args.out, stdout)
        stdout.write(summary)
    return 0 if rep.converged else 1


def cmd_verify(args, stdout) -> int:
    prob, gens = _load(args.file)
    lines = []
    if args.traj is not None:
        try:
            with open(args.traj, encoding="utf-8") as fh:
                traj = read_trajectory_csv(fh.read(), prob)
        except OSError as exc:
            raise OSError(f"{args.traj}: {exc.strerror or exc}") from None
    else:
        _variational_only(prob, "verify without --traj")
        rep = solve(prob, SolveConfig(h=args.h, gtol=args.gtol, max_iter=args.max_iter))
        traj = rep.trajectory
        lines.append(f"# solve converged={str(rep.converged).lower()} grad_inf={FMT % rep.grad_norm}")

    ok = True
    csv_text = ""
    if isinstance(prob, DelayedVariationalProblem):
        systems = {"EL": euler_lagrange(prob), "DR": dubois_reymond(prob)}
        charge = noether_charge(prob, gens) if gens is not None else None
    else:
        systems = {"PMP": pontryagin_system(prob)}
        charge = noether_charge_oc(prob, gens) if gens is not None else None
        dh = dH_dt_check(traj, prob)
        lines.append(f"# dH/dt mismatch max={FMT % dh.max_mismatch}")
    for name, system in systems.items():
        res = residual_check(traj, system)
        for part in ("inner", "outer"):
            lines.append(f"# {name} {part} residual max={FMT % res.max_abs(part)}")
    if charge is not None:
        drift = charge_drift(traj, charge)
        csv_text = charge_csv(traj, drift)
        for part, d in drift.intervals.items():
            within = d.relative_drift <= args.tol
            ok &= bool(within)
            lines.append(
                f"# charge {part} mean={FMT % d.mean} max_deviation={FMT % d.max_deviation} "
                f"relative_drift={FMT % d.relative_drift} tol={FMT % args.tol} {'ok' if within else 'FAIL'}"
            )
        if drift.junction is not None:
            lines.append(f"# junction t={FMT % (float(prob.t2) - float(prob.tau))} "
                         f"inner={FMT % drift.junction[0]} outer={FMT % drift.junction[1]}")
    else:
        lines.append("# no [generators]: charge drift not checked")
    summary = "\n".join(lines) + "\n"
    if args.out is None:
        stdout.write(summary + csv_text)
    else:
        _emit(csv_text, args.out, stdout)
        stdout.write(summary)
    return 0 if ok else 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="delaynoether", description="Conditions, symmetries and constants of motion for delayed problems.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_text, *flags):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("file", help="problem file (TOML)")
        p.set_defaults(fn=fn)
        for flag in flags:
            flag(p)
        return p

    def solve_flags(p):
        p.add_argument("--h", type=float, default=0.01, help="grid step (tau and t2 - t1 must be multiples)")
        p.add_argument("--gtol", type=float, default=1e-10, help="gradient infinity-norm tolerance")
        p.add_argument("--max-iter", type=int, default=50)

    def out_flag(p):
        p.add_argument("--out", help="CSV output path (default: stdout)")

    def inv_flags(p):
        p.add_argument("--samples", type=int, default=200)
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--tol", dest="tol_invariance", type=float, default=1e-9, help="sampled residual tolerance")

    def verify_flags(p):
        p.add_argument("--tol", type=float, default=5e-2, help="relative charge drift tolerance")
        p.add_argument("--traj", help="trajectory CSV to verify instead of solving")

    add("derive", cmd_derive, "print the necessary conditions")
    add("invariance", cmd_invariance, "test a symmetry (exit 0 invariant, 1 not, 2 inconclusive)", inv_flags)
    add("charge", cmd_charge, "print the constant of motion")
    add("solve", cmd_solve, "compute a discrete extremal", solve_flags, out_flag)
    add("verify", cmd_verify, "check conditions and charge drift along a trajectory", solve_flags, out_flag, verify_flags)
    return parser


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        stderr.write(f"error: usage: {exc}\n")
        return EXIT_USAGE
    try:
        return args.fn(args, stdout)
    except ProblemFileError as exc:
        stderr.write(f"error: {exc.category}: {exc.detail}\n")
    except InvalidProblemError as exc:
        stderr.write(f"error: validation: {exc}\n")
    except (SolverError, BindingError) as exc:
        stderr.write(f"error: numeric: {exc}\n")
    except ValueError as exc:
        stderr.write(f"error: domain: {exc}\n")
    except OSError as exc:
        stderr.write(f"error: io: {exc}\n")
        return EXIT_IO
    return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
