from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import strategies as st

from delaynoether.parsing import parse_expr
from delaynoether.problem import DelayedVariationalProblem, GeneratorSet, Prehistory
from delaynoether.symexpr import T, Const, Func, Pow, Sym, dq, q

DATA = Path(__file__).parent / "data"


# ---------------------------------------------------------------------------
# acceptance summary lines


def pytest_configure(config):
    config.criteria_lines = []


@pytest.fixture
def record_criterion(request):
    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}: {detail}"
        print(line)
        request.config.criteria_lines.append(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    if config.criteria_lines:
        terminalreporter.section("acceptance criteria")
        for line in config.criteria_lines:
            terminalreporter.write_line(line)


# ---------------------------------------------------------------------------
# fixtures


def example1() -> DelayedVariationalProblem:
    pre = Prehistory.from_exprs([parse_expr("-t")], -1, 0)
    return DelayedVariationalProblem(1, parse_expr("(dq1 + dq1_tau)^2"), 1, 0, 3, pre, (2,))


def time_translation(n: int = 1) -> GeneratorSet:
    return GeneratorSet(Const(1), tuple(Const(0) for _ in range(n)))


@pytest.fixture
def ex1():
    return example1()


# ---------------------------------------------------------------------------
# expression strategies

TRAJECTORY_SYMBOLS = [q(1), dq(1), q(1, -1), dq(1, -1), q(2), dq(2, 1)]
ALL_SYMBOLS = TRAJECTORY_SYMBOLS + [T]


def expressions(symbols=ALL_SYMBOLS, funcs=("sin", "cos", "exp"), exponents=(2, 3), max_leaves=8):
    leaves = st.one_of(
        st.sampled_from([Sym(s) for s in symbols]),
        st.integers(-3, 3).map(Const),
    )

    def extend(children):
        ops = [
            st.tuples(children, children).map(lambda ab: ab[0] + ab[1]),
            st.tuples(children, children).map(lambda ab: ab[0] * ab[1]),
            st.tuples(children, children).map(lambda ab: ab[0] - ab[1]),
            children.map(lambda a: -a),
            st.tuples(children, st.sampled_from(exponents)).map(lambda ae: Pow(ae[0], ae[1])),
        ]
        if funcs:
            ops.append(st.tuples(st.sampled_from(funcs), children).map(lambda fa: Func(fa[0], fa[1])))
        return st.one_of(*ops)

    return st.recursive(leaves, extend, max_leaves=max_leaves)
