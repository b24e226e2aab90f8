"""Geometry program parsing, execution and multiple-choice adjudication.

A program is a flat token stream of ``op arg arg ...`` groups. Step ``i``
defines the intermediate ``V_i``; arguments are number variables ``N_k``,
earlier intermediates ``V_j`` (``j < i``) or constants ``C_<number>`` /
``C_PI``. The answer is the value of the last step.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

from .errors import ParseError

OP_TABLE_VERSION = "geo-ops-1"


class ExecError(ArithmeticError):
    """Raised inside an op when its arguments are outside the op's domain."""


def _divide(a, b):
    if b == 0:
        raise ExecError("division by zero")
    return a / b


def _sqrt(a):
    if a < 0:
        raise ExecError("square root of a negative number")
    return math.sqrt(a)


def _gougu_minus(a, b):
    # factored form loses less precision when a and b are close
    return _sqrt((a - b) * (a + b))


def _tan_deg(a):
    # tan is undefined at 90° + k·180°
    offset = math.remainder(a - 90.0, 180.0)
    if abs(offset) <= 1e-9:
        raise ExecError(f"tan undefined at {a} degrees")
    return math.tan(math.radians(a))


@dataclass(frozen=True)
class Op:
    name: str
    arity: int
    formula: str
    fn: Callable = field(repr=False, compare=False)


_OPS = [
    Op("g_add", 2, "a + b", lambda a, b: a + b),
    Op("g_minus", 2, "a - b", lambda a, b: a - b),
    Op("g_mul", 2, "a * b", lambda a, b: a * b),
    Op("g_divide", 2, "a / b", _divide),
    Op("g_half", 1, "a / 2", lambda a: a / 2.0),
    Op("g_double", 1, "2 * a", lambda a: 2.0 * a),
    Op("g_sqrt", 1, "sqrt(a)", _sqrt),
    Op("g_pow2", 1, "a ** 2", lambda a: a * a),
    Op("gougu_plus", 2, "sqrt(a**2 + b**2)", lambda a, b: math.sqrt(a * a + b * b)),
    Op("gougu_minus", 2, "sqrt(a**2 - b**2)", _gougu_minus),
    Op("g_sin", 1, "sin(a degrees)", lambda a: math.sin(math.radians(a))),
    Op("g_cos", 1, "cos(a degrees)", lambda a: math.cos(math.radians(a))),
    Op("g_tan", 1, "tan(a degrees)", _tan_deg),
    Op("proportion", 2, "a * b", lambda a, b: a * b),
    Op("circle_area", 1, "pi * a ** 2", lambda a: math.pi * a * a),
    Op("circle_perimeter", 1, "2 * pi * a", lambda a: 2.0 * math.pi * a),
]
OP_TABLE = {op.name: op for op in _OPS}

_NUM_RE = re.compile(r"^N_(\d+)$")
_VAR_RE = re.compile(r"^V_(\d+)$")
_CONST_RE = re.compile(r"^C_(PI|\d+(?:\.\d+)?)$")


def op_table_json() -> str:
    """The op table as published JSON (name, arity, formula)."""
    return json.dumps(
        {
            "version": OP_TABLE_VERSION,
            "ops": [{"name": op.name, "arity": op.arity, "formula": op.formula} for op in _OPS],
            "constants": "C_<k> = k for a decimal literal k; C_PI = pi",
        },
        indent=2,
    )


def constant_value(token: str) -> float:
    m = _CONST_RE.match(token)
    if not m:
        raise ParseError(f"not a constant token: {token!r}")
    return math.pi if m.group(1) == "PI" else float(m.group(1))


def is_argument(token: str) -> bool:
    return bool(_NUM_RE.match(token) or _VAR_RE.match(token) or _CONST_RE.match(token))


@dataclass(frozen=True)
class Step:
    op: str
    args: tuple


@dataclass
class Program:
    steps: list

    def __len__(self):
        return len(self.steps)

    def tokens(self) -> list[str]:
        out = []
        for s in self.steps:
            out.append(s.op)
            out.extend(s.args)
        return out


def parse_program(tokens: Sequence[str] | str) -> Program:
    if isinstance(tokens, str):
        tokens = tokens.replace(";", " ").split()
    tokens = list(tokens)
    steps = []
    i = 0
    while i < len(tokens):
        name = tokens[i]
        op = OP_TABLE.get(name)
        if op is None:
            raise ParseError(f"unknown op {name!r} at position {i}")
        args = tokens[i + 1:i + 1 + op.arity]
        if len(args) < op.arity or any(a in OP_TABLE for a in args):
            raise ParseError(f"{name} expects {op.arity} arguments at position {i}")
        for a in args:
            if not is_argument(a):
                raise ParseError(f"bad argument {a!r} for {name}")
            m = _VAR_RE.match(a)
            if m and int(m.group(1)) >= len(steps):
                raise ParseError(f"{a} referenced before it is defined (step {len(steps)})")
        steps.append(Step(name, tuple(args)))
        i += 1 + op.arity
    if not steps:
        raise ParseError("empty program")
    return Program(steps)


class Status(Enum):
    VALUE = "value"
    NO_RESULT = "no_result"
    ERROR = "error"


@dataclass
class ExecResult:
    status: Status
    value: float | None = None
    reason: str | None = None
    trace: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status is Status.VALUE

    def to_dict(self) -> dict:
        out = {"status": self.status.value, "trace": list(self.trace)}
        if self.value is not None:
            out["value"] = self.value
        if self.reason is not None:
            out["reason"] = self.reason
        return out


def execute(program: Program | Sequence[str] | str, number_table: dict) -> ExecResult:
    if not isinstance(program, Program):
        try:
            program = parse_program(program)
        except ParseError as exc:
            return ExecResult(Status.ERROR, reason=f"parse: {exc}")
    trace: list[float] = []

    def resolve(token):
        if token.startswith("N_"):
            if token not in number_table:
                raise ExecError(f"unknown number variable {token}")
            return float(number_table[token])
        if token.startswith("V_"):
            return trace[int(token[2:])]
        return constant_value(token)

    for step in program.steps:
        try:
            value = OP_TABLE[step.op].fn(*(resolve(a) for a in step.args))
        except (ExecError, OverflowError, ValueError) as exc:
            return ExecResult(Status.ERROR, reason=str(exc), trace=trace)
        if not math.isfinite(value):
            return ExecResult(Status.ERROR, reason=f"{step.op} produced a non-finite value", trace=trace)
        trace.append(value)
    return ExecResult(Status.VALUE, value=trace[-1], trace=trace)


def choice_matches(value: float, choice: float, rel_tol: float = 5e-3) -> bool:
    return abs(value - choice) <= rel_tol * max(1.0, abs(choice))


def match_choice(value: float, choices: Sequence[float], rel_tol: float = 5e-3) -> int | None:
    """Index of the closest choice within tolerance, or None."""
    best, best_gap = None, math.inf
    for i, c in enumerate(choices):
        gap = abs(value - c)
        if choice_matches(value, c, rel_tol) and gap < best_gap:
            best, best_gap = i, gap
    return best


@dataclass
class Adjudication:
    index: int | None
    steps_used: int | None = None
    beam_rank: int | None = None
    value: float | None = None

    @property
    def no_result(self) -> bool:
        return self.index is None


def adjudicate(beams: Sequence, number_table: dict, choices: Sequence[float],
               rel_tol: float = 5e-3) -> Adjudication:
    """Pick the first beam (in the given order) whose value matches a choice.

    ``beams`` holds token sequences, best first. Beams that fail to parse or
    execute are skipped. If no beam matches, the result has ``index=None``
    ("No Result").
    """
    for rank, tokens in enumerate(beams):
        try:
            program = parse_program(tokens)
        except ParseError:
            continue
        result = execute(program, number_table)
        if not result.ok:
            continue
        idx = match_choice(result.value, choices, rel_tol)
        if idx is not None:
            return Adjudication(idx, steps_used=len(program), beam_rank=rank, value=result.value)
    return Adjudication(None)
