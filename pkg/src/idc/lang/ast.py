"""Syntax tree for intent-driven programs.

Expressions are pure.  The only step form that reaches the outside world is
AskStep; there is deliberately no other effect node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Union

from idc.core import value_equals

BINARY_OPS = ("+", "-", "*", "/", "++", "==", "!=", "<", "<=", ">", ">=", "and", "or")

KEYWORDS = frozenset(
    {
        "program", "capabilities", "step", "compute", "ask", "machine", "input",
        "on_deny", "continue", "halt", "let", "in", "if", "then", "else", "fn",
        "and", "or", "true", "false", "null",
    }
)

# name -> arity; None means variadic
BUILTIN_ARITY: dict[str, int | None] = {
    "not": 1,
    "len": 1,
    "head": 1,
    "tail": 1,
    "cons": 2,
    "nth": 2,
    "set_nth": 3,
    "get": 2,
    "has": 2,
    "put": 3,
    "keys": 1,
    "str": 1,
    "mod": 2,
    "list": None,
    "map": None,
}

RESERVED_NAMES = KEYWORDS | set(BUILTIN_ARITY) | {"context"}


@dataclass(frozen=True, eq=False)
class Literal:
    value: Any

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Literal) and value_equals(self.value, other.value)

    def __hash__(self) -> int:
        return hash(repr(self.value))


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class FieldAccess:
    expr: Expr
    key: str


@dataclass(frozen=True)
class Let:
    name: str
    value: Expr
    body: Expr


@dataclass(frozen=True)
class If:
    cond: Expr
    then: Expr
    orelse: Expr


@dataclass(frozen=True)
class BinOp:
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Lambda:
    param: str
    body: Expr


@dataclass(frozen=True)
class Apply:
    fn: Expr
    arg: Expr


@dataclass(frozen=True)
class BuiltinCall:
    name: str
    args: tuple[Expr, ...]


Expr = Union[Literal, Var, FieldAccess, Let, If, BinOp, Lambda, Apply, BuiltinCall]
EXPR_TYPES = (Literal, Var, FieldAccess, Let, If, BinOp, Lambda, Apply, BuiltinCall)


@dataclass(frozen=True)
class ComputeStep:
    name: str
    expr: Expr

    @property
    def binding(self) -> str:
        return self.name


@dataclass(frozen=True)
class AskStep:
    name: str
    machine: str
    inputs: tuple[tuple[str, Expr], ...]
    on_deny: str = "halt"

    @property
    def binding(self) -> str:
        return self.name


Step = Union[ComputeStep, AskStep]
STEP_TYPES = (ComputeStep, AskStep)


@dataclass(frozen=True)
class ProgramAst:
    name: str
    capabilities: tuple[str, ...] = ()
    steps: tuple[Step, ...] = ()

    def ask_steps(self) -> list[AskStep]:
        return [s for s in self.steps if isinstance(s, AskStep)]


def children(expr: Expr) -> tuple[Expr, ...]:
    if isinstance(expr, FieldAccess):
        return (expr.expr,)
    if isinstance(expr, Let):
        return (expr.value, expr.body)
    if isinstance(expr, If):
        return (expr.cond, expr.then, expr.orelse)
    if isinstance(expr, BinOp):
        return (expr.left, expr.right)
    if isinstance(expr, Lambda):
        return (expr.body,)
    if isinstance(expr, Apply):
        return (expr.fn, expr.arg)
    if isinstance(expr, BuiltinCall):
        return expr.args
    return ()


def expr_depth(expr: Expr) -> int:
    deepest = 0
    stack = [(expr, 1)]
    while stack:
        e, d = stack.pop()
        deepest = max(deepest, d)
        stack.extend((c, d + 1) for c in children(e))
    return deepest


def free_vars(expr: Expr) -> set[str]:
    """Names referenced but not bound inside ``expr``."""
    if isinstance(expr, Literal):
        return set()
    if isinstance(expr, Var):
        return {expr.name}
    if isinstance(expr, FieldAccess):
        return free_vars(expr.expr)
    if isinstance(expr, Let):
        return free_vars(expr.value) | (free_vars(expr.body) - {expr.name})
    if isinstance(expr, If):
        return free_vars(expr.cond) | free_vars(expr.then) | free_vars(expr.orelse)
    if isinstance(expr, BinOp):
        return free_vars(expr.left) | free_vars(expr.right)
    if isinstance(expr, Lambda):
        return free_vars(expr.body) - {expr.param}
    if isinstance(expr, Apply):
        return free_vars(expr.fn) | free_vars(expr.arg)
    out: set[str] = set()
    for a in expr.args:
        out |= free_vars(a)
    return out


def context_keys(expr: Expr) -> set[str]:
    """First-level keys read through ``context.<key>`` in ``expr``."""
    keys: set[str] = set()
    stack = [expr]
    while stack:
        e = stack.pop()
        if isinstance(e, FieldAccess):
            if isinstance(e.expr, Var) and e.expr.name == "context":
                keys.add(e.key)
                continue
        stack.extend(children(e))
    return keys
