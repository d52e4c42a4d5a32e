"""Call-by-value evaluation of pure expressions.

This module has no access to the ledger or to effect machines.  Tail
positions (let bodies, if branches, closure bodies) are evaluated in a loop,
so recursion written with a fixed-point combinator runs in constant Python
stack depth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Mapping, Optional

from idc.core import INT_MAX, INT_MIN
from idc.lang.ast import (
    Apply,
    BinOp,
    BuiltinCall,
    Expr,
    FieldAccess,
    If,
    Lambda,
    Let,
    Literal,
    Var,
)

DEFAULT_STEP_BUDGET = 10_000_000


class EvalError(Exception):
    """Division by zero, type mismatch, missing field or exhausted budget."""


class Env:
    """Persistent scope chain: one binding per frame over a base mapping."""

    __slots__ = ("name", "value", "parent", "base")

    def __init__(self, base: Mapping[str, Any], name: str | None = None,
                 value: Any = None, parent: Optional[Env] = None) -> None:
        self.base = base
        self.name = name
        self.value = value
        self.parent = parent

    def bind(self, name: str, value: Any) -> Env:
        return Env(self.base, name, value, self)

    def lookup(self, name: str) -> Any:
        env: Optional[Env] = self
        while env is not None and env.name is not None:
            if env.name == name:
                return env.value
            env = env.parent
        try:
            return self.base[name]
        except KeyError:
            raise EvalError(f"unbound identifier {name!r}") from None


@dataclass(frozen=True, eq=False)
class Closure:
    param: str
    body: Expr
    env: Env

    def __repr__(self) -> str:
        return f"<closure fn {self.param}>"


def _type_name(v: Any) -> str:
    if v is None:
        return "null"
    if isinstance(v, Closure):
        return "function"
    return {bool: "bool", int: "int", str: "string", list: "list", dict: "map"}.get(type(v), type(v).__name__)


def _int(v: Any, what: str) -> int:
    if type(v) is not int:
        raise EvalError(f"{what} expects int, got {_type_name(v)}")
    return v


def _bool(v: Any, what: str) -> bool:
    if type(v) is not bool:
        raise EvalError(f"{what} expects bool, got {_type_name(v)}")
    return v


def _checked(n: int) -> int:
    if not INT_MIN <= n <= INT_MAX:
        raise EvalError("integer overflow")
    return n


def _eq(a: Any, b: Any) -> bool:
    if isinstance(a, Closure) or isinstance(b, Closure):
        raise EvalError("functions cannot be compared")
    if type(a) is not type(b):
        return False
    if type(a) is list:
        return len(a) == len(b) and all(_eq(x, y) for x, y in zip(a, b))
    if type(a) is dict:
        return a.keys() == b.keys() and all(_eq(a[k], b[k]) for k in a)
    return a == b


def _binop(op: str, a: Any, b: Any) -> Any:
    if op == "+":
        if type(a) is str and type(b) is str:
            return a + b
        if type(a) is int and type(b) is int:
            return _checked(a + b)
        raise EvalError(f"'+' needs two ints or two strings, got {_type_name(a)} and {_type_name(b)}")
    if op == "-":
        return _checked(_int(a, "'-'") - _int(b, "'-'"))
    if op == "*":
        return _checked(_int(a, "'*'") * _int(b, "'*'"))
    if op == "/":
        x, y = _int(a, "'/'"), _int(b, "'/'")
        if y == 0:
            raise EvalError("division by zero")
        q = abs(x) // abs(y)
        return _checked(q if (x >= 0) == (y >= 0) else -q)
    if op == "++":
        if type(a) is list and type(b) is list:
            return a + b
        if type(a) is str and type(b) is str:
            return a + b
        raise EvalError(f"'++' needs two lists or two strings, got {_type_name(a)} and {_type_name(b)}")
    if op == "==":
        return _eq(a, b)
    if op == "!=":
        return not _eq(a, b)
    if op in ("<", "<=", ">", ">="):
        if not ((type(a) is int and type(b) is int) or (type(a) is str and type(b) is str)):
            raise EvalError(f"'{op}' needs two ints or two strings")
        return {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[op]
    raise EvalError(f"unknown operator {op!r}")


def _index(lst: Any, i: Any, what: str) -> int:
    if type(lst) is not list:
        raise EvalError(f"{what} expects a list, got {_type_name(lst)}")
    i = _int(i, what)
    if not 0 <= i < len(lst):
        raise EvalError(f"{what}: index {i} out of range")
    return i


def _map_arg(m: Any, k: Any, what: str) -> None:
    if type(m) is not dict:
        raise EvalError(f"{what} expects a map, got {_type_name(m)}")
    if type(k) is not str:
        raise EvalError(f"{what} expects a string key, got {_type_name(k)}")


def _b_len(x):
    if type(x) in (list, str, dict):
        return len(x)
    raise EvalError(f"len of {_type_name(x)}")


def _b_head(x):
    if type(x) is not list or not x:
        raise EvalError("head of empty or non-list")
    return x[0]


def _b_tail(x):
    if type(x) is not list or not x:
        raise EvalError("tail of empty or non-list")
    return x[1:]


def _b_cons(x, lst):
    if type(lst) is not list:
        raise EvalError("cons onto non-list")
    return [x] + lst


def _b_nth(lst, i):
    return lst[_index(lst, i, "nth")]


def _b_set_nth(lst, i, v):
    i = _index(lst, i, "set_nth")
    out = list(lst)
    out[i] = v
    return out


def _b_get(m, k):
    _map_arg(m, k, "get")
    if k not in m:
        raise EvalError(f"get: no key {k!r}")
    return m[k]


def _b_has(m, k):
    _map_arg(m, k, "has")
    return k in m


def _b_put(m, k, v):
    _map_arg(m, k, "put")
    out = dict(m)
    out[k] = v
    return out


def _b_keys(m):
    if type(m) is not dict:
        raise EvalError("keys of non-map")
    return sorted(m)


def _b_str(x):
    if type(x) is bool:
        return "true" if x else "false"
    if type(x) in (int, str):
        return str(x)
    if x is None:
        return "null"
    raise EvalError(f"str of {_type_name(x)}")


def _b_mod(a, b):
    a, b = _int(a, "mod"), _int(b, "mod")
    if b == 0:
        raise EvalError("mod by zero")
    return a % b


def _b_map(*args):
    out = {}
    for k, v in zip(args[::2], args[1::2]):
        if type(k) is not str:
            raise EvalError("map keys must be strings")
        out[k] = v
    return out


BUILTINS: dict[str, Callable[..., Any]] = {
    "not": lambda b: not _bool(b, "not"),
    "len": _b_len,
    "head": _b_head,
    "tail": _b_tail,
    "cons": _b_cons,
    "nth": _b_nth,
    "set_nth": _b_set_nth,
    "get": _b_get,
    "has": _b_has,
    "put": _b_put,
    "keys": _b_keys,
    "str": _b_str,
    "mod": _b_mod,
    "list": lambda *args: list(args),
    "map": _b_map,
}


class Evaluator:
    def __init__(self, budget: int = DEFAULT_STEP_BUDGET) -> None:
        self.budget = budget
        self.steps = 0

    def tick(self) -> None:
        self.steps += 1
        if self.steps > self.budget:
            raise EvalError(f"step budget of {self.budget} reductions exhausted")

    def eval(self, expr: Expr, env: Env) -> Any:
        while True:
            self.tick()
            if isinstance(expr, Literal):
                return expr.value
            if isinstance(expr, Var):
                return env.lookup(expr.name)
            if isinstance(expr, Let):
                env = env.bind(expr.name, self.eval(expr.value, env))
                expr = expr.body
                continue
            if isinstance(expr, If):
                expr = expr.then if _bool(self.eval(expr.cond, env), "if") else expr.orelse
                continue
            if isinstance(expr, BinOp):
                left = self.eval(expr.left, env)
                # and/or short-circuit like if
                if expr.op == "and":
                    if not _bool(left, "and"):
                        return False
                    return _bool(self.eval(expr.right, env), "and")
                if expr.op == "or":
                    if _bool(left, "or"):
                        return True
                    return _bool(self.eval(expr.right, env), "or")
                return _binop(expr.op, left, self.eval(expr.right, env))
            if isinstance(expr, FieldAccess):
                base = self.eval(expr.expr, env)
                if type(base) is not dict:
                    raise EvalError(f"field .{expr.key} of {_type_name(base)}")
                if expr.key not in base:
                    raise EvalError(f"no field {expr.key!r}")
                return base[expr.key]
            if isinstance(expr, Lambda):
                return Closure(expr.param, expr.body, env)
            if isinstance(expr, Apply):
                fn = self.eval(expr.fn, env)
                arg = self.eval(expr.arg, env)
                if not isinstance(fn, Closure):
                    raise EvalError(f"cannot apply {_type_name(fn)}")
                env = fn.env.bind(fn.param, arg)
                expr = fn.body
                continue
            if isinstance(expr, BuiltinCall):
                args = [self.eval(a, env) for a in expr.args]
                return BUILTINS[expr.name](*args)
            raise EvalError(f"not an expression: {expr!r}")


def eval_expr(expr: Expr, env: Mapping[str, Any], *, budget: int = DEFAULT_STEP_BUDGET) -> Any:
    """Evaluate ``expr`` with top-level bindings ``env``."""
    return Evaluator(budget).eval(expr, Env(env))
