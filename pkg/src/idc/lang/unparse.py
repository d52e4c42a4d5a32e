"""Render a ProgramAst back to source text that re-parses to the same tree."""

from __future__ import annotations

from typing import Any

from idc.lang.ast import (
    Apply,
    AskStep,
    BinOp,
    BuiltinCall,
    ComputeStep,
    Expr,
    FieldAccess,
    If,
    Lambda,
    Let,
    Literal,
    ProgramAst,
    Var,
)


def _string(s: str) -> str:
    out = s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")
    return f'"{out}"'


def _literal(v: Any) -> str:
    if v is None:
        return "null"
    if v is True:
        return "true"
    if v is False:
        return "false"
    if type(v) is int:
        return str(v)
    if type(v) is str:
        return _string(v)
    if type(v) is list:
        return "[" + ", ".join(_literal(x) for x in v) + "]"
    return "{" + ", ".join(f"{_string(k)}: {_literal(x)}" for k, x in v.items()) + "}"


def _postfix(e: Expr) -> str:
    # operands of '.' and application must not be bare binops or binders
    if isinstance(e, (Var, FieldAccess, Apply, BuiltinCall)):
        return unparse_expr(e)
    if isinstance(e, Literal) and not (type(e.value) is int and e.value < 0):
        return unparse_expr(e)
    return f"({unparse_expr(e)})"


def unparse_expr(e: Expr) -> str:
    if isinstance(e, Literal):
        return _literal(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, FieldAccess):
        return f"{_postfix(e.expr)}.{e.key}"
    if isinstance(e, Let):
        return f"(let {e.name} = {unparse_expr(e.value)} in {unparse_expr(e.body)})"
    if isinstance(e, If):
        return f"(if {unparse_expr(e.cond)} then {unparse_expr(e.then)} else {unparse_expr(e.orelse)})"
    if isinstance(e, BinOp):
        return f"({unparse_expr(e.left)} {e.op} {unparse_expr(e.right)})"
    if isinstance(e, Lambda):
        return f"(fn {e.param} => {unparse_expr(e.body)})"
    if isinstance(e, Apply):
        return f"{_postfix(e.fn)}({unparse_expr(e.arg)})"
    if isinstance(e, BuiltinCall):
        return f"{e.name}(" + ", ".join(unparse_expr(a) for a in e.args) + ")"
    raise TypeError(f"not an expression: {e!r}")


def unparse(ast: ProgramAst) -> str:
    lines = [f"program {ast.name}"]
    if ast.capabilities:
        lines.append("capabilities:")
        lines.extend(f"  {c}" for c in ast.capabilities)
    for step in ast.steps:
        if isinstance(step, ComputeStep):
            lines.append(f"step {step.name}: compute {unparse_expr(step.expr)}")
        elif isinstance(step, AskStep):
            lines.append(f"step {step.name}: ask {{")
            lines.append(f"  machine {_string(step.machine)}")
            lines.append("  input {")
            lines.extend(f"    {k}: {unparse_expr(v)}" for k, v in step.inputs)
            lines.append("  }")
            if step.on_deny != "halt":
                lines.append(f"  on_deny {step.on_deny}")
            lines.append("}")
    return "\n".join(lines) + "\n"
