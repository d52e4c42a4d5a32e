"""Naive reference interpreter used to cross-check ``policy.decide``.

Shares only the domain types with the real engine.  Predicates are first
flattened into a plain tuple form, then interpreted with an explicit stack
machine, so a bug would have to be made twice in different shapes to slip
through the differential tests.
"""

from __future__ import annotations

import operator
from typing import Any, Mapping

from idc.core import Decision, Intent, RecordTemplate
from idc.policy import (
    AllOf,
    AlwaysTrue,
    AnyOf,
    GovernanceOutcome,
    Negate,
    NumericCmp,
    PolicySet,
    SetMember,
    StringPrefix,
)

_MISSING = object()

_OPS = {
    "<": operator.lt,
    "<=": operator.le,
    "==": operator.eq,
    ">=": operator.ge,
    ">": operator.gt,
    "!=": operator.ne,
}


def _flatten(p: Any) -> tuple:
    if type(p) is StringPrefix:
        return ("prefix", p.field_path, p.prefix)
    if type(p) is SetMember:
        return ("member", p.field_path, frozenset(p.allowed))
    if type(p) is NumericCmp:
        return ("cmp", p.field_path, p.op, p.bound)
    if type(p) is AllOf:
        return ("and",) + tuple(_flatten(c) for c in p.items)
    if type(p) is AnyOf:
        return ("or",) + tuple(_flatten(c) for c in p.items)
    if type(p) is Negate:
        return ("not", _flatten(p.item))
    if type(p) is AlwaysTrue:
        return ("true",)
    raise TypeError(p)


def _lookup(view: dict, path: str) -> Any:
    parts = path.split(".")
    cur: Any = view
    for i, part in enumerate(parts):
        # the flat view's top level is the only place scalars may sit
        if not isinstance(cur, dict) or isinstance(cur, bool):
            return _MISSING
        if part not in cur:
            return _MISSING
        cur = cur[part]
        if i == 0 and part in ("action", "target") and len(parts) > 1:
            return _MISSING
    return cur


def _atom(node: tuple, view: dict) -> bool:
    tag = node[0]
    v = _lookup(view, node[1])
    if v is _MISSING:
        return False
    if tag == "prefix":
        return isinstance(v, str) and v[: len(node[2])] == node[2]
    if tag == "member":
        return isinstance(v, str) and v in node[2]
    if isinstance(v, bool) or not isinstance(v, int):
        return False
    return _OPS[node[2]](v, node[3])


def _truth(tree: tuple, view: dict) -> bool:
    # post-order evaluation with an explicit stack; every child is visited
    results: list[bool] = []
    work: list[tuple[str, Any]] = [("visit", tree)]
    while work:
        kind, node = work.pop()
        if kind == "visit":
            tag = node[0]
            if tag in ("prefix", "member", "cmp"):
                results.append(_atom(node, view))
            elif tag == "true":
                results.append(True)
            else:
                children = node[1:]
                work.append(("reduce", (tag, len(children))))
                for child in reversed(children):
                    work.append(("visit", child))
        else:
            tag, n = node
            vals = results[len(results) - n:] if n else []
            del results[len(results) - n:]
            if tag == "and":
                out = True
                for b in vals:
                    out = out and b
            elif tag == "or":
                out = False
                for b in vals:
                    out = out or b
            else:
                out = not vals[0]
            results.append(out)
    return results[0]


def oracle_decide(policy: PolicySet, intent: Intent, context: Mapping[str, Any]) -> GovernanceOutcome:
    view = {
        "action": intent.action,
        "target": intent.target,
        "params": intent.params,
        "context": dict(context),
    }
    applied = []
    tally = {Decision.ALLOW: 0, Decision.DENY: 0, Decision.ESCALATE: 0}
    for rule in policy.rules:
        if _truth(_flatten(rule.predicate), view):
            applied.append(rule.id)
            tally[rule.effect] += 1
    if tally[Decision.DENY] > 0:
        decision = Decision.DENY
    elif tally[Decision.ESCALATE] > 0:
        decision = Decision.ESCALATE
    elif tally[Decision.ALLOW] > 0:
        decision = Decision.ALLOW
    else:
        decision = policy.default_decision
    template = RecordTemplate(intent, decision, tuple(applied), policy.policy_id, dict(context))
    return GovernanceOutcome(decision, tuple(applied), template)
