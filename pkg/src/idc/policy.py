"""Governance interpreter: total evaluation of a finite rule set.

A PolicySet is a list of rules, each a predicate plus the decision it votes
for when the predicate matches.  ``decide`` evaluates every rule and combines
the votes deny > escalate > allow > default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Union

from idc.core import Decision, Intent, RecordTemplate

MAX_PREDICATE_DEPTH = 32
MAX_PREDICATES_PER_RULE = 1024

CMP_OPS = ("<", "<=", "==", ">=", ">", "!=")


class PolicyError(ValueError):
    """Malformed policy document or predicate tree."""


class _Absent:
    _instance = None

    def __new__(cls) -> _Absent:
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "ABSENT"

    def __bool__(self) -> bool:
        return False


ABSENT = _Absent()


@dataclass(frozen=True)
class StringPrefix:
    field_path: str
    prefix: str


@dataclass(frozen=True)
class SetMember:
    field_path: str
    allowed: tuple[str, ...]


@dataclass(frozen=True)
class NumericCmp:
    field_path: str
    op: str
    bound: int


@dataclass(frozen=True)
class AllOf:
    items: tuple[Predicate, ...]


@dataclass(frozen=True)
class AnyOf:
    items: tuple[Predicate, ...]


@dataclass(frozen=True)
class Negate:
    item: Predicate


@dataclass(frozen=True)
class AlwaysTrue:
    pass


Predicate = Union[StringPrefix, SetMember, NumericCmp, AllOf, AnyOf, Negate, AlwaysTrue]


@dataclass(frozen=True)
class PolicyRule:
    id: str
    predicate: Predicate
    effect: Decision


@dataclass(frozen=True)
class PolicySet:
    policy_id: str
    rules: tuple[PolicyRule, ...] = ()
    default_decision: Decision = Decision.DENY

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for rule in self.rules:
            if not rule.id:
                raise PolicyError("rule id must be non-empty")
            if rule.id in seen:
                raise PolicyError(f"duplicate rule id {rule.id!r}")
            seen.add(rule.id)
            check_predicate(rule.predicate)

    def rule_ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.rules)

    def with_rule(self, rule: PolicyRule) -> PolicySet:
        """Copy with the same-id rule replaced."""
        rules = tuple(rule if r.id == rule.id else r for r in self.rules)
        return PolicySet(self.policy_id, rules, self.default_decision)


@dataclass(frozen=True)
class GovernanceOutcome:
    decision: Decision
    applied_rules: tuple[str, ...]
    record_template: RecordTemplate


def check_predicate(p: Predicate) -> None:
    """Enforce the depth and size bounds that make evaluation trivially total."""
    count = 0
    stack = [(p, 1)]
    while stack:
        node, depth = stack.pop()
        count += 1
        if depth > MAX_PREDICATE_DEPTH:
            raise PolicyError(f"predicate deeper than {MAX_PREDICATE_DEPTH}")
        if count > MAX_PREDICATES_PER_RULE:
            raise PolicyError(f"more than {MAX_PREDICATES_PER_RULE} predicates in one rule")
        if isinstance(node, (AllOf, AnyOf)):
            stack.extend((child, depth + 1) for child in node.items)
        elif isinstance(node, Negate):
            stack.append((node.item, depth + 1))
        elif isinstance(node, NumericCmp):
            if node.op not in CMP_OPS:
                raise PolicyError(f"unknown comparison {node.op!r}")
            if type(node.bound) is not int:
                raise PolicyError("numeric bound must be an integer")
        elif isinstance(node, SetMember):
            if any(type(a) is not str for a in node.allowed):
                raise PolicyError("set_member allows only strings")
        elif not isinstance(node, (StringPrefix, AlwaysTrue)):
            raise PolicyError(f"not a predicate: {node!r}")


def resolve_field(intent: Intent, context: Mapping[str, Any], field_path: str) -> Any:
    """Look up a dotted path in the flat view of (intent, context)."""
    head, sep, rest = field_path.partition(".")
    if head == "action":
        base: Any = intent.action
    elif head == "target":
        base = intent.target
    elif head == "params":
        base = intent.params
    elif head == "context":
        base = context
    else:
        return ABSENT
    if not sep:
        return base
    for key in rest.split("."):
        if type(base) is not dict or key not in base:
            return ABSENT
        base = base[key]
    return base


def _compare(op: str, value: int, bound: int) -> bool:
    if op == "<":
        return value < bound
    if op == "<=":
        return value <= bound
    if op == "==":
        return value == bound
    if op == ">=":
        return value >= bound
    if op == ">":
        return value > bound
    return value != bound


def evaluate_predicate(p: Predicate, intent: Intent, context: Mapping[str, Any]) -> bool:
    if isinstance(p, StringPrefix):
        v = resolve_field(intent, context, p.field_path)
        return type(v) is str and v.startswith(p.prefix)
    if isinstance(p, SetMember):
        v = resolve_field(intent, context, p.field_path)
        return type(v) is str and v in p.allowed
    if isinstance(p, NumericCmp):
        v = resolve_field(intent, context, p.field_path)
        # bool is an int subclass; treat it as a type mismatch
        return type(v) is int and _compare(p.op, v, p.bound)
    if isinstance(p, AllOf):
        return all(evaluate_predicate(c, intent, context) for c in p.items)
    if isinstance(p, AnyOf):
        return any(evaluate_predicate(c, intent, context) for c in p.items)
    if isinstance(p, Negate):
        return not evaluate_predicate(p.item, intent, context)
    if isinstance(p, AlwaysTrue):
        return True
    raise PolicyError(f"not a predicate: {p!r}")


def combine(votes: set[Decision], default: Decision) -> Decision:
    for d in (Decision.DENY, Decision.ESCALATE, Decision.ALLOW):
        if d in votes:
            return d
    return default


def decide(policy: PolicySet, intent: Intent, context: Mapping[str, Any]) -> GovernanceOutcome:
    matched = [r for r in policy.rules if evaluate_predicate(r.predicate, intent, context)]
    decision = combine({r.effect for r in matched}, policy.default_decision)
    applied = tuple(r.id for r in matched)
    template = RecordTemplate(
        intent=intent,
        decision=decision,
        applied_rules=applied,
        policy_id=policy.policy_id,
        context=dict(context),
    )
    return GovernanceOutcome(decision, applied, template)


# -- policy documents ---------------------------------------------------------


def predicate_from_json(obj: Any) -> Predicate:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise PolicyError(f"predicate must be an object with 'kind': {obj!r}")
    kind = obj["kind"]
    fields = {
        "string_prefix": {"field_path", "prefix"},
        "set_member": {"field_path", "allowed"},
        "numeric_cmp": {"field_path", "op", "bound"},
        "all_of": {"predicates"},
        "any_of": {"predicates"},
        "negate": {"predicate"},
        "always_true": set(),
    }
    if kind not in fields:
        raise PolicyError(f"unknown predicate kind {kind!r}")
    if set(obj) - {"kind"} != fields[kind]:
        raise PolicyError(f"{kind} expects fields {sorted(fields[kind])}, got {sorted(set(obj) - {'kind'})}")
    if "field_path" in obj and (type(obj["field_path"]) is not str or not obj["field_path"]):
        raise PolicyError("field_path must be a non-empty string")
    if kind == "string_prefix":
        if type(obj["prefix"]) is not str:
            raise PolicyError("prefix must be a string")
        return StringPrefix(obj["field_path"], obj["prefix"])
    if kind == "set_member":
        allowed = obj["allowed"]
        if type(allowed) is not list or any(type(a) is not str for a in allowed):
            raise PolicyError("allowed must be a list of strings")
        return SetMember(obj["field_path"], tuple(allowed))
    if kind == "numeric_cmp":
        if obj["op"] not in CMP_OPS:
            raise PolicyError(f"unknown comparison {obj['op']!r}")
        if type(obj["bound"]) is not int:
            raise PolicyError("bound must be an integer")
        return NumericCmp(obj["field_path"], obj["op"], obj["bound"])
    if kind in ("all_of", "any_of"):
        items = obj["predicates"]
        if type(items) is not list:
            raise PolicyError(f"{kind}.predicates must be a list")
        children = tuple(predicate_from_json(c) for c in items)
        return AllOf(children) if kind == "all_of" else AnyOf(children)
    if kind == "negate":
        return Negate(predicate_from_json(obj["predicate"]))
    return AlwaysTrue()


def predicate_to_json(p: Predicate) -> dict:
    if isinstance(p, StringPrefix):
        return {"kind": "string_prefix", "field_path": p.field_path, "prefix": p.prefix}
    if isinstance(p, SetMember):
        return {"kind": "set_member", "field_path": p.field_path, "allowed": list(p.allowed)}
    if isinstance(p, NumericCmp):
        return {"kind": "numeric_cmp", "field_path": p.field_path, "op": p.op, "bound": p.bound}
    if isinstance(p, AllOf):
        return {"kind": "all_of", "predicates": [predicate_to_json(c) for c in p.items]}
    if isinstance(p, AnyOf):
        return {"kind": "any_of", "predicates": [predicate_to_json(c) for c in p.items]}
    if isinstance(p, Negate):
        return {"kind": "negate", "predicate": predicate_to_json(p.item)}
    return {"kind": "always_true"}


def _decision(name: Any) -> Decision:
    try:
        return Decision(name)
    except ValueError:
        raise PolicyError(f"unknown decision {name!r}") from None


def policy_from_json(doc: Any) -> PolicySet:
    if not isinstance(doc, dict):
        raise PolicyError("policy document must be an object")
    unknown = set(doc) - {"policy_id", "default", "rules"}
    if unknown or "policy_id" not in doc or "rules" not in doc:
        raise PolicyError("policy needs 'policy_id' and 'rules' (and optional 'default')")
    if type(doc["policy_id"]) is not str or not doc["policy_id"]:
        raise PolicyError("policy_id must be a non-empty string")
    if type(doc["rules"]) is not list:
        raise PolicyError("rules must be a list")
    rules = []
    for r in doc["rules"]:
        if not isinstance(r, dict) or set(r) != {"id", "effect", "predicate"}:
            raise PolicyError(f"rule needs exactly id, effect, predicate: {r!r}")
        if type(r["id"]) is not str:
            raise PolicyError("rule id must be a string")
        rules.append(PolicyRule(r["id"], predicate_from_json(r["predicate"]), _decision(r["effect"])))
    return PolicySet(doc["policy_id"], tuple(rules), _decision(doc.get("default", "deny")))


def policy_to_json(policy: PolicySet) -> dict:
    return {
        "policy_id": policy.policy_id,
        "default": policy.default_decision.value,
        "rules": [
            {"id": r.id, "effect": r.effect.value, "predicate": predicate_to_json(r.predicate)}
            for r in policy.rules
        ],
    }


def load_policy(path: str | Path) -> PolicySet:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise PolicyError(f"{path}: {exc}") from None
    return policy_from_json(doc)
