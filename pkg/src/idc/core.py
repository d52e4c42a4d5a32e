"""Shared domain types, canonical serialization and the chain hash.

Values are plain Python data: ``int`` (64-bit signed), ``bool``, ``str``,
``list``, ``dict`` with ``str`` keys, and ``None`` for unit.  Floats are not
Values.  Canonical bytes are a sorted-key, whitespace-free JSON subset, so a
ledger line can be checked by anyone with a JSON parser and SHA-256.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Mapping

INT_MIN = -(2**63)
INT_MAX = 2**63 - 1
MAX_NODES = 1_000_000
MAX_DEPTH = 256

GENESIS_HASH = hashlib.sha256(b"IDC-GENESIS-V1").hexdigest()


class SerializationError(ValueError):
    """A value is not a finite, serializable Value."""


class Decision(str, enum.Enum):
    ALLOW = "allow"
    DENY = "deny"
    ESCALATE = "escalate"

    def __str__(self) -> str:
        return self.value


RECORD_KINDS = ("decision", "resolution", "realization-failed")


def check_value(v: Any, *, max_nodes: int = MAX_NODES) -> int:
    """Validate ``v`` as a Value and return its node count.

    Raises SerializationError for floats, non-string keys, out-of-range
    integers, unencodable strings, or values exceeding the node/depth bounds.
    """
    count = 0
    stack: list[tuple[Any, int]] = [(v, 1)]
    while stack:
        node, depth = stack.pop()
        count += 1
        if count > max_nodes:
            raise SerializationError(f"value exceeds {max_nodes} nodes")
        if depth > MAX_DEPTH:
            raise SerializationError(f"value nested deeper than {MAX_DEPTH}")
        if node is None or type(node) is bool:
            continue
        if type(node) is int:
            if not INT_MIN <= node <= INT_MAX:
                raise SerializationError(f"integer out of 64-bit range: {node}")
        elif type(node) is str:
            _check_str(node)
        elif type(node) is list:
            stack.extend((item, depth + 1) for item in node)
        elif type(node) is dict:
            for key, item in node.items():
                if type(key) is not str:
                    raise SerializationError(f"map key must be a string, got {key!r}")
                _check_str(key)
                stack.append((item, depth + 1))
        else:
            raise SerializationError(f"not a Value: {type(node).__name__}")
    return count


def _check_str(s: str) -> None:
    try:
        s.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise SerializationError(f"string is not valid unicode: {exc}") from None


def is_value(v: Any) -> bool:
    try:
        check_value(v)
    except SerializationError:
        return False
    return True


def value_equals(a: Any, b: Any) -> bool:
    """Structural equality that keeps ``True`` and ``1`` apart."""
    stack = [(a, b)]
    while stack:
        x, y = stack.pop()
        if type(x) is not type(y):
            return False
        if type(x) is list:
            if len(x) != len(y):
                return False
            stack.extend(zip(x, y))
        elif type(x) is dict:
            if x.keys() != y.keys():
                return False
            stack.extend((x[k], y[k]) for k in x)
        elif x != y:
            return False
    return True


def _dumps(v: Any) -> bytes:
    return json.dumps(
        v, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def canonical_serialize(v: Any) -> bytes:
    """Deterministic bytes for a Value, an Intent or a record (hash excluded).

    Python sorts keys by code point, which matches UTF-8 byte order.
    """
    if isinstance(v, Intent):
        v = v.to_value()
    elif isinstance(v, DecisionRecord):
        v = v.to_value(include_hash=False)
    check_value(v)
    return _dumps(v)


def _reject_float(text: str) -> Any:
    raise SerializationError(f"floats are not Values: {text}")


def _reject_constant(text: str) -> Any:
    raise SerializationError(f"non-finite number: {text}")


def _unique_pairs(pairs: list[tuple[str, Any]]) -> dict:
    out: dict[str, Any] = {}
    for k, v in pairs:
        if k in out:
            raise SerializationError(f"duplicate key {k!r}")
        out[k] = v
    return out


def deserialize(data: bytes | str) -> Any:
    """Parse canonical bytes back into a Value."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SerializationError(str(exc)) from None
    try:
        v = json.loads(
            data,
            parse_float=_reject_float,
            parse_constant=_reject_constant,
            object_pairs_hook=_unique_pairs,
        )
    except (json.JSONDecodeError, RecursionError) as exc:
        raise SerializationError(f"malformed canonical bytes: {exc}") from None
    check_value(v)
    return v


def chain_hash(record_bytes: bytes, prev_hash: bytes | str) -> str:
    """SHA-256 over the record bytes followed by the raw previous hash."""
    if isinstance(prev_hash, str):
        if len(prev_hash) != 64:
            raise ValueError("prev_hash must be 64 hex characters")
        prev_hash = bytes.fromhex(prev_hash)
    if len(prev_hash) != 32:
        raise ValueError("prev_hash must be 32 bytes")
    return hashlib.sha256(record_bytes + prev_hash).hexdigest()


def value_hash(v: Any) -> str:
    return hashlib.sha256(canonical_serialize(v)).hexdigest()


@dataclass(frozen=True, eq=False)
class Intent:
    action: str
    target: str
    params: dict = field(default_factory=dict)
    context: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not isinstance(self.action, str) or not self.action:
            raise ValueError("intent action must be a non-empty string")
        if not isinstance(self.target, str) or not self.target:
            raise ValueError("intent target must be a non-empty string")
        if type(self.params) is not dict or type(self.context) is not dict:
            raise ValueError("intent params and context must be maps")
        check_value(self.params)
        check_value(self.context)

    def to_value(self) -> dict:
        return {
            "action": self.action,
            "target": self.target,
            "params": self.params,
            "context": self.context,
        }

    @classmethod
    def from_value(cls, v: Mapping[str, Any]) -> Intent:
        if set(v) != {"action", "target", "params", "context"}:
            raise SerializationError(f"bad intent fields: {sorted(v)}")
        return cls(v["action"], v["target"], v["params"], v["context"])

    def digest(self) -> str:
        return value_hash(self.to_value())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Intent):
            return NotImplemented
        return canonical_serialize(self) == canonical_serialize(other)

    def __hash__(self) -> int:
        return hash(canonical_serialize(self))


@dataclass(frozen=True)
class RecordTemplate:
    """Everything a ledger needs to seal a record, minus position and time."""

    intent: Intent
    decision: Decision
    applied_rules: tuple[str, ...]
    policy_id: str
    context: dict
    kind: str = "decision"


@dataclass(frozen=True, eq=False)
class DecisionRecord:
    seq: int
    timestamp: int
    intent: Intent
    decision: Decision
    applied_rules: tuple[str, ...]
    policy_id: str
    context: dict
    prev_hash: str
    hash: str = ""
    kind: str = "decision"

    def to_value(self, include_hash: bool = True) -> dict:
        v = {
            "seq": self.seq,
            "timestamp": self.timestamp,
            "kind": self.kind,
            "intent": self.intent.to_value(),
            "decision": self.decision.value,
            "applied_rules": list(self.applied_rules),
            "policy_id": self.policy_id,
            "context": self.context,
            "prev_hash": self.prev_hash,
        }
        if include_hash:
            v["hash"] = self.hash
        return v

    @classmethod
    def from_value(cls, v: Mapping[str, Any]) -> DecisionRecord:
        expected = {
            "seq", "timestamp", "kind", "intent", "decision", "applied_rules",
            "policy_id", "context", "prev_hash", "hash",
        }
        if set(v) != expected:
            raise SerializationError(f"bad record fields: {sorted(v)}")
        seq, ts = v["seq"], v["timestamp"]
        if type(seq) is not int or seq < 0 or type(ts) is not int:
            raise SerializationError("seq and timestamp must be integers")
        if v["kind"] not in RECORD_KINDS:
            raise SerializationError(f"unknown record kind {v['kind']!r}")
        rules = v["applied_rules"]
        if type(rules) is not list or any(type(r) is not str for r in rules):
            raise SerializationError("applied_rules must be a list of strings")
        if type(v["policy_id"]) is not str or type(v["context"]) is not dict:
            raise SerializationError("bad policy_id or context")
        for name in ("prev_hash", "hash"):
            if not _is_hex_digest(v[name]):
                raise SerializationError(f"{name} is not a 64-char lowercase hex digest")
        try:
            decision = Decision(v["decision"])
            intent = Intent.from_value(v["intent"])
        except (ValueError, TypeError, AttributeError) as exc:
            raise SerializationError(str(exc)) from None
        return cls(
            seq=seq,
            timestamp=ts,
            intent=intent,
            decision=decision,
            applied_rules=tuple(rules),
            policy_id=v["policy_id"],
            context=v["context"],
            prev_hash=v["prev_hash"],
            hash=v["hash"],
            kind=v["kind"],
        )

    def compute_hash(self) -> str:
        return chain_hash(canonical_serialize(self), self.prev_hash)

    def line(self) -> bytes:
        return _dumps(self.to_value())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DecisionRecord):
            return NotImplemented
        return self.line() == other.line()

    def __hash__(self) -> int:
        return hash(self.hash)


def _is_hex_digest(s: Any) -> bool:
    return (
        type(s) is str
        and len(s) == 64
        and all(c in "0123456789abcdef" for c in s)
    )
