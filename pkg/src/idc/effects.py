"""Sandboxed effect machines and the registry that realizes intents.

Every builtin machine is a mock: email lands in ``<root>/outbox``, files stay
under ``<root>/files``, refunds append to ``<root>/payments/refunds.csv``,
HTTP answers come from a fixture map and the key-value store lives in memory.
Nothing here opens a network connection.

``EffectRegistry.realize`` must only be called by the runtime's mediation
path, after an allow record has been sealed in the ledger.
"""

from __future__ import annotations

import csv
import hashlib
import io
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Optional

from idc.core import Intent, canonical_serialize, check_value

BUILTIN_NAMESPACES = ("email", "http", "file", "kv", "payment")


class EffectError(Exception):
    kind = "effect-error"


class UnknownMachine(EffectError):
    kind = "unknown-machine"


class ParamValidationError(EffectError):
    kind = "param-validation-failure"


class HandlerFailure(EffectError):
    kind = "handler-failure"


_SHAPES: dict[str, Callable[[Any], bool]] = {
    "string": lambda v: type(v) is str,
    "integer": lambda v: type(v) is int,
    "positive-integer": lambda v: type(v) is int and v > 0,
    "bool": lambda v: type(v) is bool,
    "any": lambda v: True,
}


@dataclass(frozen=True)
class EffectMachine:
    machine_id: str
    action_path: str
    required_params: tuple[tuple[str, str], ...]
    handler: Callable[[dict], Any]

    def validate(self, params: dict) -> None:
        for name, shape in self.required_params:
            if name not in params:
                raise ParamValidationError(f"{self.machine_id}: missing parameter {name!r}")
            if not _SHAPES[shape](params[name]):
                raise ParamValidationError(f"{self.machine_id}: parameter {name!r} must be {shape}")


@dataclass
class EffectRegistry:
    machines: dict[str, EffectMachine] = field(default_factory=dict)
    namespaces: Optional[tuple[str, ...]] = None
    invocation_log: list[tuple[str, str]] = field(default_factory=list)
    observer: Optional[Callable[[Intent, str], None]] = None

    def __post_init__(self) -> None:
        self._log_lock = threading.Lock()

    def register(self, machine: EffectMachine) -> None:
        if machine.machine_id in self.machines:
            raise ValueError(f"machine {machine.machine_id!r} already registered")
        if not machine.action_path:
            raise ValueError("action_path must be non-empty")
        ns = machine.action_path.split(".", 1)[0]
        if self.namespaces is not None and ns not in self.namespaces:
            raise ValueError(f"action {machine.action_path!r} outside allowed namespaces {self.namespaces}")
        self.machines[machine.machine_id] = machine

    def action_for(self, machine_id: str) -> str:
        """Declared action path, or one derived from the id for unknown machines."""
        m = self.machines.get(machine_id)
        if m is not None:
            return m.action_path
        parts = [p for p in machine_id.lstrip("@").split("/") if p]
        if len(parts) > 1:
            parts = parts[1:]
        return ".".join(parts) or "unknown"

    def realize(self, intent: Intent) -> Any:
        """Dispatch to the machine named by ``intent.target`` and run it."""
        digest = intent.digest()
        try:
            machine = self.machines.get(intent.target)
            if machine is None:
                raise UnknownMachine(f"no machine {intent.target!r}")
            machine.validate(intent.params)
            try:
                result = machine.handler(intent.params)
                check_value(result)
            except EffectError:
                raise
            except Exception as exc:
                raise HandlerFailure(f"{intent.target}: {exc}") from exc
        except EffectError as exc:
            self._log(intent, digest, exc.kind)
            raise
        self._log(intent, digest, "ok")
        return result

    def _log(self, intent: Intent, digest: str, outcome: str) -> None:
        with self._log_lock:
            self.invocation_log.append((digest, outcome))
        if self.observer is not None:
            self.observer(intent, outcome)


def _digest(params: dict) -> str:
    return hashlib.sha256(canonical_serialize(params)).hexdigest()[:32]


def _confined(root: Path, rel: str) -> Path:
    base = root.resolve()
    target = (base / rel).resolve()
    if target != base and base not in target.parents:
        raise HandlerFailure("path escapes sandbox")
    return target


class _KVStore:
    def __init__(self) -> None:
        self._data: dict[str, Any] = {}
        self._lock = threading.Lock()

    def put(self, params: dict) -> dict:
        with self._lock:
            self._data[params["key"]] = params["value"]
        return {"stored": True, "key": params["key"]}

    def get(self, params: dict) -> dict:
        with self._lock:
            if params["key"] in self._data:
                return {"found": True, "value": self._data[params["key"]]}
        return {"found": False, "value": None}


def register_builtin_machines(
    sandbox_root: str | Path,
    *,
    http_fixtures: Optional[dict[str, Any]] = None,
    namespaces: Optional[Iterable[str]] = None,
    kv_seed: Optional[dict[str, Any]] = None,
) -> EffectRegistry:
    """Build a registry with the seven sandboxed stdlib machines."""
    root = Path(sandbox_root)
    try:
        root.mkdir(parents=True, exist_ok=True)
        for sub in ("outbox", "files", "payments"):
            (root / sub).mkdir(exist_ok=True)
    except OSError as exc:
        raise EffectError(f"cannot set up sandbox at {root}: {exc}") from exc
    fixtures = dict(http_fixtures or {})
    kv = _KVStore()
    for k, v in (kv_seed or {}).items():
        kv.put({"key": k, "value": v})
    csv_lock = threading.Lock()

    def email_send(p: dict) -> dict:
        message_id = _digest(p)
        body = f"To: {p['to']}\nSubject: {p['subject']}\nMessage-ID: <{message_id}@idc.local>\n\n{p['body']}\n"
        (root / "outbox" / f"{message_id}.eml").write_text(body, encoding="utf-8")
        return {"sent": True, "message_id": message_id}

    def http_get(p: dict) -> dict:
        if p["url"] not in fixtures:
            raise HandlerFailure(f"no fixture for {p['url']}")
        return {"status": 200, "body": fixtures[p["url"]]}

    def file_write(p: dict) -> dict:
        target = _confined(root / "files", p["path"])
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(p["content"], encoding="utf-8")
        return {"written": True, "path": p["path"], "bytes": len(p["content"].encode("utf-8"))}

    def file_read(p: dict) -> dict:
        target = _confined(root / "files", p["path"])
        if not target.is_file():
            raise HandlerFailure(f"no such file {p['path']!r}")
        return {"content": target.read_text(encoding="utf-8")}

    def payment_refund(p: dict) -> dict:
        refund_id = _digest(p)
        buf = io.StringIO()
        csv.writer(buf).writerow([refund_id, p["request_id"], p["customer_id"], p["amount_cents"]])
        with csv_lock, open(root / "payments" / "refunds.csv", "a", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
        return {"refunded": True, "refund_id": refund_id, "amount_cents": p["amount_cents"]}

    registry = EffectRegistry(namespaces=tuple(namespaces) if namespaces is not None else None)
    for machine in (
        EffectMachine("@stdlib/email/send", "email.send",
                      (("to", "string"), ("subject", "string"), ("body", "string")), email_send),
        EffectMachine("@stdlib/http/get", "http.get", (("url", "string"),), http_get),
        EffectMachine("@stdlib/file/write", "file.write",
                      (("path", "string"), ("content", "string")), file_write),
        EffectMachine("@stdlib/file/read", "file.read", (("path", "string"),), file_read),
        EffectMachine("@stdlib/kv/put", "kv.put", (("key", "string"), ("value", "any")), kv.put),
        EffectMachine("@stdlib/kv/get", "kv.get", (("key", "string"),), kv.get),
        EffectMachine("@stdlib/payment/refund", "payment.refund",
                      (("request_id", "string"), ("customer_id", "string"),
                       ("amount_cents", "positive-integer")), payment_refund),
    ):
        registry.register(machine)
    return registry
