"""Governed execution of intent-driven programs.

Compute steps reduce silently.  Ask steps build an Intent, pass it through
the capability check and ``decide``, seal exactly one ledger record, and
only then (on allow) hand the intent to the effect registry.
``mediate_and_realize`` is the single place that calls ``realize``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

from idc.core import (
    Decision,
    Intent,
    RecordTemplate,
    SerializationError,
    canonical_serialize,
    check_value,
    deserialize,
)
from idc.effects import EffectError, EffectRegistry
from idc.evaluator import DEFAULT_STEP_BUDGET, EvalError, eval_expr
from idc.lang.ast import AskStep, ComputeStep, ProgramAst, context_keys, free_vars
from idc.lang.parser import parse
from idc.lang.unparse import unparse
from idc.ledger import Ledger, LedgerIOError
from idc.policy import PolicySet, decide, policy_from_json, policy_to_json

SNAPSHOT_LIMIT = 64 * 1024
CAPABILITY_MISS = "capability-miss"
RESOLUTION_PREFIX = "escalation-resolution:"
TICKET_SUFFIX = ".idticket"

COMPLETED = "completed"
DENIED_HALT = "denied_halt"
SUSPENDED = "suspended"
RUNTIME_ERROR = "runtime_error"


class RuntimeFailure(Exception):
    pass


class UnknownTicket(RuntimeFailure):
    pass


class AlreadyResolved(RuntimeFailure):
    pass


def effective_capabilities(stack: Iterable[frozenset[str]]) -> frozenset[str]:
    sets = list(stack)
    if not sets:
        return frozenset()
    out = sets[0]
    for s in sets[1:]:
        out = out & s
    return out


def capability_allows(capabilities: Iterable[str], action: str) -> bool:
    """A capability ending in '.' is a namespace prefix; otherwise it names an
    action exactly, or a dotted prefix of one."""
    for cap in capabilities:
        if cap.endswith("."):
            if action.startswith(cap):
                return True
        elif action == cap or action.startswith(cap + "."):
            return True
    return False


@dataclass
class Configuration:
    program: ProgramAst
    policy: PolicySet
    ledger: Ledger
    initial_context: dict = field(default_factory=dict)
    bindings: dict = field(default_factory=dict)
    step_index: int = 0
    capability_stack: list[frozenset[str]] = field(default_factory=list)
    budget: int = DEFAULT_STEP_BUDGET
    # off by default so that records added always equal asks mediated
    mark_realization_failures: bool = False

    @property
    def env(self) -> dict:
        return {**self.initial_context, **self.bindings}

    def scope(self) -> dict:
        """Top-level names visible to expressions: step names plus ``context``."""
        return {**self.bindings, "context": self.env}

    def push_capabilities(self, declared: Iterable[str]) -> None:
        narrowed = frozenset(declared)
        if self.capability_stack:
            narrowed &= effective_capabilities(self.capability_stack)
        self.capability_stack.append(narrowed)


@dataclass(frozen=True)
class TraceEntry:
    intent: Intent
    decision: Decision
    record_seq: int


@dataclass(frozen=True)
class EscalationTicket:
    ticket_id: str
    record_seq: int
    intent: Intent
    resume_state: dict

    def to_value(self) -> dict:
        return {
            "ticket_id": self.ticket_id,
            "record_seq": self.record_seq,
            "intent": self.intent.to_value(),
            "resume_state": self.resume_state,
        }

    @classmethod
    def from_value(cls, v: dict) -> EscalationTicket:
        return cls(v["ticket_id"], v["record_seq"], Intent.from_value(v["intent"]), v["resume_state"])

    def save(self, directory: str | Path) -> Path:
        path = Path(directory) / f"{self.ticket_id}{TICKET_SUFFIX}"
        path.write_bytes(canonical_serialize(self.to_value()) + b"\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> EscalationTicket:
        return cls.from_value(deserialize(Path(path).read_bytes()))


@dataclass
class RunResult:
    status: str
    final_env: dict
    trace: list[TraceEntry] = field(default_factory=list)
    suspension: Optional[EscalationTicket] = None
    error: Optional[str] = None


@dataclass(frozen=True)
class Mediation:
    """What an ask step produced: a value, a denial, or a suspension."""

    outcome: str  # "value" | "denied" | "suspended"
    value: Any
    record_seq: int
    decision: Decision
    intent: Intent
    ticket: Optional[EscalationTicket] = None


def ticket_id_for(record_hash: str) -> str:
    return hashlib.sha256(b"idc-ticket:" + record_hash.encode("ascii")).hexdigest()[:24]


def _snapshot(config: Configuration, step: AskStep) -> dict:
    env = config.env
    try:
        data = canonical_serialize(env)
    except SerializationError as exc:
        raise EvalError(f"environment is not serializable: {exc}") from None
    if len(data) <= SNAPSHOT_LIMIT:
        return env
    wanted: set[str] = set()
    for _, expr in step.inputs:
        wanted |= context_keys(expr) | (free_vars(expr) & set(config.bindings))
    return {
        "env_hash": hashlib.sha256(data).hexdigest(),
        "fields": {k: env[k] for k in sorted(wanted) if k in env},
    }


def _resume_state(config: Configuration) -> dict:
    return {
        "program": unparse(config.program),
        "policy": policy_to_json(config.policy),
        "step_index": config.step_index,
        "initial_context": config.initial_context,
        "bindings": config.bindings,
        "capability_stack": [sorted(s) for s in config.capability_stack],
        "budget": config.budget,
        "mark_realization_failures": config.mark_realization_failures,
    }


def build_intent(step: AskStep, config: Configuration, effects: EffectRegistry) -> Intent:
    scope = config.scope()
    params = {key: eval_expr(expr, scope, budget=config.budget) for key, expr in step.inputs}
    try:
        check_value(params)
    except SerializationError as exc:
        raise EvalError(f"ask input is not a serializable value: {exc}") from None
    return Intent(
        action=effects.action_for(step.machine),
        target=step.machine,
        params=params,
        context=_snapshot(config, step),
    )


def mediate_and_realize(
    step: AskStep,
    config: Configuration,
    effects: EffectRegistry,
    *,
    resolution: Optional[tuple[EscalationTicket, Decision]] = None,
) -> Mediation:
    intent = build_intent(step, config, effects)
    policy_id = config.policy.policy_id
    if resolution is not None:
        ticket, human = resolution
        if intent != ticket.intent:
            raise UnknownTicket("ticket intent does not match the resumed program state")
        template = RecordTemplate(intent, human, (RESOLUTION_PREFIX + ticket.ticket_id,),
                                  policy_id, intent.context, kind="resolution")
    elif not capability_allows(effective_capabilities(config.capability_stack), intent.action):
        template = RecordTemplate(intent, Decision.DENY, (CAPABILITY_MISS,), policy_id, intent.context)
    else:
        template = decide(config.policy, intent, intent.context).record_template

    # fail-closed: if this append raises, nothing below runs
    record = config.ledger.append(template)

    if record.decision is Decision.ALLOW:
        try:
            value = effects.realize(intent)
        except EffectError as exc:
            if config.mark_realization_failures:
                config.ledger.append(RecordTemplate(
                    intent, Decision.ALLOW, (f"realization-failed:{exc.kind}",), policy_id,
                    {"allow_seq": record.seq, "error": str(exc)}, kind="realization-failed",
                ))
            value = {"error": exc.kind, "message": str(exc), "record_seq": record.seq}
        return Mediation("value", value, record.seq, record.decision, intent)
    if record.decision is Decision.DENY:
        return Mediation("denied", {"denied": True, "record_seq": record.seq},
                         record.seq, record.decision, intent)
    ticket = EscalationTicket(ticket_id_for(record.hash), record.seq, intent, _resume_state(config))
    return Mediation("suspended", None, record.seq, record.decision, intent, ticket)


def _bind(config: Configuration, name: str, value: Any) -> None:
    try:
        check_value(value)
    except SerializationError as exc:
        raise EvalError(f"result is not a serializable value: {exc}") from None
    config.bindings[name] = value


def _continue(config: Configuration, effects: EffectRegistry,
              trace: list[TraceEntry]) -> RunResult:
    steps = config.program.steps
    while config.step_index < len(steps):
        step = steps[config.step_index]
        try:
            if isinstance(step, ComputeStep):
                _bind(config, step.name, eval_expr(step.expr, config.scope(), budget=config.budget))
            else:
                m = mediate_and_realize(step, config, effects)
                trace.append(TraceEntry(m.intent, m.decision, m.record_seq))
                if m.outcome == "suspended":
                    return RunResult(SUSPENDED, config.env, trace, suspension=m.ticket)
                if m.outcome == "denied" and step.on_deny == "halt":
                    return RunResult(DENIED_HALT, config.env, trace)
                _bind(config, step.name, m.value)
        except (EvalError, LedgerIOError) as exc:
            return RunResult(RUNTIME_ERROR, config.env, trace, error=f"step {step.name}: {exc}")
        config.step_index += 1
    return RunResult(COMPLETED, config.env, trace)


def run_program(
    ast: ProgramAst,
    policy: PolicySet,
    initial_context: Optional[dict],
    ledger: Ledger,
    effects: EffectRegistry,
    *,
    budget: int = DEFAULT_STEP_BUDGET,
    mark_realization_failures: bool = False,
) -> RunResult:
    context = dict(initial_context or {})
    check_value(context)
    config = Configuration(ast, policy, ledger, context, {}, 0,
                           [frozenset(ast.capabilities)], budget, mark_realization_failures)
    return _continue(config, effects, [])


def call_machine_as_subprogram(
    parent: Configuration,
    child_ast: ProgramAst,
    effects: EffectRegistry,
    initial_context: Optional[dict] = None,
) -> RunResult:
    """Run ``child_ast`` under the parent's policy and ledger with capabilities
    narrowed to (parent's effective set) ∩ (child's declared set)."""
    return _continue(child_configuration(parent, child_ast, initial_context), effects, [])


def child_configuration(parent: Configuration, child_ast: ProgramAst,
                        initial_context: Optional[dict] = None) -> Configuration:
    context = parent.env if initial_context is None else dict(initial_context)
    child = Configuration(child_ast, parent.policy, parent.ledger, context, {}, 0,
                          list(parent.capability_stack), parent.budget, parent.mark_realization_failures)
    child.push_capabilities(child_ast.capabilities)
    return child


def find_resolution(ledger: Ledger, ticket_id: str) -> Optional[int]:
    tag = RESOLUTION_PREFIX + ticket_id
    for record in ledger.records:
        if record.kind == "resolution" and tag in record.applied_rules:
            return record.seq
    return None


def resume(
    ticket: EscalationTicket,
    human_decision: Decision,
    ledger: Ledger,
    effects: EffectRegistry,
) -> RunResult:
    """Resolve a suspended ask with a human decision and continue the run."""
    if human_decision not in (Decision.ALLOW, Decision.DENY):
        raise ValueError("a human resolution must be allow or deny")
    seq = ticket.record_seq
    if not 0 <= seq < len(ledger.records):
        raise UnknownTicket(f"ticket {ticket.ticket_id}: no record {seq} in ledger")
    record = ledger.records[seq]
    if (record.kind != "decision" or record.decision is not Decision.ESCALATE
            or record.intent != ticket.intent or ticket_id_for(record.hash) != ticket.ticket_id):
        raise UnknownTicket(f"ticket {ticket.ticket_id} does not match ledger record {seq}")
    if find_resolution(ledger, ticket.ticket_id) is not None:
        raise AlreadyResolved(f"ticket {ticket.ticket_id} was already resolved")

    state = ticket.resume_state
    config = Configuration(
        program=parse(state["program"]),
        policy=policy_from_json(state["policy"]),
        ledger=ledger,
        initial_context=dict(state["initial_context"]),
        bindings=dict(state["bindings"]),
        step_index=state["step_index"],
        capability_stack=[frozenset(s) for s in state["capability_stack"]],
        budget=state["budget"],
        mark_realization_failures=state.get("mark_realization_failures", False),
    )
    step = config.program.steps[config.step_index]
    trace: list[TraceEntry] = []
    try:
        m = mediate_and_realize(step, config, effects, resolution=(ticket, human_decision))
    except (EvalError, LedgerIOError) as exc:
        return RunResult(RUNTIME_ERROR, config.env, trace, error=f"step {step.name}: {exc}")
    trace.append(TraceEntry(m.intent, m.decision, m.record_seq))
    if m.outcome == "denied" and step.on_deny == "halt":
        return RunResult(DENIED_HALT, config.env, trace)
    try:
        _bind(config, step.name, m.value)
    except EvalError as exc:
        return RunResult(RUNTIME_ERROR, config.env, trace, error=f"step {step.name}: {exc}")
    config.step_index += 1
    return _continue(config, effects, trace)
