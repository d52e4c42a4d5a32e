import dataclasses
import json

import pytest

from idc.casestudy import PolicyParams, crm_machine, refund_policy
from idc.core import Decision, Intent
from idc.effects import register_builtin_machines
from idc.lang import parse
from idc.ledger import Ledger, LedgerIOError, verify_chain
from idc.policy import AlwaysTrue, NumericCmp, PolicyRule, PolicySet, decide, load_policy
from idc.runtime import (
    CAPABILITY_MISS,
    COMPLETED,
    DENIED_HALT,
    RUNTIME_ERROR,
    SUSPENDED,
    AlreadyResolved,
    Configuration,
    EscalationTicket,
    UnknownTicket,
    call_machine_as_subprogram,
    child_configuration,
    effective_capabilities,
    resume,
    run_program,
)

ALLOW_ALL = PolicySet("allow-all", (PolicyRule("all", AlwaysTrue(), Decision.ALLOW),))

REFUND = '''program refund
capabilities:
  refund.
  email.
step r: ask {
  machine "@stdlib/payment/refund"
  input {
    request_id: "R1"
    customer_id: "C1"
    amount_cents: context.amount
  }
}
step mail: ask { machine "@stdlib/email/send" input { to: "c@x", subject: "done", body: r.refund_id } }
'''

LIMIT = PolicySet("limit", (
    PolicyRule("big", NumericCmp("params.amount_cents", ">", 500), Decision.DENY),
    PolicyRule("huge", NumericCmp("params.amount_cents", ">", 5000), Decision.ESCALATE),
    PolicyRule("ok", AlwaysTrue(), Decision.ALLOW),
))
ESCALATING = PolicySet("esc", (
    PolicyRule("huge", NumericCmp("params.amount_cents", ">", 5000), Decision.ESCALATE),
    PolicyRule("ok", AlwaysTrue(), Decision.ALLOW),
))


@pytest.fixture
def refund_registry(registry):
    # the program's refund machine is declared under the refund. namespace
    machine = registry.machines["@stdlib/payment/refund"]
    registry.machines[machine.machine_id] = dataclasses.replace(machine, action_path="refund.issue")
    return registry


def test_invoice_example_runs(examples, registry, tmp_path):
    ast = parse((examples / "invoice.idp").read_text())
    ctx = json.loads((examples / "invoice_context.json").read_text())
    with Ledger(tmp_path / "inv.idledger") as ledger:
        result = run_program(ast, load_policy(examples / "invoice_policy.json"), ctx, ledger, registry)
    assert result.status == COMPLETED
    assert len(ledger) == 1 and ledger.records[0].decision is Decision.ALLOW
    assert result.final_env["send_invoice"]["sent"] is True
    assert verify_chain(tmp_path / "inv.idledger").ok


def test_pure_program_leaves_ledger_untouched(registry, tmp_path):
    path = tmp_path / "p.idledger"
    with Ledger(path) as ledger:
        ledger.append(decide(ALLOW_ALL, Intent("a.b", "@x/y"), {}).record_template)
        before = path.read_bytes()
        ast = parse("program p\nstep a: compute 1\nstep b: compute a + 1\nstep c: compute [a, b]\n")
        result = run_program(ast, ALLOW_ALL, {}, ledger, registry)
    assert result.status == COMPLETED and result.final_env["c"] == [1, 2]
    assert path.read_bytes() == before


def test_two_allowed_asks(refund_registry):
    ledger = Ledger()
    result = run_program(parse(REFUND), LIMIT, {"amount": 100}, ledger, refund_registry)
    assert result.status == COMPLETED and len(result.trace) == 2 and len(ledger) == 2
    assert result.final_env["mail"]["sent"] is True


def test_denied_refund_invokes_nothing(refund_registry):
    ledger = Ledger()
    result = run_program(parse(REFUND), LIMIT, {"amount": 600}, ledger, refund_registry)
    assert result.status == DENIED_HALT
    assert len(ledger) == 1 and ledger.records[0].applied_rules == ("big", "ok")
    assert refund_registry.invocation_log == []


def test_on_deny_continue_binds_denial(refund_registry):
    src = REFUND.replace("    amount_cents: context.amount\n  }\n", "    amount_cents: context.amount\n  }\n  on_deny continue\n")
    ledger = Ledger()
    result = run_program(parse(src), LIMIT, {"amount": 600}, ledger, refund_registry)
    assert result.final_env["r"] == {"denied": True, "record_seq": 0}
    # the second ask then fails on r.refund_id: a runtime error naming the step
    assert result.status == RUNTIME_ERROR and "mail" in result.error
    assert len(ledger) == 1


def test_escalation_approve(refund_registry, tmp_path):
    ledger = Ledger()
    result = run_program(parse(REFUND), ESCALATING, {"amount": 9000}, ledger, refund_registry)
    assert result.status == SUSPENDED and len(ledger) == 1 and refund_registry.invocation_log == []
    ticket = EscalationTicket.load(result.suspension.save(tmp_path))
    assert ticket == result.suspension
    done = resume(ticket, Decision.ALLOW, ledger, refund_registry)
    assert done.status == COMPLETED
    assert [r.kind for r in ledger.records] == ["decision", "resolution", "decision"]
    assert ledger.records[1].applied_rules == (f"escalation-resolution:{ticket.ticket_id}",)
    assert len(refund_registry.invocation_log) == 2
    with pytest.raises(AlreadyResolved):
        resume(ticket, Decision.DENY, ledger, refund_registry)


def test_escalation_reject(refund_registry):
    ledger = Ledger()
    ticket = run_program(parse(REFUND), ESCALATING, {"amount": 9000}, ledger, refund_registry).suspension
    result = resume(ticket, Decision.DENY, ledger, refund_registry)
    assert result.status == DENIED_HALT and refund_registry.invocation_log == []
    assert ledger.records[-1].decision is Decision.DENY


def test_unknown_ticket(refund_registry):
    ledger = Ledger()
    ticket = run_program(parse(REFUND), ESCALATING, {"amount": 9000}, ledger, refund_registry).suspension
    with pytest.raises(UnknownTicket):
        resume(ticket, Decision.ALLOW, Ledger(), refund_registry)
    forged = EscalationTicket("0" * 24, ticket.record_seq, ticket.intent, ticket.resume_state)
    with pytest.raises(UnknownTicket):
        resume(forged, Decision.ALLOW, ledger, refund_registry)
    with pytest.raises(ValueError):
        resume(ticket, Decision.ESCALATE, ledger, refund_registry)


def test_capability_miss_is_recorded(registry):
    ast = parse('program p\ncapabilities:\n  kv.\nstep a: ask { machine "@stdlib/email/send" '
                'input { to: "x", subject: "s", body: "b" } }\n')
    ledger = Ledger()
    result = run_program(ast, ALLOW_ALL, {}, ledger, registry)
    assert result.status == DENIED_HALT
    assert ledger.records[0].applied_rules == (CAPABILITY_MISS,)
    assert registry.invocation_log == []


def test_realization_failure_returns_error_value(registry):
    ast = parse('program p\ncapabilities:\n  http.\nstep a: ask { machine "@stdlib/http/get" '
                'input { url: "https://missing.test/" } }\nstep b: compute a.error\n')
    ledger = Ledger()
    result = run_program(ast, ALLOW_ALL, {}, ledger, registry)
    assert result.status == COMPLETED and result.final_env["b"] == "handler-failure"
    assert len(ledger) == 1

    marked = Ledger()
    run_program(ast, ALLOW_ALL, {}, marked, registry, mark_realization_failures=True)
    assert [r.kind for r in marked.records] == ["decision", "realization-failed"]
    assert marked.records[1].context["allow_seq"] == 0
    assert verify_chain(marked.records).ok


def test_append_failure_is_fail_closed(registry):
    class BrokenLedger(Ledger):
        def append(self, template, timestamp=None):
            raise LedgerIOError("disk full")

    ast = parse('program p\ncapabilities:\n  email.\nstep a: ask { machine "@stdlib/email/send" '
                'input { to: "x", subject: "s", body: "b" } }\n')
    result = run_program(ast, ALLOW_ALL, {}, BrokenLedger(), registry)
    assert result.status == RUNTIME_ERROR and "disk full" in result.error
    assert registry.invocation_log == []


def test_runtime_error_names_step(registry):
    result = run_program(parse("program p\nstep boom: compute 1 / 0\n"), ALLOW_ALL, {}, Ledger(), registry)
    assert result.status == RUNTIME_ERROR and result.error.startswith("step boom")


def test_large_context_is_summarized(registry):
    ast = parse('program p\ncapabilities:\n  kv.\nstep a: ask { machine "@stdlib/kv/get" '
                'input { key: context.key } }\n')
    ledger = Ledger()
    run_program(ast, ALLOW_ALL, {"key": "k", "blob": "x" * 70_000}, ledger, registry)
    snap = ledger.records[0].context
    assert set(snap) == {"env_hash", "fields"} and snap["fields"] == {"key": "k"}


def test_subprogram_capabilities_narrow(refund_registry):
    parent = Configuration(parse("program parent\ncapabilities:\n  email.\n  refund.\n"),
                           ALLOW_ALL, Ledger(), {}, {}, 0, [frozenset({"email.", "refund."})])
    child = parse(REFUND.replace("capabilities:\n  refund.\n  email.\n", "capabilities:\n  refund.\n"))
    result = call_machine_as_subprogram(parent, child, refund_registry, {"amount": 10})
    assert result.status == DENIED_HALT
    decisions = [(r.intent.action, r.decision, r.applied_rules) for r in parent.ledger.records]
    assert decisions[0][:2] == ("refund.issue", Decision.ALLOW)
    assert decisions[1] == ("email.send", Decision.DENY, (CAPABILITY_MISS,))
    assert parent.capability_stack == [frozenset({"email.", "refund."})]

    wider = parse(REFUND.replace("capabilities:\n  refund.\n  email.\n",
                                 "capabilities:\n  email.\n  refund.\n  file.\n"))
    assert effective_capabilities(child_configuration(parent, wider).capability_stack) == \
        frozenset({"email.", "refund."})


def test_refund_agent_example(examples, tmp_path):
    fixtures = json.loads((examples / "refund_fixtures.json").read_text())
    reg = register_builtin_machines(tmp_path / "sb", kv_seed=fixtures["kv"],
                                    namespaces=("email", "http", "file", "kv", "payment", "crm"))
    reg.register(crm_machine(fixtures["crm"]))
    ctx = json.loads((examples / "refund_context.json").read_text())
    ast = parse((examples / "refund_agent.idp").read_text())
    ledger = Ledger()
    assert run_program(ast, refund_policy(PolicyParams(50_000)), ctx, ledger, reg).status == DENIED_HALT
    ledger = Ledger()
    result = run_program(ast, refund_policy(PolicyParams(100_000)), ctx, ledger, reg)
    assert result.status == COMPLETED and len(ledger) == 4
