"""Refund-agent workload: run it under one refund limit, replay under another.

Every number in the report is checked against a brute-force oracle that
classifies requests straight from the policy parameters, with no runtime,
no ledger and no policy engine involved.  Any disagreement raises.
"""

from __future__ import annotations

import importlib.resources
import random
import tempfile
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from idc.core import Decision
from idc.effects import EffectMachine, EffectRegistry, HandlerFailure, register_builtin_machines
from idc.lang import parse
from idc.ledger import Ledger, read_stream
from idc.policy import (
    AllOf,
    Negate,
    NumericCmp,
    PolicyRule,
    PolicySet,
    SetMember,
    StringPrefix,
)
from idc.replay import simulate
from idc.runtime import COMPLETED, DENIED_HALT, SUSPENDED, run_program

ALLOWED_REGIONS = ("us", "ca", "uk", "eu")
RESTRICTED_REGIONS = ("ru-restricted", "sanctioned", "internal-only")

# dollar bands, in cents: <=500, 500-1000, 1000-5000, >5000
AMOUNT_BANDS = ((100, 50_000), (50_001, 100_000), (100_001, 500_000), (500_001, 1_000_000))
REASONS = ("damaged", "late-delivery", "duplicate-charge", "not-as-described")


class CaseStudyMismatch(AssertionError):
    """The runtime and the oracle disagree on some count."""


@dataclass(frozen=True)
class RefundRequest:
    request_id: str
    customer_id: str
    amount_cents: int
    region: str
    reason: str

    def __post_init__(self) -> None:
        if self.amount_cents < 1 or not self.request_id or not self.customer_id:
            raise ValueError(f"invalid refund request {self!r}")


@dataclass(frozen=True)
class WorkloadSpec:
    seed: int = 2026
    count: int = 200
    band_weights: tuple[float, ...] = (0.45, 0.25, 0.20, 0.10)
    unauthorized_fraction: float = 0.10

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if len(self.band_weights) != len(AMOUNT_BANDS):
            raise ValueError("one weight per amount band")


@dataclass(frozen=True)
class PolicyParams:
    limit_cents: int = 50_000
    escalate_above_cents: int = 500_000
    allowed_regions: tuple[str, ...] = ALLOWED_REGIONS


def generate_workload(spec: WorkloadSpec) -> list[RefundRequest]:
    rng = random.Random(spec.seed)
    out = []
    for k in range(spec.count):
        # the first requests walk every band so each band is populated
        band = k if k < len(AMOUNT_BANDS) else rng.choices(range(len(AMOUNT_BANDS)), spec.band_weights)[0]
        lo, hi = AMOUNT_BANDS[band]
        amount = rng.randint(lo, hi)
        if rng.random() < spec.unauthorized_fraction:
            region = rng.choice(RESTRICTED_REGIONS)
        else:
            region = rng.choice(ALLOWED_REGIONS)
        out.append(RefundRequest(
            request_id=f"R{k:05d}",
            customer_id=f"C{rng.randint(1, 60):03d}",
            amount_cents=amount,
            region=region,
            reason=rng.choice(REASONS),
        ))
    return out


def refund_policy(params: PolicyParams, policy_id: Optional[str] = None) -> PolicySet:
    def action(prefix: str) -> StringPrefix:
        return StringPrefix("action", prefix)

    amount = "params.amount_cents"
    rules = (
        PolicyRule("deny-unauthorized-region",
                   AllOf((action("crm.read"), Negate(SetMember("params.region", params.allowed_regions)))),
                   Decision.DENY),
        PolicyRule("deny-over-limit",
                   AllOf((action("payment.refund"),
                          NumericCmp(amount, ">", params.limit_cents),
                          NumericCmp(amount, "<=", params.escalate_above_cents))),
                   Decision.DENY),
        PolicyRule("escalate-large-refund",
                   AllOf((action("payment.refund"), NumericCmp(amount, ">", params.escalate_above_cents))),
                   Decision.ESCALATE),
        PolicyRule("allow-crm-read", action("crm.read"), Decision.ALLOW),
        PolicyRule("allow-policy-read",
                   AllOf((action("kv.get"), StringPrefix("params.key", "refund_policy"))),
                   Decision.ALLOW),
        PolicyRule("allow-refund", action("payment.refund"), Decision.ALLOW),
        PolicyRule("allow-notify", action("email.send"), Decision.ALLOW),
    )
    pid = policy_id or f"refund-limit-{params.limit_cents // 100}"
    return PolicySet(pid, rules, Decision.DENY)


def refund_program_source() -> str:
    return importlib.resources.files("idc.examples").joinpath("refund_agent.idp").read_text(encoding="utf-8")


def crm_machine(customers: dict[str, dict]) -> EffectMachine:
    """Mock CRM lookup over a fixed customer table."""
    table = dict(customers)

    def read(p: dict) -> dict:
        if p["customer_id"] not in table:
            raise HandlerFailure(f"no customer {p['customer_id']}")
        return table[p["customer_id"]]

    return EffectMachine("@acme/crm/read", "crm.read",
                         (("customer_id", "string"), ("region", "string")), read)


def customer_table(requests: list[RefundRequest]) -> dict[str, dict]:
    return {r.customer_id: {"customer_id": r.customer_id, "region": r.region,
                            "email": f"{r.customer_id.lower()}@customers.example"}
            for r in requests}


def case_registry(sandbox: str | Path, requests: list[RefundRequest]) -> EffectRegistry:
    registry = register_builtin_machines(
        sandbox, kv_seed={"refund_policy": {"currency": "USD", "channel": "agent"}})
    registry.register(crm_machine(customer_table(requests)))
    return registry


# -- oracle -------------------------------------------------------------------

def oracle_trace(req: RefundRequest, p: PolicyParams) -> list[tuple[str, Decision]]:
    """The (action, decision) sequence one request must leave in the ledger."""
    if req.region not in p.allowed_regions:
        return [("crm.read", Decision.DENY)]
    trace = [("crm.read", Decision.ALLOW), ("kv.get", Decision.ALLOW)]
    if req.amount_cents > p.escalate_above_cents:
        return trace + [("payment.refund", Decision.ESCALATE)]
    if req.amount_cents > p.limit_cents:
        return trace + [("payment.refund", Decision.DENY)]
    return trace + [("payment.refund", Decision.ALLOW), ("email.send", Decision.ALLOW)]


def oracle_record_decision(action: str, params: dict, p: PolicyParams) -> Decision:
    if action == "crm.read":
        return Decision.ALLOW if params.get("region") in p.allowed_regions else Decision.DENY
    if action == "kv.get":
        return Decision.ALLOW if str(params.get("key", "")).startswith("refund_policy") else Decision.DENY
    if action == "email.send":
        return Decision.ALLOW
    if action == "payment.refund":
        amount = params["amount_cents"]
        if amount > p.escalate_above_cents:
            return Decision.ESCALATE
        if amount > p.limit_cents:
            return Decision.DENY
        return Decision.ALLOW
    return Decision.DENY


def oracle_report(requests: list[RefundRequest], a: PolicyParams, b: PolicyParams) -> dict:
    decisions: Counter[str] = Counter()
    outcomes: Counter[str] = Counter()
    flips: Counter[str] = Counter()
    flip_requests = []
    intents = 0
    for req in requests:
        trace = oracle_trace(req, a)
        intents += len(trace)
        for action, d in trace:
            decisions[d.value] += 1
        last = trace[-1][1]
        outcomes[{Decision.ALLOW: "completed", Decision.DENY: "denied", Decision.ESCALATE: "suspended"}[last]] += 1
        for action, old in trace:
            params = {"region": req.region, "key": "refund_policy", "amount_cents": req.amount_cents}
            new = oracle_record_decision(action, params, b)
            if new != old:
                flips[f"{old.value}->{new.value}"] += 1
                flip_requests.append(req.request_id)
    return {
        "requests": len(requests),
        "intents": intents,
        "allowed": decisions["allow"],
        "denied": decisions["deny"],
        "escalated": decisions["escalate"],
        "requests_completed": outcomes["completed"],
        "requests_denied": outcomes["denied"],
        "requests_suspended": outcomes["suspended"],
        "denied_by_region": sum(1 for r in requests if r.region not in a.allowed_regions),
        "flips": dict(sorted(flips.items())),
        "flip_requests": sorted(flip_requests),
        "escalated_after_replay": decisions["escalate"] + flips.get("deny->escalate", 0)
        + flips.get("allow->escalate", 0) - flips.get("escalate->allow", 0) - flips.get("escalate->deny", 0),
    }


# -- experiment ---------------------------------------------------------------

@dataclass
class CaseReport:
    measured: dict
    oracle: dict
    policy_a: str
    policy_b: str
    ledger_path: Optional[str] = None
    mismatches: list[str] = field(default_factory=list)

    @property
    def agrees(self) -> bool:
        return not self.mismatches

    def to_json(self) -> dict:
        return asdict(self) | {"agrees": self.agrees}


def run_case_study(
    spec: WorkloadSpec = WorkloadSpec(),
    params_a: PolicyParams = PolicyParams(limit_cents=50_000),
    params_b: PolicyParams = PolicyParams(limit_cents=100_000),
    *,
    sandbox: str | Path | None = None,
    ledger_path: str | Path | None = None,
    strict: bool = True,
) -> CaseReport:
    if (params_a.escalate_above_cents, params_a.allowed_regions) != \
            (params_b.escalate_above_cents, params_b.allowed_regions):
        raise ValueError("the two policies may differ only in the refund limit")
    requests = generate_workload(spec)
    policy_a = refund_policy(params_a)
    policy_b = refund_policy(params_b)
    program = parse(refund_program_source())

    with tempfile.TemporaryDirectory(prefix="idc-case-") as tmp:
        registry = case_registry(sandbox or Path(tmp) / "sandbox", requests)
        ledger = Ledger(ledger_path, durability="fast")
        outcomes: Counter[str] = Counter()
        request_of_seq: dict[int, str] = {}
        try:
            for req in requests:
                start = len(ledger)
                result = run_program(program, policy_a, {"request": asdict(req)}, ledger, registry)
                outcomes[result.status] += 1
                for seq in range(start, len(ledger)):
                    request_of_seq[seq] = req.request_id
        finally:
            ledger.close()
        stream = list(read_stream(ledger_path)) if ledger_path else list(ledger.records)

    report = simulate(policy_b, stream)
    decisions = Counter(r.decision.value for r in stream if r.kind == "decision")
    flips = {f"{a.value}->{b.value}": n for (a, b), n in report.matrix.items() if a != b and n}
    measured = {
        "requests": len(requests),
        "intents": sum(1 for r in stream if r.kind == "decision"),
        "allowed": decisions["allow"],
        "denied": decisions["deny"],
        "escalated": decisions["escalate"],
        "requests_completed": outcomes[COMPLETED],
        "requests_denied": outcomes[DENIED_HALT],
        "requests_suspended": outcomes[SUSPENDED],
        "denied_by_region": sum(1 for r in stream if "deny-unauthorized-region" in r.applied_rules),
        "flips": dict(sorted(flips.items())),
        "flip_requests": sorted(request_of_seq[f.seq] for f in report.flipped_records),
        "escalated_after_replay": sum(report.matrix[(a, Decision.ESCALATE)] for a in Decision),
    }
    oracle = oracle_report(requests, params_a, params_b)
    mismatches = [
        f"{key}: runtime {measured[key]!r} != oracle {oracle[key]!r}"
        for key in oracle if measured[key] != oracle[key]
    ]
    # exactly the mid-band refunds flip deny -> allow
    expected_flip_set = sorted(
        r.request_id for r in requests
        if r.region in params_a.allowed_regions
        and params_a.limit_cents < r.amount_cents <= min(params_b.limit_cents, params_a.escalate_above_cents)
    )
    if oracle["flip_requests"] != expected_flip_set:
        mismatches.append("oracle flip set differs from the mid-band request set")
    out = CaseReport(measured, oracle, policy_a.policy_id, policy_b.policy_id,
                     str(ledger_path) if ledger_path else None, mismatches)
    if strict and mismatches:
        raise CaseStudyMismatch("; ".join(mismatches))
    return out
