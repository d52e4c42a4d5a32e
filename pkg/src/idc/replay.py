"""Governance simulation: re-decide a recorded intent stream under a new policy.

Only ``decision`` records are replayed, each against its recorded context
snapshot.  Resolution and realization-failure records are counted as skipped.
Capability-miss denials never reached the policy, and a policy change cannot
widen a program's declared capabilities, so they stay denied and are flagged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from idc.core import Decision, DecisionRecord
from idc.policy import PolicySet, decide
from idc.runtime import CAPABILITY_MISS

ORDER = (Decision.ALLOW, Decision.DENY, Decision.ESCALATE)
MAX_LISTED = 10_000


class LengthMismatch(ValueError):
    pass


def empty_matrix() -> dict[tuple[Decision, Decision], int]:
    return {(a, b): 0 for a in ORDER for b in ORDER}


def diff_decisions(old: Sequence[Decision], new: Sequence[Decision]) -> dict[tuple[Decision, Decision], int]:
    if len(old) != len(new):
        raise LengthMismatch(f"{len(old)} old decisions vs {len(new)} new")
    matrix = empty_matrix()
    for a, b in zip(old, new):
        matrix[(Decision(a), Decision(b))] += 1
    return matrix


@dataclass(frozen=True)
class Flip:
    seq: int
    old: Decision
    new: Decision
    new_applied_rules: tuple[str, ...]


@dataclass
class SimulationReport:
    total: int = 0
    matrix: dict[tuple[Decision, Decision], int] = field(default_factory=empty_matrix)
    flipped_records: list[Flip] = field(default_factory=list)
    flips_unlisted: int = 0
    capability_miss_seqs: list[int] = field(default_factory=list)
    skipped: int = 0
    policy_id: str = ""

    @property
    def flip_count(self) -> int:
        return sum(n for (a, b), n in self.matrix.items() if a != b)

    def count(self, old: Decision, new: Decision) -> int:
        return self.matrix[(old, new)]

    def merge(self, other: SimulationReport) -> SimulationReport:
        out = SimulationReport(
            total=self.total + other.total,
            matrix={k: self.matrix[k] + other.matrix[k] for k in self.matrix},
            capability_miss_seqs=self.capability_miss_seqs + other.capability_miss_seqs,
            skipped=self.skipped + other.skipped,
            policy_id=self.policy_id or other.policy_id,
        )
        flips = sorted(self.flipped_records + other.flipped_records, key=lambda f: f.seq)
        out.flipped_records = flips[:MAX_LISTED]
        out.flips_unlisted = self.flips_unlisted + other.flips_unlisted + len(flips) - len(out.flipped_records)
        return out

    def to_json(self) -> dict:
        return {
            "policy_id": self.policy_id,
            "total": self.total,
            "flips": self.flip_count,
            "matrix": {f"{a.value}->{b.value}": n for (a, b), n in self.matrix.items()},
            "flipped_records": [
                {"seq": f.seq, "old": f.old.value, "new": f.new.value,
                 "new_applied_rules": list(f.new_applied_rules)}
                for f in self.flipped_records
            ],
            "flips_unlisted": self.flips_unlisted,
            "capability_miss_seqs": self.capability_miss_seqs[:MAX_LISTED],
            "skipped_non_decision_records": self.skipped,
        }

    def table(self) -> str:
        width = 10
        rows = ["old \\ new".ljust(width) + "".join(d.value.rjust(width) for d in ORDER)]
        for a in ORDER:
            rows.append(a.value.ljust(width) + "".join(str(self.matrix[(a, b)]).rjust(width) for b in ORDER))
        rows.append(f"replayed {self.total} decisions, {self.flip_count} flipped, "
                    f"{len(self.capability_miss_seqs)} capability-miss held, {self.skipped} skipped")
        return "\n".join(rows)


def replay_decision(policy: PolicySet, record: DecisionRecord) -> tuple[Decision, tuple[str, ...]]:
    if record.applied_rules == (CAPABILITY_MISS,):
        return Decision.DENY, (CAPABILITY_MISS,)
    outcome = decide(policy, record.intent, record.context)
    return outcome.decision, outcome.applied_rules


def simulate(new_policy: PolicySet, stream: Iterable[DecisionRecord]) -> SimulationReport:
    report = SimulationReport(policy_id=new_policy.policy_id)
    for record in stream:
        if record.kind != "decision":
            report.skipped += 1
            continue
        new, rules = replay_decision(new_policy, record)
        if record.applied_rules == (CAPABILITY_MISS,):
            report.capability_miss_seqs.append(record.seq)
        report.total += 1
        report.matrix[(record.decision, new)] += 1
        if new != record.decision:
            if len(report.flipped_records) < MAX_LISTED:
                report.flipped_records.append(Flip(record.seq, record.decision, new, rules))
            else:
                report.flips_unlisted += 1
    return report
