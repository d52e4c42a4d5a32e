"""Latency benchmark for the governance path.

Rows: ``decide`` at each requested rule count (timed round-robin), ``chain_hash`` on a
pre-serialized record, one ledger append, and the end-to-end mediation path
(decide then append, which hashes).  Timings use ``perf_counter_ns`` per
operation; percentiles come from ``statistics.quantiles``.
"""

from __future__ import annotations

import os
import platform
import random
import statistics
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from idc.core import GENESIS_HASH, Decision, Intent, canonical_serialize, chain_hash
from idc.ledger import Ledger
from idc.policy import NumericCmp, PolicyRule, PolicySet, SetMember, StringPrefix, decide

BENCH_SEED = 0x1DC1
DEFAULT_RULES = (5, 10, 20)

_ACTIONS = ("email.send", "payment.refund", "crm.read", "kv.get", "file.write", "http.get")
_WORDS = tuple(f"w{k:02d}" for k in range(32))


@dataclass(frozen=True)
class BenchRow:
    name: str
    p50: float
    p95: float
    p99: float
    mean: float


@dataclass
class BenchReport:
    rows: list[BenchRow]
    metadata: dict = field(default_factory=dict)

    def row(self, name: str) -> BenchRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_json(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "metadata": self.metadata}

    def table(self) -> str:
        lines = [f"{'operation':<28}{'p50':>10}{'p95':>10}{'p99':>10}{'mean':>10}   (microseconds)"]
        for r in self.rows:
            lines.append(f"{r.name:<28}{r.p50:>10.2f}{r.p95:>10.2f}{r.p99:>10.2f}{r.mean:>10.2f}")
        return "\n".join(lines)


def bench_policy(n: int, rng: random.Random) -> PolicySet:
    """n//3 prefix rules, n//3 set rules of 8 strings, the rest numeric."""
    rules = []
    third = n // 3
    effects = (Decision.ALLOW, Decision.ALLOW, Decision.ESCALATE, Decision.DENY)
    for k in range(n):
        if k < third:
            pred = StringPrefix("action", rng.choice(_ACTIONS).split(".")[0] + ".")
        elif k < 2 * third:
            pred = SetMember("params.region", tuple(rng.sample(_WORDS, 8)))
        else:
            pred = NumericCmp("params.amount_cents", rng.choice(("<", "<=", ">", ">=")), rng.randint(0, 200_000))
        rules.append(PolicyRule(f"r{k:03d}", pred, rng.choice(effects)))
    return PolicySet(f"bench-{n}", tuple(rules), Decision.DENY)


def bench_intents(rng: random.Random, count: int = 256) -> list[Intent]:
    out = []
    for k in range(count):
        action = rng.choice(_ACTIONS)
        out.append(Intent(
            action=action,
            target="@stdlib/" + action.replace(".", "/"),
            params={"region": rng.choice(_WORDS), "amount_cents": rng.randint(1, 200_000), "request_id": f"B{k}"},
            context={"tenant": "bench", "step": k},
        ))
    return out


def _summarize(name: str, samples_ns: Sequence[int]) -> BenchRow:
    us = [s / 1000 for s in samples_ns]
    cuts = statistics.quantiles(us, n=100, method="inclusive")
    return BenchRow(name, cuts[49], cuts[94], cuts[98], statistics.fmean(us))


def _time(op: Callable[[int], object], iterations: int, warmup: int) -> list[int]:
    for k in range(warmup):
        op(k)
    clock = time.perf_counter_ns
    samples = []
    for k in range(iterations):
        t0 = clock()
        op(k)
        samples.append(clock() - t0)
    return samples


def _time_interleaved(ops: Sequence[Callable[[int], object]], iterations: int, warmup: int) -> list[list[int]]:
    """Round-robin over ops so clock or load drift lands on every row alike."""
    for k in range(warmup):
        for op in ops:
            op(k)
    clock = time.perf_counter_ns
    samples: list[list[int]] = [[] for _ in ops]
    for k in range(iterations):
        for op, out in zip(ops, samples):
            t0 = clock()
            op(k)
            out.append(clock() - t0)
    return samples


def _host() -> dict:
    cpu = platform.processor()
    try:
        for line in Path("/proc/cpuinfo").read_text().splitlines():
            if line.startswith("model name"):
                cpu = line.split(":", 1)[1].strip()
                break
    except OSError:
        pass
    return {
        "os": f"{platform.system()} {platform.release()}",
        "cpu": cpu or platform.machine(),
        "cpu_count": os.cpu_count(),
        "python": sys.version.split()[0],
    }


def run_bench(
    rule_counts: Sequence[int] = DEFAULT_RULES,
    *,
    iterations: int = 10_000,
    warmup: int = 1_000,
    durability: str = "durable",
    directory: str | Path | None = None,
    seed: int = BENCH_SEED,
) -> BenchReport:
    if not rule_counts:
        raise ValueError("at least one rule count is required")
    if iterations < 2:
        raise ValueError("need at least 2 iterations for percentiles")
    rng = random.Random(seed)
    intents = bench_intents(rng)
    policies = {n: bench_policy(n, rng) for n in rule_counts}
    mask = len(intents) - 1
    rows = []

    def evaluator(policy: PolicySet) -> Callable[[int], object]:
        return lambda k: decide(policy, intents[k & mask], intents[k & mask].context)

    per_count = _time_interleaved([evaluator(policies[n]) for n in rule_counts], iterations, warmup)
    for n, samples in zip(rule_counts, per_count):
        rows.append(_summarize(f"policy_eval_{n}", samples))

    widest = policies[max(rule_counts)]
    templates = [decide(widest, i, i.context).record_template for i in intents]
    sample_record = canonical_serialize(Ledger().append(templates[0]))
    rows.append(_summarize("hash_sha256", _time(lambda k: chain_hash(sample_record, GENESIS_HASH),
                                                iterations, warmup)))

    with tempfile.TemporaryDirectory(prefix="idc-bench-", dir=directory) as tmp:
        with Ledger(Path(tmp) / "append.idledger", durability=durability) as ledger:
            samples = _time(lambda k: ledger.append(templates[k & mask]), iterations, warmup)
        rows.append(_summarize(f"ledger_append_{durability}", samples))

        with Ledger(Path(tmp) / "total.idledger", durability=durability) as ledger:
            def mediate(k: int) -> None:
                intent = intents[k & mask]
                ledger.append(decide(widest, intent, intent.context).record_template)
            samples = _time(mediate, iterations, warmup)
        rows.append(_summarize(f"total_governance_{durability}", samples))

    metadata = {
        "iterations": iterations,
        "warmup": warmup,
        "durability": durability,
        "rule_counts": list(rule_counts),
        "seed": seed,
        "timer": "time.perf_counter_ns",
        **_host(),
    }
    return BenchReport(rows, metadata)
