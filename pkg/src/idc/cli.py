"""``idc`` command line.

Exit codes
  run / approve   0 completed, 3 denied and halted, 4 suspended, 1 error
  verify          0 chain intact (an empty ledger is valid), 2 tampered, 1 unreadable
  simulate        0 report written, 2 ledger fails verification (override with --force), 1 error
  replay-check    0 no flips, 2 ledger fails verification, 3 flips found, 1 error
  case-study      0 every count matches the oracle, 1 mismatch or error
  bench           0
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from idc.core import Decision, SerializationError, deserialize
from idc.effects import EffectError, EffectRegistry, register_builtin_machines
from idc.lang import ParseError, parse
from idc.ledger import Ledger, LedgerError, read_stream, verify_chain
from idc.policy import PolicyError, load_policy
from idc.replay import simulate
from idc.runtime import (
    COMPLETED,
    DENIED_HALT,
    SUSPENDED,
    TICKET_SUFFIX,
    EscalationTicket,
    RunResult,
    RuntimeFailure,
    resume,
    run_program,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_TAMPERED = 2
EXIT_DENIED = 3
EXIT_SUSPENDED = 4
EXIT_FLIPS = 3

_STATUS_EXIT = {COMPLETED: EXIT_OK, DENIED_HALT: EXIT_DENIED, SUSPENDED: EXIT_SUSPENDED}


class CliError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"idc: {msg}", file=sys.stderr)


def _emit(args: argparse.Namespace, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    elif text:
        print(text)


def _read_json(arg: Optional[str], what: str) -> Any:
    """Inline JSON, or a path to a JSON file."""
    if arg is None:
        return None
    try:
        if arg.lstrip().startswith(("{", "[")):
            return deserialize(arg)
        return deserialize(Path(arg).read_bytes())
    except OSError as exc:
        raise CliError(f"cannot read {what} {arg!r}: {exc.strerror}") from None
    except SerializationError as exc:
        raise CliError(f"bad {what}: {exc}") from None


def _sandbox(args: argparse.Namespace, ledger_path: Path) -> Path:
    chosen = os.environ.get("IDC_SANDBOX") or args.sandbox
    return Path(chosen) if chosen else ledger_path.parent / "idc-sandbox"


def _registry(args: argparse.Namespace, ledger_path: Path) -> EffectRegistry:
    # imported here so the case-study module stays optional for plain runs
    from idc.casestudy import crm_machine

    fixtures = _read_json(args.fixtures, "fixtures") or {}
    if type(fixtures) is not dict or not set(fixtures) <= {"http", "kv", "crm"}:
        raise CliError('fixtures must be an object with optional "http", "kv" and "crm" sections')
    registry = register_builtin_machines(
        _sandbox(args, ledger_path),
        http_fixtures=fixtures.get("http"),
        kv_seed=fixtures.get("kv"),
        namespaces=("email", "http", "file", "kv", "payment", "crm"),
    )
    registry.register(crm_machine(fixtures.get("crm", {})))
    return registry


def _result_payload(result: RunResult) -> dict:
    return {
        "status": result.status,
        "error": result.error,
        "trace": [{"seq": t.record_seq, "action": t.intent.action, "target": t.intent.target,
                   "decision": t.decision.value} for t in result.trace],
        "ticket": result.suspension.ticket_id if result.suspension else None,
    }


def _report_run(args: argparse.Namespace, result: RunResult, ledger_path: Path) -> int:
    lines = [f"[{t.record_seq}] {t.intent.action} -> {t.intent.target}: {t.decision.value}"
             for t in result.trace]
    if result.suspension is not None:
        path = result.suspension.save(ledger_path.parent)
        lines.append(f"suspended: ticket {result.suspension.ticket_id} ({path.name})")
    if result.error:
        _err(result.error)
    lines.append(f"status: {result.status}")
    _emit(args, _result_payload(result), "\n".join(lines))
    return _STATUS_EXIT.get(result.status, EXIT_ERROR)


def cmd_run(args: argparse.Namespace) -> int:
    try:
        source = Path(args.program).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read program {args.program!r}: {exc.strerror}") from None
    ast = parse(source)
    policy = load_policy(args.policy)
    context = _read_json(args.context, "context") or {}
    if type(context) is not dict:
        raise CliError("context must be a JSON object")
    ledger_path = Path(args.ledger)
    registry = _registry(args, ledger_path)
    with Ledger(ledger_path, durability=args.durability) as ledger:
        result = run_program(ast, policy, context, ledger, registry)
    return _report_run(args, result, ledger_path)


def cmd_verify(args: argparse.Namespace) -> int:
    path = Path(args.ledger)
    if not path.is_file():
        raise CliError(f"cannot read ledger {args.ledger!r}")
    try:
        report = verify_chain(path)
    except OSError as exc:
        raise CliError(f"cannot read ledger {args.ledger!r}: {exc.strerror}") from None
    payload = {"ok": report.ok, "records": report.records,
               "first_bad_seq": report.first_bad_seq, "reason": report.reason}
    _emit(args, payload, str(report))
    return EXIT_OK if report.ok else EXIT_TAMPERED


def _checked_stream(args: argparse.Namespace, force: bool) -> Optional[list]:
    path = Path(args.ledger)
    if not path.is_file():
        raise CliError(f"cannot read ledger {args.ledger!r}")
    report = verify_chain(path)
    if not report.ok:
        if not force:
            _err(f"ledger fails verification: {report}")
            return None
        _err(f"warning: ledger fails verification ({report}); replaying readable prefix")
        keep = path.read_bytes().splitlines(keepends=True)[:report.first_bad_seq or 0]
        return list(read_stream(b"".join(keep), verify=False))
    return list(read_stream(path, verify=False))


def cmd_simulate(args: argparse.Namespace) -> int:
    stream = _checked_stream(args, args.force)
    if stream is None:
        return EXIT_TAMPERED
    report = simulate(load_policy(args.policy), stream)
    payload = report.to_json()
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit(args, payload, report.table())
    return EXIT_OK


def cmd_replay_check(args: argparse.Namespace) -> int:
    stream = _checked_stream(args, False)
    if stream is None:
        return EXIT_TAMPERED
    policy = load_policy(args.policy)
    own = [r for r in stream if r.policy_id == policy.policy_id]
    report = simulate(policy, own)
    payload = report.to_json() | {"other_policy_records": len(stream) - len(own)}
    text = f"{report.total} decisions replayed under {policy.policy_id}: {report.flip_count} flipped"
    if len(own) != len(stream):
        text += f" ({len(stream) - len(own)} records from other policies ignored)"
    _emit(args, payload, text)
    return EXIT_OK if report.flip_count == 0 else EXIT_FLIPS


def _find_ticket(args: argparse.Namespace, ledger_path: Path) -> EscalationTicket:
    if not args.ticket or not all(c in "0123456789abcdef" for c in args.ticket):
        raise CliError(f"unknown ticket {args.ticket!r}")
    directory = Path(args.tickets) if args.tickets else ledger_path.parent
    path = directory / f"{args.ticket}{TICKET_SUFFIX}"
    if not path.is_file():
        raise CliError(f"unknown ticket {args.ticket!r}")
    try:
        return EscalationTicket.load(path)
    except (SerializationError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"corrupt ticket {path.name}: {exc}") from None


def cmd_approve(args: argparse.Namespace) -> int:
    ledger_path = Path(args.ledger)
    if not ledger_path.is_file():
        raise CliError(f"cannot read ledger {args.ledger!r}")
    ticket = _find_ticket(args, ledger_path)
    decision = Decision.ALLOW if args.allow else Decision.DENY
    registry = _registry(args, ledger_path)
    with Ledger(ledger_path, durability=args.durability) as ledger:
        result = resume(ticket, decision, ledger, registry)
    return _report_run(args, result, ledger_path)


def cmd_bench(args: argparse.Namespace) -> int:
    from idc.bench import run_bench

    try:
        counts = [int(x) for x in args.rules.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"bad rule list {args.rules!r}") from None
    if not counts or min(counts) < 1:
        raise CliError("rule counts must be positive integers")
    report = run_bench(counts, iterations=args.iterations, warmup=args.warmup, durability=args.durability)
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8")
    _emit(args, report.to_json(), report.table())
    return EXIT_OK


def cmd_case_study(args: argparse.Namespace) -> int:
    from idc.casestudy import WorkloadSpec, run_case_study

    report = run_case_study(WorkloadSpec(seed=args.seed, count=args.count),
                            ledger_path=args.ledger, strict=False)
    payload = report.to_json()
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    m = report.measured
    text = "\n".join([
        f"requests {m['requests']}, intents {m['intents']}: "
        f"{m['allowed']} allowed, {m['denied']} denied, {m['escalated']} escalated",
        f"replay under {report.policy_b}: flips {m['flips'] or 'none'}",
        "oracle agrees on every count" if report.agrees else "ORACLE MISMATCH:\n  " + "\n  ".join(report.mismatches),
    ])
    _emit(args, payload, text)
    return EXIT_OK if report.agrees else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idc", description="Governed execution of intent-driven programs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("--json", action="store_true", help="print machine-readable JSON")
        return p

    def effects(p: argparse.ArgumentParser) -> None:
        p.add_argument("--sandbox", help="sandbox root for effect machines (IDC_SANDBOX overrides)")
        p.add_argument("--fixtures", help='JSON with optional "http", "kv", "crm" sections')
        p.add_argument("--durability", choices=("durable", "fast"), default="durable")

    p = common(sub.add_parser("run", help="execute a program under a policy"))
    p.add_argument("program")
    p.add_argument("--policy", required=True)
    p.add_argument("--context", help="inline JSON object or path to a JSON file")
    p.add_argument("--ledger", required=True)
    effects(p)
    p.set_defaults(func=cmd_run)

    p = common(sub.add_parser("verify", help="check a ledger's hash chain"))
    p.add_argument("ledger")
    p.set_defaults(func=cmd_verify)

    p = common(sub.add_parser("simulate", help="re-decide a ledger under another policy"))
    p.add_argument("--ledger", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--out")
    p.add_argument("--force", action="store_true", help="replay the verified prefix of a broken ledger")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("replay-check", help="re-decide a ledger under its own policy"))
    p.add_argument("--ledger", required=True)
    p.add_argument("--policy", required=True)
    p.set_defaults(func=cmd_replay_check)

    p = common(sub.add_parser("approve", help="resolve an escalation ticket and resume"))
    p.add_argument("ticket")
    choice = p.add_mutually_exclusive_group(required=True)
    choice.add_argument("--allow", action="store_true")
    choice.add_argument("--deny", action="store_true")
    p.add_argument("--ledger", required=True)
    p.add_argument("--tickets", help="directory holding .idticket files (default: beside the ledger)")
    effects(p)
    p.set_defaults(func=cmd_approve)

    p = common(sub.add_parser("bench", help="measure governance latency"))
    p.add_argument("--rules", default="5,10,20")
    p.add_argument("--iterations", type=int, default=10_000)
    p.add_argument("--warmup", type=int, default=1_000)
    p.add_argument("--durability", choices=("durable", "fast"), default="durable")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = common(sub.add_parser("case-study", help="refund workload and limit-change replay"))
    p.add_argument("--seed", type=int, default=2026)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--out")
    p.add_argument("--ledger", help="keep the generated ledger at this path")
    p.set_defaults(func=cmd_case_study)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        _err(f"parse error: {exc}")
    except (CliError, PolicyError, LedgerError, EffectError, RuntimeFailure, SerializationError) as exc:
        _err(str(exc))
    except ValueError as exc:
        _err(str(exc))
    except OSError as exc:
        _err(f"{exc.filename or ''}: {exc.strerror}")
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
