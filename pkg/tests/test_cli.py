import json
import shutil

import pytest

from idc.cli import main
from idc.ledger import verify_chain


@pytest.fixture
def work(examples, tmp_path, monkeypatch):
    monkeypatch.delenv("IDC_SANDBOX", raising=False)
    for name in ("refund_agent.idp", "refund_policy_500.json", "refund_policy_1000.json",
                 "refund_context.json", "refund_fixtures.json", "invoice.idp",
                 "invoice_policy.json", "invoice_context.json"):
        shutil.copy(examples / name, tmp_path / name)
    monkeypatch.chdir(tmp_path)
    return tmp_path


def refund(ledger="l.idledger", policy="refund_policy_1000.json", context="refund_context.json", *extra):
    return main(["run", "refund_agent.idp", "--policy", policy, "--context", context,
                 "--ledger", ledger, "--fixtures", "refund_fixtures.json", "--durability", "fast", *extra])


def big_context(path, amount=750_000):
    ctx = json.loads(path.read_text())
    ctx["request"]["amount_cents"] = amount
    return json.dumps(ctx)


def test_run_verify_replay(work, capsys):
    assert refund() == 0
    assert "status: completed" in capsys.readouterr().out
    assert main(["verify", "l.idledger"]) == 0
    assert main(["replay-check", "--ledger", "l.idledger", "--policy", "refund_policy_1000.json"]) == 0
    assert (work / "idc-sandbox" / "payments" / "refunds.csv").is_file()


def test_denied_run_exits_3(work):
    assert refund(policy="refund_policy_500.json") == 3
    assert verify_chain(work / "l.idledger").records == 3


def test_simulate_reports_flip(work, capsys):
    refund(policy="refund_policy_500.json")
    capsys.readouterr()
    code = main(["simulate", "--ledger", "l.idledger", "--policy", "refund_policy_1000.json",
                 "--json", "--out", "sim.json"])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["flips"] == 1 and doc["matrix"]["deny->allow"] == 1
    assert json.loads((work / "sim.json").read_text()) == doc
    # the old policy sees its own decisions
    assert main(["replay-check", "--ledger", "l.idledger", "--policy", "refund_policy_500.json"]) == 0


def test_replay_check_flags_flips(work):
    refund(policy="refund_policy_500.json")
    doc = json.loads((work / "refund_policy_1000.json").read_text())
    doc["policy_id"] = json.loads((work / "refund_policy_500.json").read_text())["policy_id"]
    (work / "edited.json").write_text(json.dumps(doc))
    assert main(["replay-check", "--ledger", "l.idledger", "--policy", "edited.json"]) == 3


def test_escalation_then_approve(work, capsys):
    assert refund("l.idledger", "refund_policy_1000.json", big_context(work / "refund_context.json"), "--json") == 4
    ticket = json.loads(capsys.readouterr().out)["ticket"]
    assert (work / f"{ticket}.idticket").is_file()
    assert main(["approve", ticket, "--allow", "--ledger", "l.idledger",
                 "--fixtures", "refund_fixtures.json"]) == 0
    assert main(["approve", ticket, "--allow", "--ledger", "l.idledger",
                 "--fixtures", "refund_fixtures.json"]) == 1
    assert main(["verify", "l.idledger"]) == 0
    # crm, kv, escalated refund, its resolution, notify
    assert verify_chain(work / "l.idledger").records == 5


def test_approve_deny_and_unknown_ticket(work, capsys):
    refund("l.idledger", "refund_policy_1000.json", big_context(work / "refund_context.json"), "--json")
    ticket = json.loads(capsys.readouterr().out)["ticket"]
    assert main(["approve", ticket, "--deny", "--ledger", "l.idledger", "--fixtures", "refund_fixtures.json"]) == 3
    assert main(["approve", "deadbeef", "--allow", "--ledger", "l.idledger"]) == 1
    assert main(["approve", "../etc", "--allow", "--ledger", "l.idledger"]) == 1


def test_tampered_ledger(work, capsys):
    refund()
    capsys.readouterr()
    path = work / "l.idledger"
    lines = path.read_bytes().splitlines(keepends=True)
    lines[1] = lines[1].replace(b"refund_policy", b"refund_polisy", 1)
    assert lines[1] != path.read_bytes().splitlines(keepends=True)[1]
    path.write_bytes(b"".join(lines))
    assert main(["verify", "l.idledger", "--json"]) == 2
    assert json.loads(capsys.readouterr().out)["first_bad_seq"] == 1
    assert main(["simulate", "--ledger", "l.idledger", "--policy", "refund_policy_500.json"]) == 2
    assert main(["replay-check", "--ledger", "l.idledger", "--policy", "refund_policy_1000.json"]) == 2
    code = main(["simulate", "--ledger", "l.idledger", "--policy", "refund_policy_500.json", "--force", "--json"])
    assert code == 0 and json.loads(capsys.readouterr().out)["total"] == 1


@pytest.mark.parametrize("argv", [
    ["verify", "missing.idledger"],
    ["run", "refund_agent.idp", "--policy", "nope.json", "--ledger", "x.idledger"],
    ["run", "nope.idp", "--policy", "refund_policy_500.json", "--ledger", "x.idledger"],
    ["run", "refund_agent.idp", "--policy", "refund_policy_500.json", "--ledger", "x.idledger",
     "--context", "[1]"],
    ["run", "refund_agent.idp", "--policy", "refund_policy_500.json", "--ledger", "x.idledger",
     "--fixtures", '{"bogus": {}}'],
    ["bench", "--rules", "a,b"],
])
def test_usage_errors_exit_1(work, argv):
    assert main(argv) == 1


def test_empty_ledger_verifies(work):
    (work / "e.idledger").write_bytes(b"")
    assert main(["verify", "e.idledger"]) == 0


def test_sandbox_env_override(work, monkeypatch, tmp_path_factory):
    elsewhere = tmp_path_factory.mktemp("sb")
    monkeypatch.setenv("IDC_SANDBOX", str(elsewhere))
    assert refund(*("l.idledger", "refund_policy_1000.json", "refund_context.json"), "--sandbox", "ignored") == 0
    assert (elsewhere / "outbox").is_dir()
    assert not (work / "ignored").exists() and not (work / "idc-sandbox").exists()


def test_invoice_inline_context(work, capsys):
    ctx = (work / "invoice_context.json").read_text()
    code = main(["run", "invoice.idp", "--policy", "invoice_policy.json", "--context", ctx,
                 "--ledger", "inv.idledger", "--json"])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["status"] == "completed" and doc["trace"][0]["decision"] == "allow"


def test_case_study_and_bench(work, capsys):
    assert main(["case-study", "--count", "30", "--json", "--out", "cs.json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["agrees"] is True
    assert main(["bench", "--rules", "2,4", "--iterations", "50", "--warmup", "5", "--durability", "fast",
                 "--json"]) == 0
    names = [r["name"] for r in json.loads(capsys.readouterr().out)["rows"]]
    assert "policy_eval_2" in names and "policy_eval_4" in names
