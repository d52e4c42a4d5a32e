import pytest

from idc.casestudy import (
    AMOUNT_BANDS,
    CaseStudyMismatch,
    PolicyParams,
    RefundRequest,
    WorkloadSpec,
    generate_workload,
    oracle_report,
    run_case_study,
)
from idc.ledger import verify_chain


def test_workload_is_deterministic():
    spec = WorkloadSpec(seed=7, count=200)
    assert generate_workload(spec) == generate_workload(spec)
    assert len(generate_workload(spec)) == 200
    assert generate_workload(spec) != generate_workload(WorkloadSpec(seed=8, count=200))


def test_default_workload_covers_every_band():
    requests = generate_workload(WorkloadSpec())
    for lo, hi in AMOUNT_BANDS:
        assert any(lo <= r.amount_cents <= hi for r in requests)
    # the two thresholds the experiment moves between
    assert any(r.amount_cents <= 50_000 for r in requests)
    assert any(50_000 < r.amount_cents <= 100_000 for r in requests)
    assert any(r.amount_cents > 100_000 for r in requests)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        WorkloadSpec(count=0)
    with pytest.raises(ValueError):
        RefundRequest("R", "C", 0, "us", "x")
    with pytest.raises(ValueError):
        run_case_study(WorkloadSpec(count=5), PolicyParams(50_000), PolicyParams(100_000, escalate_above_cents=1))


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_counts_match_oracle(seed, tmp_path):
    path = tmp_path / "case.idledger"
    report = run_case_study(WorkloadSpec(seed=seed, count=120), ledger_path=path)
    assert report.agrees and report.measured == report.oracle
    assert verify_chain(path).records == report.measured["intents"]
    requests = generate_workload(WorkloadSpec(seed=seed, count=120))
    assert set(report.measured["flip_requests"]).isdisjoint(
        r.request_id for r in requests if r.region not in PolicyParams().allowed_regions)


def test_record_count_follows_ask_structure():
    spec = WorkloadSpec(seed=4, count=80)
    report = run_case_study(spec)
    m = report.measured
    assert m["intents"] == 4 * m["requests_completed"] + 3 * (m["requests_suspended"]
                                                              + m["requests_denied"] - m["denied_by_region"]) \
        + m["denied_by_region"]


def test_mismatch_is_a_hard_failure(monkeypatch):
    import idc.casestudy as cs

    def wrong(requests, a, b):
        out = oracle_report(requests, a, b)
        out["allowed"] += 1
        return out

    monkeypatch.setattr(cs, "oracle_report", wrong)
    with pytest.raises(CaseStudyMismatch):
        run_case_study(WorkloadSpec(count=20))
    assert not run_case_study(WorkloadSpec(count=20), strict=False).agrees
