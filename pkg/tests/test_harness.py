"""Simulation harness: scenario configs, determinism and conservation."""

import json

import pytest

from poh.audit import verify_audit_log
from poh.errors import ConfigInvalid
from poh.harness import bundled_scenarios, load_scenario, run_scenario
from poh.harness.config import parse_scenario
from poh.harness.runner import format_summary, strip_latency

MINIMAL = """\
schema: poh-scenario/v1
name: tiny
seed: 7
subscribers: 4
flows_per_subscriber: 2
packets_per_flow: 40
classifier: {train_flows: 60}
"""


@pytest.fixture(scope="module")
def bundled_results():
    return {name: run_scenario(load_scenario(name), keep_trace=(name == "mitm_tamper")) for name in bundled_scenarios()}


class TestConfig:
    def test_bundled_names(self):
        assert set(bundled_scenarios()) >= {"honest_baseline", "replay_attack", "mitm_tamper", "strip_and_inject", "blind_mode"}

    def test_minimal_config_defaults(self):
        cfg = parse_scenario(MINIMAL)
        assert (cfg.name, cfg.seed, cfg.hops, cfg.token_lifetime) == ("tiny", 7, 5, 300)

    @pytest.mark.parametrize("text,field,line", [
        (MINIMAL + "bogus: 1\n", "bogus", 8),
        (MINIMAL.replace("seed: 7", "seed: seven"), "seed", 3),
        (MINIMAL.replace("subscribers: 4", "subscribers: 0"), "subscribers", 4),
        (MINIMAL + "mix: {human: 1.5, bot: 0}\n", "mix.human", 8),
        (MINIMAL + "adversaries:\n  - {behavior: Teleporter, hop: 1}\n", "adversaries[0].behavior", 9),
        (MINIMAL + "expect: {unknown_check: true}\n", "expect.unknown_check", 8),
    ])
    def test_errors_name_field_and_line(self, text, field, line):
        with pytest.raises(ConfigInvalid) as exc:
            parse_scenario(text)
        assert exc.value.field == field and exc.value.line == line
        assert field in str(exc.value)

    @pytest.mark.parametrize("text", ["", "- a list\n", "schema: other/v1\nname: x\nseed: 1\n", "name: [unclosed\n"])
    def test_malformed_documents(self, text):
        with pytest.raises(ConfigInvalid):
            parse_scenario(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigInvalid):
            load_scenario(tmp_path / "nope.yaml")


class TestRuns:
    def test_every_bundled_scenario_passes(self, bundled_results):
        for name, res in bundled_results.items():
            failing = [a for a in res.report["assertions"] if not a["ok"]]
            assert res.passed, f"{name}: {failing}"
            assert verify_audit_log(res.audit_log).ok

    def test_determinism(self):
        cfg = parse_scenario(MINIMAL)
        a, b = run_scenario(cfg), run_scenario(cfg)
        assert strip_latency(a.report) == strip_latency(b.report)
        assert [e.to_line() for e in a.audit_log.entries()] == [e.to_line() for e in b.audit_log.entries()]

    def test_seed_changes_outcome(self):
        cfg = parse_scenario(MINIMAL)
        other = parse_scenario(MINIMAL.replace("seed: 7", "seed: 8"))
        assert strip_latency(run_scenario(cfg).report) != strip_latency(run_scenario(other).report)

    def test_conservation(self, bundled_results):
        # every Verified verdict traces back to a token the issuer produced;
        # nothing an on-path node forged ever verifies
        for name, res in bundled_results.items():
            issued = set(res.issued_refs)
            verified = [e.ref for e in res.audit_log.entries() if e.type == "verify" and e.verdict == "Verified"]
            assert set(verified) <= issued, name
            assert not (set(verified) & res.injected_refs), name
            assert len(verified) == len(set(verified)), name
            issue_refs = [e.ref for e in res.audit_log.entries() if e.type == "issue"]
            assert sorted(issue_refs) == sorted(res.issued_refs), name

    def test_report_invariants(self, bundled_results):
        for res in bundled_results.values():
            r = res.report
            assert r["schema"] == "poh-report/v1"
            assert sum(r["verdicts"].values()) == r["totals"]["token_verifications"]
            assert sum(r["actions"].values()) == r["totals"]["token_verifications"] + r["totals"]["tokenless_packets"]
            assert r["totals"]["packets_delivered"] == r["totals"]["packets_sent"]
            assert sum(r["sessions"]["final_states"].values()) == r["sessions"]["tracked"]
            assert "not reproducible" in r["latency"]["caveat"]
            json.dumps(r, allow_nan=False)
            assert r["scenario"] in format_summary(r)

    def test_scenario_specific_outcomes(self, bundled_results):
        honest = bundled_results["honest_baseline"].report
        assert honest["verdicts"]["Verified"] == honest["totals"]["token_verifications"]
        assert honest["escalations"] == 0
        replay = bundled_results["replay_attack"].report["replay"]
        assert replay["replayed_verdicts"] == replay["replays_within_lifetime"] > 0
        assert replay["expired_verdicts"] == replay["replays_after_expiry"] > 0
        assert bundled_results["mitm_tamper"].report["verdicts"]["InvalidSignature"] > 0
        assert bundled_results["mitm_tamper"].report["tamper"]["modified_headers_verified"] == 0

    def test_trace_records_each_hop(self, bundled_results):
        res = bundled_results["mitm_tamper"]
        hops = load_scenario("mitm_tamper").hops
        assert res.trace
        first = [r for r in res.trace if r["flow_id"] == res.trace[0]["flow_id"] and r["seq"] == 0]
        assert [r["hop"] for r in first] == list(range(hops))
        assert {"flow_id", "seq", "hop", "node", "header", "tag"} <= set(res.trace[0])

    def test_blind_tokens_never_name_sessions(self, bundled_results):
        res = bundled_results["blind_mode"]
        blind_issues = [e for e in res.audit_log.entries() if e.type == "issue" and e.verdict == "Blinded"]
        assert blind_issues and all(e.subject == "blind" for e in blind_issues)
