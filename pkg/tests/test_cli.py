"""Command-line interface, including a live ``serve`` process."""

import json
import os
import re
import signal
import subprocess
import sys

import httpx
import pytest

from poh.audit import AuditLog, verify_audit_file
from poh.cli import build_parser, main
from poh.flows import read_corpus


def test_subcommands_exist():
    names = build_parser()._subparsers._group_actions[0].choices
    assert set(names) == {"run", "serve", "audit", "gen-corpus", "report"}


def test_run_writes_report_audit_and_trace(tmp_path, capsys):
    out, audit, trace = tmp_path / "r.json", tmp_path / "a.jsonl", tmp_path / "t.jsonl"
    code = main(["run", "honest_baseline", "--out", str(out), "--audit-out", str(audit), "--trace-out", str(trace)])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["passed"] and report["scenario"] == "honest_baseline"
    assert verify_audit_file(audit).ok
    first = json.loads(trace.read_text().splitlines()[0])
    assert {"flow_id", "seq", "hop", "header"} <= set(first)
    assert "PASS" in capsys.readouterr().out
    assert main(["report", str(out)]) == 0


def test_run_seed_override(tmp_path):
    out = tmp_path / "r.json"
    main(["run", "honest_baseline", "--out", str(out), "--seed", "5"])
    assert json.loads(out.read_text())["seed"] == 5


def test_run_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema: poh-scenario/v1\nname: x\nseed: 1\nsubscribers: -3\n")
    assert main(["run", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "line 4" in err and "subscribers" in err
    assert main(["run", "no-such-scenario"]) == 2


def test_failing_scenario_exits_1(tmp_path):
    cfg = tmp_path / "strict.yaml"
    cfg.write_text("schema: poh-scenario/v1\nname: strict\nseed: 1\nsubscribers: 3\n"
                   "classifier: {train_flows: 40}\nexpect: {min_escalations: 1000}\n")
    assert main(["run", str(cfg), "--out", str(tmp_path / "r.json")]) == 1
    assert main(["report", str(tmp_path / "r.json")]) == 1


def test_audit_command(tmp_path, capsys):
    path = tmp_path / "a.jsonl"
    log = AuditLog(path)
    for i in range(5):
        log.append("verify", "s", "Verified", float(i), f"{i:032x}")
    log.close()
    assert main(["audit", str(path)]) == 0
    assert "valid (5 entries)" in capsys.readouterr().out
    lines = path.read_text().splitlines()
    lines[2] = lines[2].replace("Verified", "Replayed")
    path.write_text("\n".join(lines) + "\n")
    assert main(["audit", str(path)]) == 1
    assert "broken at index 2" in capsys.readouterr().out
    assert main(["audit", str(tmp_path / "missing.jsonl")]) == 2


def test_report_rejects_other_documents(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"schema": "other"}')
    assert main(["report", str(p)]) == 2
    p.write_text("{")
    assert main(["report", str(p)]) == 2
    assert main(["report", str(tmp_path / "none.json")]) == 2


def test_gen_corpus(tmp_path, capsys):
    out, model = tmp_path / "c.jsonl", tmp_path / "m.npz"
    assert main(["gen-corpus", "--humans", "20", "--bots", "20", "--seed", "3", "--out", str(out), "--model-out", str(model)]) == 0
    corpus = read_corpus(out)
    assert [c.label for c in corpus].count("human") == 20 and model.exists()
    assert "in-sample AUC" in capsys.readouterr().out


# live server -----------------------------------------------------------------


def start_server(tmp_path, *extra):
    cmd = [sys.executable, "-c", "import sys; from poh.cli import main; sys.exit(main(sys.argv[1:]))",
           "serve", "--port", "0", "--audit-log", str(tmp_path / "audit.jsonl"), "--client", "c:key", *extra]
    cfg = tmp_path / "serve.yaml"
    cfg.write_text("schema: poh-serve/v1\nblind_bits: 0\nsubscribers:\n  - {id: imsi-1, device: imei-1, seed: 1}\n")
    proc = subprocess.Popen(cmd + [str(cfg)], stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    line = proc.stdout.readline()
    m = re.search(r"ready on (http://\S+)", line)
    if not m:
        proc.kill()
        pytest.fail(f"server did not start: {line!r} {proc.stderr.read()}")
    return proc, m.group(1)


def exercise(base):
    h = {"X-API-Key": "key"}
    with httpx.Client(base_url=base, timeout=10) as c:
        sid = c.post("/v1/attach", json={"subscriber_id": "imsi-1", "device_id": "imei-1"}, headers=h).json()["session_id"]
        tok = c.post("/v1/tokens", json={"session_id": sid}, headers=h).json()["token"]
        assert c.post("/v1/verify", json={"token": tok}).json()["verdict"] == "Verified"
        r = c.post("/v1/verify", content=b"{not json")
        assert r.status_code == 400 and r.json()["error"]["code"] == "MalformedRequest"
        assert c.get(f"/v1/sessions/{sid}/poh").status_code == 401


@pytest.mark.slow
def test_serve_clean_shutdown(tmp_path):
    proc, base = start_server(tmp_path)
    try:
        exercise(base)
        port = int(base.rsplit(":", 1)[1])
        busy = subprocess.run([sys.executable, "-c", "import sys; from poh.cli import main; sys.exit(main(sys.argv[1:]))",
                               "serve", "--port", str(port)], capture_output=True, text=True, timeout=60)
        assert busy.returncode == 3 and "port in use" in busy.stderr
    finally:
        proc.send_signal(signal.SIGINT)
        proc.wait(timeout=30)
    assert proc.returncode == 0
    check = verify_audit_file(tmp_path / "audit.jsonl")
    assert check.ok and check.count >= 3


@pytest.mark.slow
def test_serve_crash_leaves_verifiable_log(tmp_path):
    proc, base = start_server(tmp_path)
    exercise(base)
    os.kill(proc.pid, signal.SIGKILL)
    proc.wait(timeout=30)
    check = verify_audit_file(tmp_path / "audit.jsonl")
    assert check.ok and check.count >= 3
    # a restart resumes the chain
    proc, base = start_server(tmp_path)
    try:
        exercise(base)
    finally:
        proc.send_signal(signal.SIGINT)
        proc.wait(timeout=30)
    assert verify_audit_file(tmp_path / "audit.jsonl").count > check.count


def test_serve_refuses_broken_log(tmp_path, capsys):
    path = tmp_path / "audit.jsonl"
    log = AuditLog(path)
    log.append("x", ts=1.0)
    log.append("y", ts=2.0)
    log.close()
    path.write_text(path.read_text().replace('"y"', '"z"'))
    assert main(["serve", "--port", "0", "--audit-log", str(path)]) == 2
    assert "broken" in capsys.readouterr().err
