"""Command-line entry point: ``poh run|serve|audit|gen-corpus|report``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .errors import ConfigInvalid, PortInUse


def _cmd_run(args: argparse.Namespace) -> int:
    from .harness import load_scenario, run_scenario
    from .harness.runner import format_summary
    from .packets import write_trace

    try:
        cfg = load_scenario(args.scenario)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    result = run_scenario(cfg, keep_trace=args.trace_out is not None)
    out = Path(args.out or f"{cfg.name}.report.json")
    out.write_text(json.dumps(result.report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if args.audit_out:
        result.audit_log.write(args.audit_out)
    if args.trace_out:
        write_trace(args.trace_out, result.trace)
    print(format_summary(result.report))
    print(f"report written to {out}")
    return 0 if result.passed else 1


def _cmd_serve(args: argparse.Namespace) -> int:
    from .serve import ServeConfig, load_serve_config, serve

    try:
        cfg = load_serve_config(args.config) if args.config else ServeConfig()
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.host:
        cfg.host = args.host
    if args.port is not None:
        cfg.port = args.port
    if args.audit_log:
        cfg.audit_log = args.audit_log
    for spec in args.client or []:
        cid, _, key = spec.partition(":")
        if not key:
            print("--client expects ID:KEY", file=sys.stderr)
            return 2
        cfg.clients.append({"id": cid, "api_key": key})
    try:
        serve(cfg)
    except PortInUse as exc:
        print(f"port in use: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        # a broken audit log or registry snapshot is refused before binding
        print(f"cannot start: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        pass
    return 0


def _cmd_audit(args: argparse.Namespace) -> int:
    from .audit import verify_audit_file

    try:
        check = verify_audit_file(args.logfile)
    except FileNotFoundError:
        print(f"no such file: {args.logfile}", file=sys.stderr)
        return 2
    if check.ok:
        print(f"valid ({check.count} entries)")
        return 0
    print(f"broken at index {check.broken_at}: {check.reason}")
    return 1


def _cmd_gen_corpus(args: argparse.Namespace) -> int:
    from .classifier import evaluate, train_anomaly_model
    from .flows import corpus_features, generate_corpus, write_corpus

    corpus = generate_corpus(args.humans, args.bots, seed=args.seed)
    write_corpus(args.out, corpus)
    print(f"wrote {len(corpus)} flows ({args.humans} human, {args.bots} bot) to {args.out}")
    if args.model_out:
        feats = corpus_features(corpus)
        labels = [c.label for c in corpus]
        model = train_anomaly_model(feats, labels, seed=args.seed)
        model.save(args.model_out)
        ev = evaluate(model, feats, labels)
        print(f"model {model.model_id} written to {args.model_out}; in-sample AUC {ev.auc:.4f}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    from .harness.runner import format_summary

    try:
        report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    except FileNotFoundError:
        print(f"no such file: {args.report}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"not a report: {exc}", file=sys.stderr)
        return 2
    if report.get("schema") != "poh-report/v1":
        print("not a poh-report/v1 document", file=sys.stderr)
        return 2
    print(format_summary(report))
    return 0 if report.get("passed") else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="poh", description="Network-level proof-of-humanity toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write a metrics report")
    r.add_argument("scenario", help="scenario YAML file or bundled scenario name")
    r.add_argument("--out", help="report path (default: <name>.report.json)")
    r.add_argument("--audit-out", help="also write the run's audit log (JSONL)")
    r.add_argument("--trace-out", help="also write per-hop packet traces (JSONL)")
    r.add_argument("--seed", type=int, help="override the scenario's master seed")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("serve", help="run the attestation HTTP service until interrupted")
    s.add_argument("config", nargs="?", help="service YAML config")
    s.add_argument("--host")
    s.add_argument("--port", type=int)
    s.add_argument("--audit-log", help="append-only audit log file")
    s.add_argument("--client", action="append", metavar="ID:KEY", help="add a Free-tier API client")
    s.set_defaults(func=_cmd_serve)

    a = sub.add_parser("audit", help="verify a hash-chained audit log file")
    a.add_argument("logfile")
    a.set_defaults(func=_cmd_audit)

    g = sub.add_parser("gen-corpus", help="generate a labeled synthetic flow corpus")
    g.add_argument("--humans", type=int, default=500)
    g.add_argument("--bots", type=int, default=500)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--model-out", help="also train and save an anomaly model")
    g.set_defaults(func=_cmd_gen_corpus)

    rep = sub.add_parser("report", help="summarize a report written by 'run'")
    rep.add_argument("report")
    rep.set_defaults(func=_cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
