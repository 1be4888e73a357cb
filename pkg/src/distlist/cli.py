"""Command-line scenario driver: ``python -m distlist run|replay|stress|scenarios``.

Exit codes: 0 all enabled verify suites passed, 1 a suite failed,
2 bad configuration or usage, 3 unreadable or tampered trace.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

from .scenarios import (
    BANK,
    SUITES,
    ConfigError,
    ScenarioConfig,
    apply_settings,
    dump_config,
    load_scenario,
    parse_config,
    parse_script,
    run_config,
    run_suites,
    trace_header,
)
from .interleave import thread_trial
from .sim import TRACE_VERSION
from .verify.linearizability import check_linearizable
from .verify.history import History

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_TRACE = 0, 1, 2, 3


class TraceError(ValueError):
    """Trace file with a wrong version line or a digest that does not match."""


# trace files


def render_trace(cfg: ScenarioConfig, lines: list[str]) -> str:
    head = [f"# {TRACE_VERSION} {trace_header(cfg)}"]
    head += [f"# config {line}" for line in dump_config(cfg).splitlines()]
    body = "\n".join(head + lines) + "\n"
    return body + f"# digest {hashlib.sha256(body.encode()).hexdigest()}\n"


def parse_trace(text: str) -> tuple[ScenarioConfig, str]:
    """Check version and digest; return the embedded config and the digest."""
    lines = text.splitlines(keepends=True)
    if not lines or not lines[0].startswith(f"# {TRACE_VERSION}"):
        found = lines[0].split()[1] if lines and len(lines[0].split()) > 1 else "nothing"
        raise TraceError(f"version mismatch: expected {TRACE_VERSION}, found {found}")
    last = lines[-1].strip()
    if not last.startswith("# digest "):
        raise TraceError("missing digest footer")
    digest = last.split()[2]
    body = "".join(lines[:-1])
    if hashlib.sha256(body.encode()).hexdigest() != digest:
        raise TraceError("digest mismatch: trace was modified")
    config_text = "\n".join(l[len("# config ") :] for l in body.splitlines() if l.startswith("# config "))
    return parse_config(config_text), digest


def sidecar_path(trace_path: Path) -> Path:
    return trace_path.with_name(trace_path.name + ".obs.json")


# commands


def _suites(choice: list[str] | None) -> tuple[str, ...]:
    if not choice or "all" in choice:
        return SUITES
    return tuple(dict.fromkeys(choice))


def _config_from_args(args) -> ScenarioConfig:
    if args.config:
        cfg = parse_config(Path(args.config).read_text())
        cfg = replace(cfg, name=Path(args.config).stem) if cfg.name == "custom" else cfg
    elif args.scenario:
        cfg = load_scenario(args.scenario)
    else:
        cfg = ScenarioConfig()
    settings = dict(kv.split("=", 1) for kv in args.set or [])
    for flag in ("protocol", "seed", "steps"):
        value = getattr(args, flag)
        if value is not None:
            settings[flag] = str(value)
    cfg = apply_settings(cfg, {k.strip(): v.strip() for k, v in settings.items()})
    if args.script is not None:
        cfg = replace(cfg, script=parse_script(args.script))
    return cfg.validate()


def _emit(report: dict, out: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True, default=str)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    suites = _suites(args.verify)
    outcome = run_config(cfg, suites)
    report = outcome.report
    if args.trace_out:
        path = Path(args.trace_out)
        text = render_trace(cfg, outcome.cluster.sim.trace)
        path.write_text(text)
        digest = text.rsplit("# digest ", 1)[1].strip()
        sidecar = {
            "trace_digest": digest,
            "observations": outcome.observations,
            "history": outcome.cluster.history.to_jsonl(),
        }
        sidecar_path(path).write_text(json.dumps(sidecar, default=str))
        report["trace"] = {"path": str(path), "digest": digest}
    _emit(report, args.report_out)
    return EXIT_OK if outcome.ok else EXIT_FAIL


def cmd_replay(args) -> int:
    path = Path(args.trace)
    text = path.read_text()
    cfg, digest = parse_trace(text)
    suites = _suites(args.verify)
    if args.verify_only:
        side = sidecar_path(path)
        if not side.exists():
            raise TraceError(f"verify-only needs the observation file {side}")
        data = json.loads(side.read_text())
        if data["trace_digest"] != digest:
            raise TraceError("observation file belongs to a different trace")
        verdicts = run_suites(cfg, History.from_jsonl(data["history"]), data["observations"], suites)
        report = {"schema": "distlist-report/1", "mode": "verify-only", "trace": str(path),
                  "verdicts": verdicts, "ok": all(v["ok"] for v in verdicts.values())}
        _emit(report, args.report_out)
        return EXIT_OK if report["ok"] else EXIT_FAIL
    outcome = run_config(cfg, suites)
    again = render_trace(cfg, outcome.cluster.sim.trace)
    report = outcome.report
    report["replay"] = {"trace": str(path), "identical": again == text}
    _emit(report, args.report_out)
    if again != text:
        print("replay diverged from the recorded trace", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK if outcome.ok else EXIT_FAIL


def cmd_scenarios(args) -> int:
    if args.name:
        print(dump_config(load_scenario(args.name)), end="")
    else:
        print("\n".join(BANK))
    return EXIT_OK


def cmd_stress(args) -> int:
    if args.trials < 1 or not 2 <= args.threads <= 8 or not 1 <= args.ops <= 32:
        raise ConfigError("need trials >= 1, 2 <= threads <= 8 and 1 <= ops <= 32")
    bad = []
    for i in range(args.trials):
        t = thread_trial(args.seed + i, max_workers=args.threads, max_ops=args.ops)
        if not check_linearizable(t.history, t.initial).ok:
            bad.append(t.seed)
    report = {"schema": "distlist-stress/1", "mode": "native-threads", "trials": args.trials,
              "threads": args.threads, "ops": args.ops, "violations": len(bad), "failing_seeds": bad[:20],
              "ok": not bad}
    _emit(report, args.report_out)
    return EXIT_OK if not bad else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="distlist", description="Distributed list simulator and checkers.")
    sub = p.add_subparsers(dest="command", required=True)
    verify = dict(action="append", choices=[*SUITES, "all"], help="verify suite to run (repeatable; default all)")

    r = sub.add_parser("run", help="run a scenario and print its JSON report")
    src = r.add_mutually_exclusive_group()
    src.add_argument("--config", help="flat key = value config file")
    src.add_argument("--scenario", choices=list(BANK), help="built-in scenario")
    r.add_argument("--protocol", choices=["am", "tr"])
    r.add_argument("--seed", type=int)
    r.add_argument("--steps", type=int)
    r.add_argument("--script", help='directives, e.g. "20 move 0 1; 80 split 1"')
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    r.add_argument("--trace-out", help="write the trace here (plus an .obs.json sidecar)")
    r.add_argument("--report-out", help="write the report here instead of stdout")
    r.add_argument("--verify", **verify)
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("replay", help="re-execute a trace and compare byte for byte")
    rp.add_argument("trace")
    rp.add_argument("--verify-only", action="store_true", help="check recorded observations, no re-simulation")
    rp.add_argument("--report-out")
    rp.add_argument("--verify", **verify)
    rp.set_defaults(func=cmd_replay)

    st = sub.add_parser("stress", help="core list on real threads, histories checked for linearizability")
    st.add_argument("--trials", type=int, default=200)
    st.add_argument("--seed", type=int, default=0)
    st.add_argument("--threads", type=int, default=4, help="maximum workers per trial")
    st.add_argument("--ops", type=int, default=8, help="maximum operations per trial")
    st.add_argument("--report-out")
    st.set_defaults(func=cmd_stress)

    sc = sub.add_parser("scenarios", help="list the scenario bank or print one config")
    sc.add_argument("name", nargs="?")
    sc.set_defaults(func=cmd_scenarios)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TraceError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return EXIT_TRACE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
