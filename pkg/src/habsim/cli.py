"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 configuration or scenario error,
3 runtime failure. ``HABSIM_OUT`` overrides the configured output directory
(``--out`` overrides both).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .assemble import make_injector, run
from .config import ConfigError, load_config
from .devs import SimulationError, ZenoError, send_lines
from .environment import SyntheticSpec, generate_synthetic_scenario
from .events import EventLog, EventParseError, ScenarioError, parse_time
from .fog import build_report

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="habsim", description="Bloom early-warning simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="execute a scenario")
    r.add_argument("--config", required=True)
    r.add_argument("--mode", choices=("virtual", "realtime", "hybrid"))
    r.add_argument("--scale", type=float, help="virtual seconds per wall second")
    r.add_argument("--until", type=float, help="stop after this many virtual seconds")
    r.add_argument("--out")
    r.add_argument("--seed", type=int)
    r.add_argument("--parallel", action="store_true", help="run imminent models on a thread pool")
    r.add_argument("--port", type=int, help="TCP port for injected events (hybrid mode)")
    r.add_argument("--stdin", action="store_true", help="read injected events from standard input (hybrid mode)")

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--days", type=float, default=7.0)
    g.add_argument("--config", help="take the synthetic block from this run configuration")
    g.add_argument("--out", required=True)
    g.add_argument("--prefix", default="synthetic")

    rep = sub.add_parser("report", help="build report CSVs from an event log")
    rep.add_argument("log")
    rep.add_argument("--out", required=True)
    rep.add_argument("--name", default="report")
    rep.add_argument("--t0")
    rep.add_argument("--t1")

    v = sub.add_parser("validate", help="check a configuration and its scenario")
    v.add_argument("--config", required=True)

    i = sub.add_parser("inject", help="send event lines to a running hybrid simulation")
    i.add_argument("--host", default="127.0.0.1")
    i.add_argument("--port", type=int, required=True)
    i.add_argument("lines", nargs="*", help="event lines; read from stdin when omitted")
    return p


def _out_dir(arg: str | None, cfg_out: Path) -> Path:
    if arg:
        return Path(arg)
    env = os.environ.get("HABSIM_OUT")
    return Path(env) if env else cfg_out


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    cfg = cfg.with_overrides(mode=args.mode, scale=args.scale, until=args.until, seed=args.seed,
                             parallel=args.parallel or None, inject_port=args.port)
    out = _out_dir(args.out, cfg.out_dir)
    injector = None
    if cfg.mode == "hybrid":
        injector = make_injector()
        if args.stdin:
            injector.read_stream(sys.stdin)
        else:
            host, port = injector.serve_tcp(cfg.inject_host, cfg.inject_port)
            print(f"listening for events on {host}:{port}", flush=True)
    try:
        result = run(cfg, out, injector)
    finally:
        if injector is not None:
            injector.shutdown()
    rep = result.report
    print(f"{cfg.name}: {rep.event_count} events, final virtual time {rep.final_time / 1e6:.0f} s")
    for item, reason in rep.rejected:
        print(f"rejected injection: {reason}", file=sys.stderr)
    for key, path in sorted(result.files.items()):
        print(f"  {key}: {path}")
    return EXIT_OK


def cmd_generate(args) -> int:
    spec = load_config(args.config).synthetic if args.config else SyntheticSpec(days=args.days)
    paths = generate_synthetic_scenario(args.seed, spec).write(args.out, args.prefix)
    for key, path in paths.items():
        print(f"  {key}: {path}")
    return EXIT_OK


def cmd_report(args) -> int:
    log = EventLog.read(args.log)
    t0 = parse_time(args.t0) if args.t0 else None
    t1 = parse_time(args.t1) if args.t1 else None
    bundle = build_report(log.snapshot(), t0, t1, args.out, args.name)
    if bundle.notice:
        print(bundle.notice)
    for key, path in bundle.files.items():
        print(f"  {key}: {path} ({len(bundle.tables[key])} rows)")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"{args.config}: ok ({cfg.name}, scenario {cfg.scenario})")
    return EXIT_OK


def cmd_inject(args) -> int:
    lines = args.lines or sys.stdin.read().splitlines()
    n = send_lines(lines, args.host, args.port)
    print(f"sent {n} event lines")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "generate": cmd_generate, "report": cmd_report, "validate": cmd_validate,
            "inject": cmd_inject}


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EventParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, ZenoError, OSError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
