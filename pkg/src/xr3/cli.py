"""Command-line entry point.

Verbs:
    serve            run a WebSocket session server until interrupted
    gen-trace        write a scripted trace file
    simulate         drive a trace through an in-process session
    replay-verify    re-run retargeting over a log, report divergences
    export-timeline  dump per-channel CSV tables from a log
    check            run the acceptance suite (exit 0 = all pass)

The bind address comes from --bind or the XR3_BIND environment variable
(default 127.0.0.1:8765).
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import sys
from pathlib import Path

DEFAULT_BIND = "127.0.0.1:8765"


def _bind(args) -> str:
    return args.bind or os.environ.get("XR3_BIND") or DEFAULT_BIND


def _session_config(args):
    from .relay.server import SessionConfig
    if getattr(args, "config", None):
        cfg = SessionConfig.from_yaml(args.config)
    else:
        cfg = SessionConfig()
    if getattr(args, "log", None):
        cfg.log_path = args.log
    return cfg


def cmd_serve(args) -> int:
    from .relay.server import run_session

    async def main():
        cfg = _session_config(args)
        server = await run_session(cfg, bind=_bind(args))
        host, port = _bind(args).rsplit(":", 1)
        print(f"serving session {cfg.session_id!r} on ws://{host}:{port} "
              f"(log: {cfg.log_path})", flush=True)
        try:
            while server.failed is None:
                await asyncio.sleep(0.5)
            print(f"session failed: {server.failed!r}", file=sys.stderr)
            return 1
        except asyncio.CancelledError:
            return 0
        finally:
            await server.stop()

    try:
        return asyncio.run(main()) or 0
    except KeyboardInterrupt:
        print("interrupted, session closed")
        return 0


def cmd_gen_trace(args) -> int:
    from .harness import generate_trace, save_trace
    trace = generate_trace(args.recipe, seed=args.seed,
                           duration_s=args.duration, rate_hz=args.rate)
    save_trace(trace, args.out)
    print(f"wrote {len(trace.records)} records to {args.out}")
    if trace.meta.get("expected_contact"):
        begin, end = trace.meta["expected_contact"]
        print(f"scripted contact interval: {begin} .. {end} us")
    return 0


def cmd_simulate(args) -> int:
    from .harness import generate_trace, load_trace, run_end_to_end
    if args.trace:
        trace = load_trace(args.trace)
    else:
        trace = generate_trace(args.recipe, seed=args.seed,
                               duration_s=args.duration, rate_hz=args.rate)
    cfg = _session_config(args)
    summary = run_end_to_end(trace, cfg, realtime=args.realtime)
    print(json.dumps(summary.to_dict(), indent=2))
    if args.summary:
        Path(args.summary).write_text(json.dumps(summary.to_dict(), indent=2))
    ok = (summary.dropped == 0 and summary.duplicates == 0
          and summary.out_of_order == 0 and not summary.failed)
    return 0 if ok else 1


def cmd_replay_verify(args) -> int:
    from .events_analysis import replay_verify
    from .retargeting import ExpressivityLevel
    level = ExpressivityLevel[args.level] if args.level else None
    report = replay_verify(args.log, level_override=level)
    print(report.summary())
    for d in report.divergences[:20]:
        print(f"  divergence at t={d.timestamp_us} us: {d.detail}")
    return 0 if report.ok else 1


def cmd_export_timeline(args) -> int:
    from .events_analysis import export_timeline
    from .events_analysis.detect import load_au_table
    table = load_au_table(args.au_table) if args.au_table else None
    counts = export_timeline(args.log, args.out, table)
    for name, rows in sorted(counts.items()):
        print(f"{name}: {rows} rows")
    return 0


def cmd_check(args) -> int:
    from .acceptance import run_all
    return run_all(fast=args.fast)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xr3", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("serve", help="run a WebSocket session server")
    s.add_argument("--config", help="session config YAML")
    s.add_argument("--bind", help=f"host:port (default {DEFAULT_BIND}, "
                                  "or XR3_BIND)")
    s.add_argument("--log", help="session log path")
    s.set_defaults(fn=cmd_serve)

    s = sub.add_parser("gen-trace", help="write a scripted trace file")
    s.add_argument("--recipe", default="neutral",
                   choices=["neutral", "reach_and_tap", "draw_shape",
                            "face_sweep"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--duration", type=float, default=10.0)
    s.add_argument("--rate", type=float, default=72.0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_gen_trace)

    s = sub.add_parser("simulate", help="drive a trace through a session")
    s.add_argument("--trace", help="trace file (else generated)")
    s.add_argument("--recipe", default="neutral",
                   choices=["neutral", "reach_and_tap", "draw_shape",
                            "face_sweep"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--duration", type=float, default=10.0)
    s.add_argument("--rate", type=float, default=72.0)
    s.add_argument("--config", help="session config YAML")
    s.add_argument("--log", help="session log path")
    s.add_argument("--summary", help="write summary JSON here")
    s.add_argument("--realtime", action="store_true",
                   help="pace frames at the trace rate")
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("replay-verify", help="verify a session log")
    s.add_argument("--log", required=True)
    s.add_argument("--level", choices=["HEAD_ONLY", "HEAD_EYES", "FULL"],
                   help="override the expressivity level for the replay")
    s.set_defaults(fn=cmd_replay_verify)

    s = sub.add_parser("export-timeline", help="export per-channel CSVs")
    s.add_argument("--log", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--au-table", help="AU mapping table YAML")
    s.set_defaults(fn=cmd_export_timeline)

    s = sub.add_parser("check", help="run the acceptance suite")
    s.add_argument("--fast", action="store_true",
                   help="shrink sample counts for a quick sanity pass")
    s.set_defaults(fn=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
