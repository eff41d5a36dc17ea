"""Command line entry points.

    cradle optimize <design>   one exploration run, prints the outcome
    cradle chat <design>       interactive session on a design
    cradle bench <suite-dir>   batch runs over a directory of designs
    cradle serve               HTTP service for the web UI

The --backend flag picks where model replies and tool results come from:

    live                 real HTTP gateway + real synthesis/sim tools
    scripted:<file>      canned model replies (ndjson), real tools
    replay:<dir>         canned replies from <dir>/script.jsonl plus
                         recorded tool results from <dir>/records.jsonl
"""

from __future__ import annotations

import argparse
import sys
import threading
from pathlib import Path

from . import bench as bench_mod
from . import events, workspace
from .agent import LoopConfig
from .eda import DEFAULT_RULES, ExternalToolAdapter, ToolConfig, VerdictRules
from .llm import Gateway, LiveBackend, ScriptedBackend
from .model import FF, LUT, CradleError
from .replay import replay_adapter
from .service import DEFAULT_BIND, DEFAULT_PORT, serve
from .session import STATE_FINISHED, SessionManager

PROMPT = "cradle> "


def backend_factories(spec: str, root=None):
    """Turn a --backend value into (adapter_factory, gateway_factory).

    Both factories take the design being worked on, so every loop gets a
    fresh gateway (scripted replies are consumed) and an adapter wired to
    that design's verdict rules.
    """

    def rules_for(design) -> VerdictRules:
        if root is not None:
            d = workspace.designs_dir(root) / design.name
            if d.is_dir():
                return VerdictRules.from_manifest(workspace.load_manifest(d))
        return DEFAULT_RULES

    def live_adapters(design):
        return ExternalToolAdapter(ToolConfig(), rules_for(design))

    if spec == "live":
        return live_adapters, lambda design: Gateway(LiveBackend())
    if spec.startswith("scripted:"):
        path = spec.split(":", 1)[1]
        if not Path(path).is_file():
            raise CradleError(f"scripted backend file not found: {path}")
        return live_adapters, lambda design: Gateway(ScriptedBackend.from_file(path))
    if spec.startswith("replay:"):
        fixture_dir = Path(spec.split(":", 1)[1])
        script = fixture_dir / "script.jsonl"
        if not script.is_file():
            raise CradleError(f"replay dir needs a script.jsonl: {fixture_dir}")
        return (
            lambda design: replay_adapter(fixture_dir),
            lambda design: Gateway(ScriptedBackend.from_file(script)),
        )
    raise CradleError(
        f"unknown backend {spec!r}; expected live, scripted:<file> or replay:<dir>"
    )


def _loop_config(args) -> LoopConfig:
    cfg = LoopConfig()
    if getattr(args, "iters", None) is not None:
        cfg = LoopConfig(max_iterations=args.iters, repair_attempts=cfg.repair_attempts,
                         objective=cfg.objective, require_improvement=cfg.require_improvement)
    return cfg


def cmd_optimize(args) -> int:
    root = Path(args.workspace)
    adapters, gateways = backend_factories(args.backend, root)
    manager = SessionManager(root, adapters, gateways,
                             loop_config=_loop_config(args), run_async=False)
    try:
        session = manager.create_session(args.design)
        text = "/optimize" if not args.guidance else "/optimize " + args.guidance
        manager.post_message(session.id, text)
        folded = session.folded()
        print(f"design {args.design}: state {folded.state}")
        ref = folded.reference_counts() or {}
        best = folded.variants.get(folded.best_variant_id)
        if best is not None and best.counts is not None:
            for cls in (LUT, FF):
                r, b = ref.get(cls, 0), best.counts.get(cls, 0)
                pct = folded.best_reductions.get(cls)
                line = f"  {cls} {r} -> {b}"
                if pct is not None:
                    line += f" ({pct:.1f}% reduction)"
                print(line)
        print(f"best variant: {folded.best_variant_id}")
        if folded.finished and folded.finished.get("aborted"):
            print(f"aborted: {folded.finished['aborted']}", file=sys.stderr)
            return 1
        print(f"events: {workspace.events_path(session.dir)}")
        return 0
    finally:
        manager.close()


def _print_event(event: dict):
    kind, payload = event["kind"], event["payload"]
    if kind == events.AGENT_MESSAGE:
        print(f"\n[agent] {payload.get('text', '')}")
    elif kind == events.PLAN_CREATED:
        if payload.get("stop"):
            print(f"\n[plan {payload['iteration']}] no further optimization")
        else:
            steps = "; ".join(payload.get("steps", ()))
            print(f"\n[plan {payload['iteration']}] {steps}")
    elif kind == events.VERIFICATION_RESULT:
        print(f"\n[verify] variant {payload['variant_id']}: {payload['status']}")
    elif kind == events.METRICS_MEASURED:
        counts = payload.get("counts", {})
        brief = ", ".join(f"{k}={counts[k]}" for k in (LUT, FF) if k in counts)
        print(f"\n[metrics] variant {payload['variant_id']}: {brief}")
    elif kind == events.BEST_UPDATED:
        print(f"\n[best] now variant {payload['variant_id']}")
    elif kind == events.LOOP_FINISHED:
        print(f"\n[done] best variant {payload['best_variant_id']}")
    elif kind == events.ERROR:
        print(f"\n[error] {payload.get('scope', '?')}: {payload.get('detail', '')}")


def cmd_chat(args) -> int:
    root = Path(args.workspace)
    adapters, gateways = backend_factories(args.backend, root)
    manager = SessionManager(root, adapters, gateways, loop_config=_loop_config(args))
    stop = threading.Event()
    try:
        session = manager.create_session(args.design)

        def follow():
            cursor = 0
            while not stop.is_set():
                for event in session.log.wait_for(cursor, timeout=0.3):
                    cursor = event["seq"]
                    _print_event(event)

        printer = threading.Thread(target=follow, daemon=True, name="cradle-chat-printer")
        printer.start()
        print(f"session {session.id} on {args.design} (type /help; /quit leaves)")
        while True:
            try:
                line = input(PROMPT)
            except EOFError:
                print()
                break
            except KeyboardInterrupt:
                print()
                break
            line = line.strip()
            if not line:
                continue
            if line in ("/quit", "/exit"):
                break
            try:
                manager.post_message(session.id, line)
            except CradleError as e:
                print(f"[{e.code}] {e}")
        stop.set()
        printer.join(timeout=1.0)
        return 0
    finally:
        stop.set()
        manager.close()


def cmd_bench(args) -> int:
    adapters, gateways = backend_factories(args.backend, Path(args.suite_dir))
    skipped: dict = {}
    suite = bench_mod.discover_suite(args.suite_dir, skipped)
    for name, why in sorted(skipped.items()):
        print(f"skipping {name}: {why}", file=sys.stderr)
    cfg = _loop_config(args)
    result = bench_mod.run_suite(suite, cfg, parallelism=args.parallel,
                                 adapter_factory=adapters, gateway_factory=gateways)
    out = bench_mod.emit(result, "csv", args.out)
    print(f"wrote {out}")
    if args.json:
        json_out = Path(args.out).with_suffix(".json")
        bench_mod.emit(result, "json", json_out, include_timing=args.timing)
        print(f"wrote {json_out}")
    stats = bench_mod.aggregate(result)
    if stats.mean_reduction is not None:
        lut = stats.mean_reduction.get(LUT, 0.0)
        print(f"{stats.improved_count}/{stats.total_count} improved, "
              f"mean {LUT} reduction {lut:.1f}%")
    for name, why in sorted(result.failures.items()):
        print(f"failed {name}: {why}", file=sys.stderr)
    return 0 if not result.failures else 1


def cmd_serve(args) -> int:
    root = Path(args.workspace)
    adapters, gateways = backend_factories(args.backend, root)
    static_dir = args.static
    if static_dir is None:
        guess = Path("frontend") / "dist"
        if guess.is_dir():
            static_dir = guess
    service = serve(root, bind=args.bind, port=args.port,
                    adapter_factory=adapters, gateway_factory=gateways,
                    static_dir=static_dir)
    print(f"serving workspace {root} on {service.url}")
    if static_dir is not None:
        print(f"static UI from {static_dir}")
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        print("\nshutting down")
    finally:
        service.shutdown()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cradle",
                                     description="conversational RTL optimization loop")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--workspace", default=".", help="workspace root (default: .)")
        p.add_argument("--backend", default="live",
                       help="live | scripted:<file> | replay:<dir>")
        p.add_argument("--iters", type=int, default=None,
                       help="max optimizer iterations")

    p = sub.add_parser("optimize", help="run one exploration and print the outcome")
    p.add_argument("design")
    p.add_argument("--guidance", default="", help="free-form notes passed to the planner")
    common(p)
    p.set_defaults(fn=cmd_optimize)

    p = sub.add_parser("chat", help="interactive session on a design")
    p.add_argument("design")
    common(p)
    p.set_defaults(fn=cmd_chat)

    p = sub.add_parser("bench", help="run a suite of designs and tabulate results")
    p.add_argument("suite_dir")
    p.add_argument("--out", default="results.csv", help="CSV output path")
    p.add_argument("--json", action="store_true", help="also write <out>.json")
    p.add_argument("--timing", action="store_true",
                   help="include wall clock and token usage in the JSON")
    p.add_argument("--parallel", type=int, default=1, help="designs to run at once")
    p.add_argument("--backend", default="live",
                   help="live | scripted:<file> | replay:<dir>")
    p.add_argument("--iters", type=int, default=None, help="max optimizer iterations")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("serve", help="serve the HTTP API (and the web UI if built)")
    p.add_argument("--bind", default=DEFAULT_BIND)
    p.add_argument("--port", type=int, default=DEFAULT_PORT)
    p.add_argument("--static", default=None, help="directory of built UI assets")
    common(p)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CradleError as e:
        print(f"error [{e.code}]: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
