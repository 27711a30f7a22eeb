"""Command-line interface: ``ifvf run|replay|metrics|draw|kb|validate``.

Exit codes: 0 on success with zero safety violations, 1 when a run fails or
breaches a limit, 2 for unusable input.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import art
from .errors import IFVFError
from .knowledge import DEFAULT_KB, KnowledgeBase, SkillEntry
from .planner import RemoteService, RuleMock, validate_plan, PlanDAG
from .runtime.drawing import draw_scenario
from .runtime.execution import run_scenario
from .runtime.logs import read_log_text, write_log_text
from .runtime.metrics import compute_metrics, replay, summary_table
from .runtime.scenario import load_scenario

OK, FAILED, BAD_INPUT = 0, 1, 2


def _emit(metrics: dict, as_json: bool, out=None) -> None:
    if out:
        Path(out).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    print(json.dumps(metrics, indent=2, sort_keys=True) if as_json else summary_table(metrics))


def _finish(result, args) -> int:
    if args.log:
        write_log_text(args.log, result.log_text)
    _emit(result.metrics, args.json, args.metrics_out)
    return OK if result.ok and result.metrics.get("safety_violations", 0) == 0 else FAILED


def cmd_run(args) -> int:
    cfg = load_scenario(args.scenario)
    plan = json.loads(Path(args.plan).read_text()) if args.plan else None
    client = RemoteService() if args.planner == "remote" else RuleMock()
    kb = KnowledgeBase.load(args.kb) if args.kb else None
    return _finish(run_scenario(cfg, seed=args.seed, query=args.query, plan=plan, client=client, kb=kb), args)


def cmd_replay(args) -> int:
    metrics = replay(read_log_text(args.log), resimulate=not args.no_resimulate)
    _emit(metrics, args.json)
    return OK if metrics["status"] == "succeeded" and metrics["safety_violations"] == 0 else FAILED


def cmd_metrics(args) -> int:
    metrics = compute_metrics(read_log_text(args.log))
    _emit(metrics, args.json)
    return OK if metrics["safety_violations"] == 0 else FAILED


def _surface_spec(spec: str) -> art.DrawingSurface:
    p = Path(spec)
    text = p.read_text() if p.exists() else spec
    try:
        return art.DrawingSurface.from_dict(json.loads(text))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise IFVFError(f"surface spec must be JSON with origin and extent: {exc}") from None


def cmd_draw(args) -> int:
    cfg = draw_scenario(args.silhouette, _surface_spec(args.surface), seed=args.seed)
    result = run_scenario(cfg)
    if args.out:
        trace = next((json.loads(line)["data"]["outcome"]["measured"].get("trace_truth")
                      for line in result.log_text.splitlines()
                      if '"event":"end"' in line and '"draw_path"' in line), None)
        art.write_points(args.out, trace or [])
    return _finish(result, args)


def cmd_kb(args) -> int:
    path = args.kb or DEFAULT_KB
    if args.action == "list":
        kb = KnowledgeBase.load(path)
        if args.query:
            for r in kb.retrieve_top_k(args.query, args.k):
                print(f"{r.rank}  {r.score:.4f}  {r.entry_id}")
            return OK
        for e in kb:
            print(f"{e.id:<16} {e.spec.name:<16} {e.description}")
        return OK
    kb = KnowledgeBase.load(path, bind=True)
    entry = SkillEntry.from_dict(json.loads(Path(args.entry).read_text()))
    kb.add_entry(entry)
    print(f"added {entry.id} to {path} ({len(kb)} entries)")
    return OK


def cmd_validate(args) -> int:
    cfg = load_scenario(args.scenario)
    if "plan" in cfg.task:
        validate_plan(PlanDAG.from_dict(cfg.task["plan"]), KnowledgeBase.load())
    w = cfg.data["world"]
    print(f"{cfg.name}: schema {cfg.data['schema_version']}, {len(w['objects'])} objects, "
          f"{len(w['drawers'])} drawers, {len(cfg.data['disturbances'])} disturbances, task {sorted(cfg.task)}")
    return OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ifvf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def outputs(sp):
        sp.add_argument("--log", help="write the run log here (.gz compresses)")
        sp.add_argument("--metrics-out", help="write metrics JSON here")
        sp.add_argument("--json", action="store_true", help="print metrics as JSON")

    r = sub.add_parser("run", help="simulate a scenario")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int)
    g = r.add_mutually_exclusive_group()
    g.add_argument("--query")
    g.add_argument("--plan", help="explicit plan JSON file")
    r.add_argument("--planner", choices=["mock", "remote"], default="mock")
    r.add_argument("--kb", help="knowledge base file")
    outputs(r)
    r.set_defaults(fn=cmd_run)

    rp = sub.add_parser("replay", help="re-simulate a log and check it reproduces")
    rp.add_argument("log")
    rp.add_argument("--no-resimulate", action="store_true", help="only recompute metrics from the log")
    rp.add_argument("--json", action="store_true")
    rp.set_defaults(fn=cmd_replay)

    m = sub.add_parser("metrics", help="compute metrics from a log")
    m.add_argument("log")
    m.add_argument("--json", action="store_true")
    m.set_defaults(fn=cmd_metrics)

    d = sub.add_parser("draw", help="trace a silhouette on a drawing surface")
    d.add_argument("silhouette", help="shipped name or .pbm path")
    d.add_argument("surface", help="JSON (inline or file) with origin, extent and optional normal")
    d.add_argument("--seed", type=int)
    d.add_argument("--out", help="export the traced points")
    outputs(d)
    d.set_defaults(fn=cmd_draw)

    k = sub.add_parser("kb", help="inspect or extend the knowledge base")
    k.add_argument("action", choices=["list", "add"])
    k.add_argument("entry", nargs="?", help="entry JSON file (for add)")
    k.add_argument("--kb", help="knowledge base file (default: the shipped one)")
    k.add_argument("--query", help="rank entries against a query (for list)")
    k.add_argument("-k", type=int, default=3)
    k.set_defaults(fn=cmd_kb)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("scenario")
    v.set_defaults(fn=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "kb" and args.action == "add" and not args.entry:
        print("kb add needs an entry file", file=sys.stderr)
        return BAD_INPUT
    try:
        return args.fn(args)
    except (IFVFError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
