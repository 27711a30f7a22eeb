"""Metrics recomputed from a run log alone, and replay."""

from __future__ import annotations

import numpy as np

from .. import art
from .logs import CorruptLog, RunLog, VersionMismatch, parse_log, LOG_VERSION

LIMIT_EPS = 1e-9
REACQUIRE_RADIUS = 0.03  # m between a detection and the displaced pose


class ReplayDivergence(CorruptLog):
    pass


def _limits(header: dict) -> dict:
    try:
        return header["scenario"]["robot"]["limits"]
    except KeyError:
        raise CorruptLog("header carries no safety limits") from None


def count_violations(log: RunLog) -> dict:
    """Breaches reported by the safety monitor plus any found in published control states."""
    lim = _limits(log.header)
    ws = lim["workspace"]
    monitor = sum(len(r["data"].get("violations", [])) for r in log.by_topic("safety"))
    published = 0
    for r in log.by_topic("control"):
        d = r["data"]
        tw = d["twist"]
        # the clamp bounds each component, so that is what a breach means
        if max(map(abs, tw["linear"])) > lim["max_linear"] + LIMIT_EPS:
            published += 1
        if max(map(abs, tw["angular"])) > lim["max_angular"] + LIMIT_EPS:
            published += 1
        p = d.get("ee_true", d["ee"]["position"])
        if any(p[i] < ws[i][0] - LIMIT_EPS or p[i] > ws[i][1] + LIMIT_EPS for i in range(3)):
            published += 1
    return {"monitor": monitor, "published": published, "total": monitor + published}


def _plan_steps(log: RunLog) -> dict:
    """Step id -> step dict, from the latest plan or replan record defining it."""
    steps = {}
    for r in log.by_topic("plan"):
        dag = r["data"].get("dag")
        if dag:
            for s in dag["steps"]:
                steps[s["id"]] = s
    return steps


def _completeness(step: dict, measured: dict):
    notes = step.get("annotations") or {}
    name = notes.get("silhouette")
    trace = measured.get("trace_truth")
    if not name or not trace:
        return None
    raster = art.load_silhouette(name)
    surface = art.DrawingSurface.from_dict(notes["surface"])
    path = art.simplify_path(art.extract_contour(raster), notes.get("tolerance", art.DEFAULT_TOLERANCE))
    mapping = art.fit_to_surface(path, raster.dims, surface, notes.get("margin", art.DEFAULT_MARGIN))
    return 100.0 * art.score_tracing(raster, mapping.inverse(np.asarray(trace)))


def _recoveries(log: RunLog) -> list:
    vision = log.by_topic("vision")
    vticks = [r["tick"] for r in vision]
    retargets = [r for r in log.by_topic("skill") if r["data"].get("event") == "retarget"]
    out = []
    for ev in log.by_topic("event"):
        target = ev["data"]["target"]
        pos = np.asarray(ev["data"]["pose"]["position"])
        seen_before = int(np.searchsorted(vticks, ev["tick"], side="right"))
        detected = None
        for i in range(seen_before, len(vision)):
            hit = [d for d in vision[i]["data"]["detections"] if d["id"] == target
                   and np.linalg.norm(np.asarray(d["pose"]["position"])[:2] - pos[:2]) < REACQUIRE_RADIUS]
            if hit:
                detected = i + 1 - seen_before
                break
        retarget = next((r["data"]["vision_tick"] - seen_before for r in retargets
                         if r["tick"] >= ev["tick"] and r["data"].get("target") == target), None)
        out.append({"target": target, "tick": ev["tick"], "detected_after": detected,
                    "reacquired_after": retarget})
    return out


def compute_metrics(log) -> dict:
    if isinstance(log, str):
        log = parse_log(log)
    steps = _plan_steps(log)
    skills = []
    pours = []
    completeness = []
    for r in log.by_topic("skill"):
        d = r["data"]
        if d.get("event") != "end":
            continue
        o = d["outcome"]
        m = o["measured"]
        entry = {"step": d.get("step"), "skill": d["skill"], "status": o["status"], "duration": o["duration"],
                 "postcondition": d.get("postcondition")}
        if d["skill"] == "pour_to_mass" and "poured_mass" in m:
            target = m.get("target_mass")
            if target is None:
                target = steps.get(d.get("step"), {}).get("parameters", {}).get("target_mass")
            if target is not None:
                err = (m["poured_mass"] - float(target)) * 1000.0
                entry["pour_error_g"] = err
                pours.append(err)
        if d["skill"] == "draw_path":
            entry["trace_duration"] = m.get("trace_duration")
            entry["path_length"] = m.get("length")
            c = _completeness(steps.get(d.get("step"), {}), m)
            if c is not None:
                entry["completeness_pct"] = c
                completeness.append(c)
        skills.append(entry)
    plan = log.by_topic("plan")
    finish = next((r["data"] for r in reversed(plan) if r["data"]["event"] == "finish"), None)
    violations = count_violations(log)
    out = {
        "status": log.footer.get("status"),
        "duration_s": log.footer.get("ticks", 0) / log.header.get("base_rate", 1000),
        "skills": skills,
        "safety_violations": violations["total"],
        "violations": violations,
        "records": dict(log.footer.get("counts", {})),
        "disturbance_recovery": _recoveries(log),
    }
    if pours:
        out["pour_error_g"] = pours[-1]
        out["pour_abs_error_g"] = abs(pours[-1])
    if completeness:
        out["completeness_pct"] = completeness
    if plan:
        out["plan"] = {
            "status": finish["status"] if finish else None,
            "error": finish.get("error") if finish else None,
            "replans": sum(1 for r in plan if r["data"]["event"] == "replan"),
            "dispatched": [r["data"]["step"] for r in plan if r["data"]["event"] == "dispatch"],
            "skipped": [r["data"]["step"] for r in plan if r["data"]["event"] == "skip"],
            "branches_taken": [r["data"]["step"] for r in plan
                               if r["data"]["event"] == "dispatch" and r["data"].get("taken")],
            "deadlock": any(r["data"]["event"] == "deadlock" for r in plan),
        }
    return out


def replay(log_text: str, resimulate: bool = True) -> dict:
    """Recompute the metrics of a logged run.

    With `resimulate` the run is executed again from the scenario echoed in
    the header and the regenerated log must match the original byte for byte.
    """
    log = parse_log(log_text)
    if log.header.get("log_version") != LOG_VERSION:
        raise VersionMismatch(f"log version {log.header.get('log_version')}")
    metrics = compute_metrics(log)
    if not resimulate:
        return metrics
    from .execution import run_scenario
    from .scenario import ScenarioConfig, normalise

    config = ScenarioConfig(normalise(log.header["scenario"]))
    again = run_scenario(config, seed=log.header["seed"])
    if again.log_text != log_text:
        raise ReplayDivergence("re-simulated log differs from the recorded one")
    if compute_metrics(again.log_text) != metrics:
        raise ReplayDivergence("re-simulated metrics differ")
    return metrics


def summary_table(metrics: dict) -> str:
    rows = [("status", metrics.get("status")), ("duration_s", f"{metrics.get('duration_s', 0):.3f}"),
            ("safety_violations", metrics.get("safety_violations"))]
    if "pour_error_g" in metrics:
        rows.append(("pour_error_g", f"{metrics['pour_error_g']:+.2f}"))
    for c in metrics.get("completeness_pct", []):
        rows.append(("completeness_pct", f"{c:.2f}"))
    for s in metrics.get("skills", []):
        rows.append((f"{s['step']} {s['skill']}", f"{s['status']} {s['duration']:.2f} s"))
    for d in metrics.get("disturbance_recovery", []):
        rows.append((f"recovery {d['target']}", f"detected {d['detected_after']} reacquired {d['reacquired_after']}"))
    w = max(len(str(k)) for k, _ in rows)
    return "\n".join(f"{str(k):<{w}}  {v}" for k, v in rows)


__all__ = ["compute_metrics", "replay", "count_violations", "summary_table", "ReplayDivergence"]
