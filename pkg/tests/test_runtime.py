import gzip
import json
from pathlib import Path

import pytest

from conftest import MUG, scenario
from ifvf.cli import main
from ifvf.knowledge import KnowledgeBase, SkillEntry
from ifvf.skills import REGISTRY
from ifvf.runtime.execution import run_scenario
from ifvf.runtime.logs import DIVISORS, PRIORITY, CorruptLog, LogWriter, VersionMismatch, parse_log
from ifvf.runtime.metrics import ReplayDivergence, compute_metrics, count_violations, replay
from ifvf.runtime.scenario import (
    ParseError,
    UnresolvedReference,
    UnsupportedSchemaVersion,
    load_scenario,
    normalise,
    parse_scenario,
)
from ifvf.runtime.scheduler import Simulation

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="module")
def handover_run():
    return run_scenario(load_scenario("handover"))


def test_coffee_scenario_golden():
    cfg = load_scenario("coffee")
    objects = {o["id"]: o["class"] for o in cfg.data["world"]["objects"]}
    assert {"kettle": "kettle", "jar": "coffee jar", "mug": "white mug"}.items() <= objects.items()
    assert len(cfg.data["world"]["drawers"]) == 2
    assert cfg.data == json.loads((GOLDEN / "coffee.config.json").read_text())


def test_unknown_disturbance_target():
    with pytest.raises(UnresolvedReference):
        parse_scenario(json.dumps(scenario([MUG], disturbances=[{"at_time": 1.0, "target": "ghost",
                                                                 "position": [0.5, 0, 0]}])))
    with pytest.raises(UnresolvedReference):
        parse_scenario(json.dumps(scenario([MUG], held="ghost")))


def test_empty_and_malformed_files(tmp_path):
    empty = tmp_path / "empty.scn"
    empty.write_text("")
    with pytest.raises(ParseError):
        load_scenario(empty)
    with pytest.raises(ParseError) as exc:
        parse_scenario('{\n  "schema_version": 1,\n  "world": [}\n')
    assert exc.value.line == 3
    with pytest.raises(UnsupportedSchemaVersion):
        parse_scenario(json.dumps({"world": {}}))
    with pytest.raises(UnsupportedSchemaVersion):
        parse_scenario(json.dumps({"schema_version": 99}))


def test_defaults_are_echoed_into_the_header(handover_run):
    log = parse_log(handover_run.log_text)
    assert log.header["scenario"] == normalise(log.header["scenario"])
    assert log.header["scenario"]["robot"]["limits"]["max_force"] == 20.0
    assert {"force": 100, "gripper": 50, "control": 40, "safety": 10} == {
        k: 1000 // DIVISORS[k] for k in ("force", "gripper", "control", "safety")}


def test_same_seed_gives_identical_bytes(handover_run):
    again = run_scenario(load_scenario("handover"))
    assert again.log_text == handover_run.log_text
    other = run_scenario(load_scenario("handover"), seed=99)
    assert other.log_text != handover_run.log_text


def test_records_are_ordered_by_tick_and_priority(handover_run):
    log = parse_log(handover_run.log_text)
    keys = [(r["tick"], PRIORITY[r["topic"]]) for r in log.records]
    assert keys == sorted(keys)
    assert all(r["tick"] % DIVISORS[r["topic"]] == 0 for r in log.records if r["topic"] in DIVISORS)


def test_replay_reproduces_metrics(handover_run):
    m1 = replay(handover_run.log_text)
    assert m1 == handover_run.metrics
    assert replay(handover_run.log_text) == m1
    assert replay(handover_run.log_text, resimulate=False) == m1


def test_replay_detects_divergence(handover_run):
    lines = handover_run.log_text.splitlines()
    header = json.loads(lines[0])
    header["seed"] = 1234
    forged = "\n".join([json.dumps(header, sort_keys=True, separators=(",", ":"))] + lines[1:]) + "\n"
    with pytest.raises(ReplayDivergence):
        replay(forged)


def test_truncated_and_tampered_logs(handover_run):
    lines = handover_run.log_text.splitlines()
    with pytest.raises(CorruptLog):
        parse_log("\n".join(lines[:-1]))
    with pytest.raises(CorruptLog):
        parse_log("\n".join(lines[: len(lines) // 2]))
    with pytest.raises(CorruptLog):
        parse_log("")
    swapped = lines[:]
    swapped[5], swapped[6] = swapped[6], swapped[5]
    with pytest.raises(CorruptLog):
        parse_log("\n".join(swapped))
    edited = lines[:]
    edited[3] = edited[3].replace('"tick":', '"tick": ')
    with pytest.raises(CorruptLog):
        parse_log("\n".join(edited))


def test_version_mismatch(handover_run):
    lines = handover_run.log_text.splitlines()
    header = json.loads(lines[0])
    header["log_version"] = 2
    with pytest.raises(VersionMismatch):
        replay("\n".join([json.dumps(header)] + lines[1:]))


def _synthetic(records):
    w = LogWriter({"scenario": normalise(scenario()), "seed": 0})
    for tick, topic, data in records:
        w.record(tick, topic, data)
    return parse_log(w.text(100, "succeeded"))


def test_empty_plan_log_has_empty_metrics():
    m = compute_metrics(_synthetic([]))
    assert m["skills"] == [] and m["safety_violations"] == 0 and m["disturbance_recovery"] == []
    assert "pour_error_g" not in m and "plan" not in m


def test_synthetic_clamp_breach_is_counted_once():
    ok = {"linear": [0.05, 0, 0], "angular": [0, 0, 0]}
    bad = {"linear": [0.06, 0, 0], "angular": [0, 0, 0]}
    ee = {"position": [0.45, 0, 0.35], "orientation": [1, 0, 0, 0]}
    log = _synthetic([(0, "control", {"twist": ok, "ee": ee}), (25, "control", {"twist": bad, "ee": ee})])
    assert count_violations(log) == {"monitor": 0, "published": 1, "total": 1}
    assert compute_metrics(log)["safety_violations"] == 1


def test_rate_exactness_over_sixty_seconds():
    sim = Simulation(parse_scenario(json.dumps(scenario(timeout=100))))
    sim.run_ticks(60_000)
    log = parse_log(sim.log_text())
    counts = {t: log.count(t) for t in ("force", "gripper", "control", "safety", "vision")}
    assert counts == {"force": 6000, "gripper": 3000, "control": 2400, "safety": 600, "vision": 20}


def test_idle_task_ends_on_a_control_boundary():
    r = run_scenario(parse_scenario(json.dumps(scenario(task={"idle": 60}, timeout=100))))
    assert r.metrics["duration_s"] == 60.0
    assert r.metrics["records"]["control"] == 2400


def test_explicit_plan_run(tmp_path):
    plan = {"steps": [{"id": "S1", "skill": "pick", "parameters": {"object": "mug"}},
                      {"id": "S2", "skill": "place", "depends_on": ["S1"],
                       "parameters": {"object": "mug", "target_pose": [0.5, -0.1, 0.0]}}]}
    cfg = parse_scenario(json.dumps(scenario([MUG], timeout=120)))
    r = run_scenario(cfg, plan=plan)
    assert r.ok, r.metrics
    assert r.metrics["plan"]["dispatched"] == ["S1", "S2"]
    assert [s["postcondition"] for s in r.metrics["skills"]] == [True, True]
    mug = r.sim.world.objects["mug"].pose.position
    assert abs(mug[0] - 0.5) < 0.02 and abs(mug[1] + 0.1) < 0.02 and mug[2] == 0.0


def test_postconditions_tell_the_truth():
    log = parse_log(run_scenario(load_scenario("coffee")).log_text)
    ends = [r["data"] for r in log.by_topic("skill") if r["data"].get("event") == "end"]
    assert ends
    for d in ends:
        assert d["postcondition"] == (d["outcome"]["status"] == "succeeded"), d


def test_golden_logs_are_current():
    for gold in sorted(GOLDEN.glob("*.log.gz")):
        name = gold.name[: -len(".log.gz")]
        with gzip.open(gold, "rt") as fh:
            assert run_scenario(load_scenario(name)).log_text == fh.read(), name


# ------------------------------------------------------------------ cli
def test_cli_validate(capsys):
    assert main(["validate", "coffee"]) == 0
    assert "2 drawers" in capsys.readouterr().out
    assert main(["validate", "/nonexistent.scn"]) == 2


def test_cli_run_metrics_replay(tmp_path, capsys):
    log = tmp_path / "h.log.gz"
    out = tmp_path / "m.json"
    assert main(["run", "handover", "--log", str(log), "--metrics-out", str(out)]) == 0
    assert "safety_violations" in capsys.readouterr().out
    m = json.loads(out.read_text())
    assert m["status"] == "succeeded"
    assert main(["metrics", str(log), "--json"]) == 0
    assert json.loads(capsys.readouterr().out) == m
    assert main(["replay", str(log), "--json"]) == 0
    assert json.loads(capsys.readouterr().out) == m
    broken = tmp_path / "broken.log"
    broken.write_text("\n".join(gzip.open(log, "rt").read().splitlines()[:-1]))
    assert main(["metrics", str(broken)]) == 2


def test_cli_run_with_plan_and_failures(tmp_path, capsys):
    data = scenario([MUG], timeout=60)
    scn = tmp_path / "mug.scn"
    scn.write_text(json.dumps(data))
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"steps": [{"id": "S1", "skill": "pick", "parameters": {"object": "mug"}}]}))
    assert main(["run", str(scn), "--plan", str(plan), "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["plan"]["status"] == "succeeded"
    plan.write_text(json.dumps({"steps": [{"id": "S1", "skill": "fly", "parameters": {}}]}))
    assert main(["run", str(scn), "--plan", str(plan)]) != 0
    data["world"]["drawers"] = [{"id": "d1", "position": [0.6, 0.0, 0.2], "mechanism": "locked"}]
    scn.write_text(json.dumps(data))
    assert main(["validate", str(scn)]) == 2
    data["world"]["drawers"][0]["handle"] = [0.6, 0.0, 0.2]
    data["task"] = {"skill": {"name": "open_drawer", "params": {"drawer": "d1"}}}
    scn.write_text(json.dumps(data))
    assert main(["run", str(scn)]) == 1
    capsys.readouterr()


def test_cli_kb(tmp_path, capsys):
    assert main(["kb", "list"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 10
    assert main(["kb", "list", "--query", "pour water into the mug", "-k", "1"]) == 0
    assert capsys.readouterr().out.split()[-1] == "pour"
    kb = tmp_path / "kb.jsonl"
    KnowledgeBase.load().save(kb)
    entry = tmp_path / "e.json"
    wipe = SkillEntry("wipe_surface", "Wipe the table clean with a cloth.", REGISTRY["move_relative"].spec,
                      tags=["wipe", "table"])
    entry.write_text(json.dumps(wipe.to_dict()))
    assert main(["kb", "add", str(entry), "--kb", str(kb)]) == 0
    assert main(["kb", "list", "--kb", str(kb), "--query", "wipe the table", "-k", "1"]) == 0
    assert capsys.readouterr().out.split()[-1] == "wipe_surface"
    assert main(["kb", "add", str(entry), "--kb", str(kb)]) == 2
    assert main(["kb", "add"]) == 2


def test_cli_draw(tmp_path, capsys):
    surface = {"origin": {"position": [0.55, 0.0, 0.01], "orientation": [1, 0, 0, 0]}, "extent": [0.2, 0.2]}
    pts = tmp_path / "trace.txt"
    assert main(["draw", "heart", json.dumps(surface), "--out", str(pts), "--json"]) == 0
    m = json.loads(capsys.readouterr().out)
    assert m["completeness_pct"][0] >= 98.0
    assert pts.read_text().strip()
    assert main(["draw", "heart", "{not json"]) == 2
