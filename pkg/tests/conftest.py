import copy
import json
from pathlib import Path

import pytest

from ifvf.runtime.scenario import parse_scenario
from ifvf.runtime.scheduler import Simulation, SkillDriver

LABELED_PATH = Path(__file__).parent / "data" / "labeled_queries.json"

MUG = {"id": "mug", "class": "white mug", "position": [0.6, 0.1, 0.0], "mass": 0.3, "height": 0.1,
       "grasp_offset": [0.0, 0.0, 0.07], "grasp_width": 0.07, "container": {"capacity": 0.35, "rim_radius": 0.03}}
JAR = {"id": "jar", "class": "coffee jar", "position": [0.5, -0.1, 0.0], "mass": 0.25, "height": 0.12,
       "grasp_offset": [0.0, 0.0, 0.09], "grasp_width": 0.08,
       "container": {"capacity": 0.3, "content_mass": 0.1, "content_kind": "granular", "rim_radius": 0.04}}
SPOON = {"id": "spoon", "class": "spoon", "position": [0.4, 0.0, 0.2], "mass": 0.03, "height": 0.17,
         "grasp_offset": [0.0, 0.0, 0.15], "grasp_width": 0.01, "spout_offset": [0.0, 0.0, 0.0],
         "scoop_capacity": 0.0048}
PEN = {"id": "pen", "class": "pen", "position": [0.4, 0.0, 0.2], "mass": 0.02, "height": 0.14,
       "grasp_offset": [0.0, 0.0, 0.1], "grasp_width": 0.012}
HAND = {"id": "hand", "class": "hand", "position": [0.55, 0.15, 0.3], "hand": {}}


def scenario(objects=(), held=None, home=(0.45, 0.0, 0.35), disturbances=(), surfaces=(), drawers=(),
             classes=None, seed=3, timeout=200, task=None, noise=None):
    d = {"schema_version": 1, "name": "t", "seed": seed, "timeout": timeout,
         "world": {"objects": copy.deepcopy(list(objects)), "surfaces": list(surfaces), "drawers": list(drawers)},
         "robot": {"home": list(home), "held": held}, "disturbances": list(disturbances)}
    sensors = {}
    if classes:
        sensors["classes"] = classes
    if noise is not None:
        sensors["noise"] = noise
    if sensors:
        d["sensors"] = sensors
    if task:
        d["task"] = task
    return d


def run_skill(data, skill, params, seed=None, log=False):
    """Run one skill on a scenario dict; returns (simulation, driver)."""
    sim = Simulation(parse_scenario(json.dumps(data)), log_enabled=log, seed=seed)
    driver = SkillDriver(skill, params)
    sim.run(driver)
    return sim, driver


@pytest.fixture
def kb():
    from ifvf.knowledge import KnowledgeBase
    return KnowledgeBase.load()


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(mod.RESULTS, key=lambda c: int(c[1:])):
        terminalreporter.write_line(mod.RESULTS[cid])
