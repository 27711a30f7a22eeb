"""Task decomposition into branch-conditioned step DAGs.

A plan is a list of steps, each invoking one registered skill. Steps depend
on earlier steps and may carry a branch condition, a small predicate
language over the outcomes so far and the current detections. A step whose
condition is false when it becomes ready is skipped, and a skipped step
satisfies its dependants: the continuation after a guarded step is its else
path. Plans come from a PlannerClient; every plan is validated against the
skill registry before any step runs.
"""

from __future__ import annotations

import json
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field

from .errors import IFVFError
from .knowledge import KnowledgeBase
from .skills import REGISTRY, InvalidParameters, validate_params

PLAN_SCHEMA_VERSION = 1
REPLAN_BUDGET = 3
REMOTE_TIMEOUT = 30.0
PLANNER_URL_ENV = "IFVF_PLANNER_URL"


class PlannerError(IFVFError):
    pass


class UnplannableQuery(PlannerError):
    def __init__(self, message: str, transport: bool = False):
        super().__init__(message)
        self.transport = transport


class InvalidPlan(PlannerError):
    pass


class ReplanBudgetExceeded(PlannerError):
    pass


@dataclass(frozen=True)
class SceneObject:
    object_id: str
    class_label: str
    position: tuple


@dataclass
class TaskQuery:
    text: str
    scene_summary: list = field(default_factory=list)
    held: str | None = None
    drawers: list = field(default_factory=list)
    surfaces: list = field(default_factory=list)

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise UnplannableQuery("empty query")
        self.scene_summary = [s if isinstance(s, SceneObject) else SceneObject(s[0], s[1], tuple(s[2]))
                              for s in self.scene_summary]

    def find(self, word: str):
        """Scene objects whose id or class mentions `word`."""
        return [s for s in self.scene_summary if word in s.object_id or word in s.class_label]

    def to_dict(self) -> dict:
        return {"text": self.text, "held": self.held, "drawers": list(self.drawers),
                "surfaces": [dict(s) for s in self.surfaces],
                "scene_summary": [[s.object_id, s.class_label, list(s.position)] for s in self.scene_summary]}


@dataclass
class PlanStep:
    id: str
    skill: str
    parameters: dict = field(default_factory=dict)
    depends_on: list = field(default_factory=list)
    branch_condition: dict | None = None
    intent: str = ""
    examples: list = field(default_factory=list)
    annotations: dict = field(default_factory=dict)  # carried into the log, never passed to the skill

    def to_dict(self) -> dict:
        return {"id": self.id, "skill": self.skill, "parameters": self.parameters, "depends_on": list(self.depends_on),
                "branch_condition": self.branch_condition, "intent": self.intent, "examples": list(self.examples),
                "annotations": dict(self.annotations)}

    @classmethod
    def from_dict(cls, d: dict) -> "PlanStep":
        if not isinstance(d, dict):
            raise InvalidPlan(f"step must be an object, got {d!r}")
        try:
            return cls(str(d["id"]), str(d["skill"]), dict(d.get("parameters", {})), list(d.get("depends_on", [])),
                       d.get("branch_condition"), str(d.get("intent", "")), list(d.get("examples", [])),
                       dict(d.get("annotations", {})))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidPlan(f"malformed step {d!r}: {exc}") from None


@dataclass
class PlanDAG:
    steps: list

    def __post_init__(self):
        self._index = {s.id: s for s in self.steps}

    def step(self, step_id: str) -> PlanStep:
        return self._index[step_id]

    def ids(self) -> list:
        return [s.id for s in self.steps]

    def to_dict(self) -> dict:
        return {"schema_version": PLAN_SCHEMA_VERSION, "steps": [s.to_dict() for s in self.steps]}

    @classmethod
    def from_dict(cls, d) -> "PlanDAG":
        if not isinstance(d, dict) or not isinstance(d.get("steps"), list):
            raise InvalidPlan("plan must be an object with a list of steps")
        if d.get("schema_version", PLAN_SCHEMA_VERSION) != PLAN_SCHEMA_VERSION:
            raise InvalidPlan(f"unsupported plan schema_version {d.get('schema_version')}")
        return cls([PlanStep.from_dict(s) if not isinstance(s, PlanStep) else s for s in d["steps"]])


# ------------------------------------------------------------------ predicates
_PREDICATES = {"detected", "not", "succeeded", "failed", "measured", "all", "any", "held"}


def check_predicate(p, step_ids: set) -> None:
    if not isinstance(p, dict) or len(p) != 1:
        raise InvalidPlan(f"predicate must be a single-key object: {p!r}")
    (kind, arg), = p.items()
    if kind not in _PREDICATES:
        raise InvalidPlan(f"unknown predicate {kind!r}")
    if kind == "not":
        check_predicate(arg, step_ids)
    elif kind in ("all", "any"):
        if not isinstance(arg, list) or not arg:
            raise InvalidPlan(f"{kind} needs a non-empty list")
        for q in arg:
            check_predicate(q, step_ids)
    elif kind in ("succeeded", "failed"):
        if arg not in step_ids:
            raise InvalidPlan(f"predicate refers to unknown step {arg!r}")
    elif kind == "measured":
        if not isinstance(arg, dict) or arg.get("step") not in step_ids or "key" not in arg or "equals" not in arg:
            raise InvalidPlan(f"measured predicate needs step, key and equals: {arg!r}")
    elif not isinstance(arg, str):
        raise InvalidPlan(f"{kind} needs an object id")


def evaluate(p, outcomes: dict, facts: dict) -> bool:
    """Evaluate a predicate. `facts` holds 'detected' and 'held' (sets or ids)."""
    (kind, arg), = p.items()
    if kind == "not":
        return not evaluate(arg, outcomes, facts)
    if kind == "all":
        return all(evaluate(q, outcomes, facts) for q in arg)
    if kind == "any":
        return any(evaluate(q, outcomes, facts) for q in arg)
    if kind == "detected":
        return arg in facts.get("detected", ())
    if kind == "held":
        return facts.get("held") == arg
    o = outcomes.get(arg if kind != "measured" else arg["step"])
    status = _status(o)
    if kind == "succeeded":
        return status == "succeeded"
    if kind == "failed":
        return status in ("failed", "aborted_safety")
    return o is not None and not isinstance(o, str) and o.measured.get(arg["key"]) == arg["equals"]


def _status(o) -> str | None:
    if o is None:
        return None
    if isinstance(o, str):
        return o
    return o.status.value


# ------------------------------------------------------------------ validation
def validate_plan(dag: PlanDAG, kb: KnowledgeBase | None = None) -> PlanDAG:
    """Structural and type checks; raises InvalidPlan. Never mutates the plan."""
    if not dag.steps:
        raise InvalidPlan("plan has no steps")
    seen: set = set()
    known = {e.spec.name for e in kb} if kb is not None else set(REGISTRY)
    all_ids = [s.id for s in dag.steps]
    if len(set(all_ids)) != len(all_ids):
        raise InvalidPlan("duplicate step ids")
    for s in dag.steps:
        for d in s.depends_on:
            if d not in seen:
                # covers self-loops, forward references and cycles
                raise InvalidPlan(f"step {s.id} depends on {d!r}, which is not an earlier step")
        if s.skill not in REGISTRY or s.skill not in known:
            raise InvalidPlan(f"step {s.id}: unknown skill {s.skill!r}")
        try:
            validate_params(REGISTRY[s.skill].spec, s.parameters)
        except InvalidParameters as exc:
            raise InvalidPlan(f"step {s.id}: {exc}") from None
        if s.branch_condition is not None:
            check_predicate(s.branch_condition, seen)
        seen.add(s.id)
    if not any(not s.depends_on for s in dag.steps):
        raise InvalidPlan("no step without dependencies")
    return dag


# ------------------------------------------------------------------ traversal
@dataclass
class Resolution:
    state: str  # ready | complete | blocked
    step: PlanStep | None = None
    skipped: list = field(default_factory=list)
    failed: list = field(default_factory=list)


def resolve(dag: PlanDAG, outcomes: dict, facts: dict | None = None) -> Resolution:
    """Work out what runs next. Steps whose condition is false are reported as skipped."""
    facts = facts or {}
    outcomes = dict(outcomes)
    skipped = []
    changed = True
    while changed:
        changed = False
        for s in dag.steps:
            if s.id in outcomes:
                continue
            deps = [_status(outcomes.get(d)) for d in s.depends_on]
            if any(d is None for d in deps) or any(d not in ("succeeded", "skipped") for d in deps):
                continue
            if s.branch_condition is not None and not evaluate(s.branch_condition, outcomes, facts):
                outcomes[s.id] = "skipped"
                skipped.append(s.id)
                changed = True
                continue
            return Resolution("ready", s, skipped)
    failed = [sid for sid, o in outcomes.items() if _status(o) in ("failed", "aborted_safety")]
    if all(s.id in outcomes for s in dag.steps) and not failed:
        return Resolution("complete", None, skipped)
    return Resolution("blocked", None, skipped, failed)


def next_step(dag: PlanDAG, outcomes: dict, facts: dict | None = None) -> PlanStep | None:
    return resolve(dag, outcomes, facts).step


# ------------------------------------------------------------------ clients
class PlannerClient:
    def decompose(self, query: TaskQuery, examples: list, failure_context: list | None = None) -> PlanDAG:
        raise NotImplementedError


def _grams(text: str, default: float) -> float:
    m = re.search(r"(\d+(?:\.\d+)?)\s*(g|grams?)\b", text)
    return float(m.group(1)) / 1000.0 if m else default


class RuleMock(PlannerClient):
    """Deterministic rule-based decomposer covering the shipped task grammar.

    Productions: instant coffee, fetching an object (with the drawer branch),
    handing over an item, decorating a plate, and single-skill commands. A
    pure function of the query text, the scene and the failure context.
    """

    water = 0.1
    coffee = 0.005

    def decompose(self, query: TaskQuery, examples: list, failure_context: list | None = None) -> PlanDAG:
        text = query.text.lower()
        failures = failure_context or []
        if "coffee" in text and ("make" in text or "prepare" in text):
            return self._coffee(query, failures)
        if re.search(r"\b(hand|give|pass)\b", text):
            return self._handover(query, text)
        if re.search(r"\b(draw|decorate|sketch)\b", text):
            return self._draw(query, text)
        if re.search(r"\b(bring|fetch|find|get)\b", text):
            return self._fetch(query, text, failures)
        return self._single(query, text)

    # -------------------------------------------------------------- helpers
    def _one(self, query: TaskQuery, word: str, required: bool = True):
        hits = query.find(word)
        if hits:
            return hits[0].object_id
        if required:
            raise UnplannableQuery(f"no {word} in the scene")
        return None

    def _drawer_steps(self, query: TaskQuery, target: str, failures: list, first_id: str, deps=None):
        failed = {f.get("parameters", {}).get("drawer") for f in failures if f.get("skill") == "open_drawer"}
        options = [d for d in query.drawers if d not in failed]
        if not options:
            raise UnplannableQuery(f"{target} is not in view and no drawer is left to search")
        suffix = "" if not failed else chr(ord("a") + len(failed))
        return [PlanStep(first_id + suffix, "open_drawer", {"drawer": options[0]}, list(deps or []),
                         {"not": {"detected": target}}, f"open the drawer {options[0]} to look for the {target}")]

    def _coffee(self, query: TaskQuery, failures: list) -> PlanDAG:
        kettle = self._one(query, "kettle")
        jar = self._one(query, "jar")
        spoon = self._one(query, "spoon")
        mug = self._one(query, "mug", required=False) or "mug"
        steps = []
        hidden = not query.find("mug")
        if hidden or query.drawers:
            if query.drawers:
                steps += self._drawer_steps(query, mug, failures, "L1")
            elif hidden:
                raise UnplannableQuery("no mug in the scene")
        prev = [steps[-1].id] if steps else []
        k = next(s for s in query.scene_summary if s.object_id == kettle)
        sp = next(s for s in query.scene_summary if s.object_id == spoon)
        steps += [
            PlanStep("L2", "pick", {"object": kettle}, prev, None, f"pick up the {kettle}"),
            PlanStep("L3", "pour_to_mass", {"target_mass": self.water, "source": kettle, "receptacle": mug},
                     ["L2"], None, f"pour {self.water * 1000:.0f} g of water into the {mug}"),
            PlanStep("L4", "place", {"object": kettle, "target_pose": list(k.position)}, ["L3"], None,
                     f"put the {kettle} back down"),
            PlanStep("L5", "pick", {"object": spoon}, ["L4"], None, f"pick up the {spoon}"),
            PlanStep("L6", "scoop", {"target_mass": self.coffee, "source": jar, "receptacle": mug}, ["L5"], None,
                     f"scoop {self.coffee * 1000:.0f} g of coffee from the {jar} into the {mug}"),
            PlanStep("L7", "place", {"object": spoon, "target_pose": list(sp.position)}, ["L6"], None,
                     f"put the {spoon} back down"),
        ]
        return PlanDAG(steps)

    def _fetch(self, query: TaskQuery, text: str, failures: list) -> PlanDAG:
        words = [w for w in re.findall(r"[a-z]+", text) if w not in ("bring", "fetch", "find", "get", "me", "the", "a")]
        target = None
        for w in words:
            if query.find(w):
                target = query.find(w)[0].object_id
                break
        if target is None:
            target = words[-1] if words else None
        if target is None:
            raise UnplannableQuery("nothing to fetch")
        steps = self._drawer_steps(query, target, failures, "L1") if query.drawers else []
        deps = [steps[-1].id] if steps else []
        steps.append(PlanStep("L2", "pick", {"object": target}, deps, None, f"pick up the {target}"))
        return PlanDAG(steps)

    def _handover(self, query: TaskQuery, text: str) -> PlanDAG:
        item = query.held
        words = re.findall(r"[a-z]+", text)
        named = [s.object_id for w in words for s in query.find(w) if s.class_label != "hand"]
        if named:
            item = named[0]
        if item is None:
            raise UnplannableQuery("nothing to hand over")
        steps = []
        if query.held != item:
            steps.append(PlanStep("L1", "pick", {"object": item}, [], None, f"pick up the {item}"))
        steps.append(PlanStep("L2", "handover", {"item": item}, [steps[-1].id] if steps else [], None,
                              f"hand the {item} to the person"))
        return PlanDAG(steps)

    def _draw(self, query: TaskQuery, text: str) -> PlanDAG:
        from . import art

        name = next((n for n in art.shipped_silhouettes() if n in text), None)
        if name is None:
            raise UnplannableQuery("no silhouette matches the request")
        if not query.surfaces:
            raise UnplannableQuery("no drawing surface in the scene")
        surface = art.DrawingSurface.from_dict(query.surfaces[0])
        waypoints = art.waypoints_for(art.load_silhouette(name), surface)
        notes = {"silhouette": name, "surface": surface.to_dict(), "margin": art.DEFAULT_MARGIN,
                 "tolerance": art.DEFAULT_TOLERANCE}
        steps = []
        if query.held is None or "pen" not in query.held:
            pen = self._one(query, "pen")
            steps.append(PlanStep("L1", "pick", {"object": pen}, [], None, f"pick up the {pen}"))
        steps.append(PlanStep("L2", "draw_path", {"waypoints": waypoints.tolist(), "pen_force": 1.5},
                              [steps[-1].id] if steps else [], None, f"draw a {name} on the plate", annotations=notes))
        return PlanDAG(steps)

    def _single(self, query: TaskQuery, text: str) -> PlanDAG:
        if "pour" in text:
            mug = self._one(query, "mug", required=False) or self._one(query, "cup")
            source = query.held or self._one(query, "kettle")
            return PlanDAG([PlanStep("L1", "pour_to_mass",
                                     {"target_mass": _grams(text, self.water), "source": source, "receptacle": mug},
                                     [], None, text)])
        if "scoop" in text:
            return PlanDAG([PlanStep("L1", "scoop", {"target_mass": _grams(text, self.coffee),
                                                     "source": self._one(query, "jar"),
                                                     "receptacle": self._one(query, "mug")}, [], None, text)])
        if "open" in text:
            named = [d for d in query.drawers if d in text]
            drawer = named[0] if named else (query.drawers[0] if query.drawers else None)
            if drawer is None:
                raise UnplannableQuery("no drawer in the scene")
            return PlanDAG([PlanStep("L1", "open_drawer", {"drawer": drawer}, [], None, text)])
        m = re.search(r"\b(pick up|grab|take)\s+(?:the\s+)?([a-z ]+)", text)
        if m:
            target = self._first_named(query, m.group(2))
            return PlanDAG([PlanStep("L1", "pick", {"object": target}, [], None, text)])
        raise UnplannableQuery(f"no production for {query.text!r}")

    def _first_named(self, query: TaskQuery, phrase: str) -> str:
        for w in phrase.split():
            hits = query.find(w)
            if hits:
                return hits[0].object_id
        raise UnplannableQuery(f"no {phrase.strip()} in the scene")


class RemoteService(PlannerClient):
    """Single JSON request/response exchange with an external decomposer.

    Request: {"query", "scene_summary", "examples", "failure_context"}.
    Response: a plan document ({"schema_version": 1, "steps": [...]}).
    """

    def __init__(self, url: str | None = None, timeout: float = REMOTE_TIMEOUT):
        self.url = url or os.environ.get(PLANNER_URL_ENV)
        if not self.url:
            raise UnplannableQuery(f"no planner endpoint configured ({PLANNER_URL_ENV})", transport=True)
        self.timeout = timeout

    def decompose(self, query: TaskQuery, examples: list, failure_context: list | None = None) -> PlanDAG:
        body = json.dumps({"query": query.text, "scene_summary": query.to_dict()["scene_summary"],
                           "held": query.held, "drawers": query.drawers, "examples": examples,
                           "failure_context": failure_context or []}, sort_keys=True).encode()
        req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"},
                                     method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = resp.read()
        except (urllib.error.URLError, OSError, TimeoutError) as exc:
            raise UnplannableQuery(f"planner request failed: {exc}", transport=True) from None
        try:
            return PlanDAG.from_dict(json.loads(payload))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise InvalidPlan(f"planner response is not JSON: {exc}") from None


# ------------------------------------------------------------------ operations
def _attach_examples(dag: PlanDAG, kb: KnowledgeBase | None, k: int = 3) -> PlanDAG:
    if kb is None or len(kb) == 0:
        return dag
    for s in dag.steps:
        s.examples = [r.entry_id for r in kb.retrieve_top_k(s.intent or s.skill, k)]
    return dag


def decompose(query: TaskQuery, client: PlannerClient, kb: KnowledgeBase | None = None,
              failure_context: list | None = None) -> PlanDAG:
    examples = []
    if kb is not None and len(kb):
        examples = [kb.get(r.entry_id).to_dict() for r in kb.retrieve_top_k(query.text, 3)]
    dag = client.decompose(query, examples, failure_context)
    if not isinstance(dag, PlanDAG):
        dag = PlanDAG.from_dict(dag)
    validate_plan(dag, kb)
    return _attach_examples(dag, kb)


def failure_record(step: PlanStep, outcome) -> dict:
    return {"step": step.id, "skill": step.skill, "parameters": step.parameters,
            "status": outcome.status.value, "error": outcome.error, "measured": dict(outcome.measured)}


def replan_on_failure(dag: PlanDAG, failed_step: PlanStep, outcomes: dict, client: PlannerClient,
                      query: TaskQuery, kb: KnowledgeBase | None = None, history: list | None = None,
                      budget: int = REPLAN_BUDGET) -> PlanDAG:
    """Re-query with the failure appended; `history` collects failures across attempts."""
    outcome = outcomes.get(failed_step.id)
    if _status(outcome) not in ("failed", "aborted_safety"):
        raise PlannerError(f"step {failed_step.id} did not fail")
    history = history if history is not None else []
    history.append(failure_record(failed_step, outcome))
    if len(history) > budget:
        raise ReplanBudgetExceeded(f"{len(history) - 1} replans already spent (budget {budget})")
    return decompose(query, client, kb, failure_context=history)


def carry_over(old: PlanDAG, new: PlanDAG, outcomes: dict) -> dict:
    """Outcomes of succeeded (or skipped) steps that the new plan repeats.

    A step is repeated when it keeps its id and skill. Parameters may differ,
    as the new plan was built from fresher detections, but the effect of the
    completed step is already in the world.
    """
    kept = {}
    for s in new.steps:
        o = outcomes.get(s.id)
        if o is None or _status(o) not in ("succeeded", "skipped") or s.id not in old.ids():
            continue
        if old.step(s.id).skill == s.skill:
            kept[s.id] = o
    return kept
