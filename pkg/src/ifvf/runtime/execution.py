"""Plan execution on the simulator and the top-level run entry point."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from ..knowledge import KnowledgeBase
from ..planner import (
    REPLAN_BUDGET,
    InvalidPlan,
    PlanDAG,
    PlannerClient,
    PlannerError,
    RuleMock,
    TaskQuery,
    carry_over,
    decompose,
    replan_on_failure,
    resolve,
    validate_plan,
)
from ..skills.base import HOLD, SkillStatus
from .logs import parse_log
from .scenario import ScenarioConfig, ScenarioError
from .scheduler import Driver, IdleDriver, Simulation, SkillDriver


class PlanDriver(Driver):
    """Runs a PlanDAG step by step, branching on detections and replanning on failure.

    Planning happens between control ticks and costs no simulated time. Every
    decision (plan, dispatch, skip, replan, completion) goes to the log.
    """

    def __init__(self, query: TaskQuery | None = None, dag: PlanDAG | None = None,
                 client: PlannerClient | None = None, kb: KnowledgeBase | None = None,
                 budget: int = REPLAN_BUDGET):
        if query is None and dag is None:
            raise ValueError("need a query or an explicit plan")
        self.query = query
        self.dag = dag
        self.client = client or RuleMock()
        self.kb = kb
        self.budget = budget
        self.outcomes: dict = {}
        self.failures: list = []
        self.held = None
        self.error = None
        self.started = False

    # ----------------------------------------------------------- helpers
    def _log(self, sim: Simulation, event: str, **data) -> None:
        sim.log.record(sim.tick, "plan", {"event": event, **data})

    def _finish(self, sim: Simulation, status: str, **data) -> None:
        self.done = True
        self.status = status
        self._log(sim, "finish", status=status, **data)

    def _facts(self, sim: Simulation) -> dict:
        ctx = sim.ctx
        detected = sorted(o for o in ctx.detections if ctx.ticks_since_seen(o) <= 1)
        return {"detected": detected, "held": self.held}

    def _scene_query(self, sim: Simulation) -> TaskQuery:
        q = self.query
        ctx = sim.ctx
        scene = [(o, d.class_label, [round(float(v), 4) for v in d.pose.position])
                 for o, d in sorted(ctx.detections.items())]
        drawers = sorted(p.id for p in ctx.priors.values() if p.kind == "drawer")
        surfaces = [dict(s, name=n) for n, s in sorted(sim.config.data["assets"].get("surfaces", {}).items())]
        return TaskQuery(q.text, scene, self.held, drawers, surfaces)

    def _plan(self, sim: Simulation) -> bool:
        try:
            if self.dag is None:
                self.query = self._scene_query(sim)
                self.dag = decompose(self.query, self.client, self.kb)
            else:
                validate_plan(self.dag, self.kb)
        except PlannerError as exc:
            self.error = f"{type(exc).__name__}: {exc}"
            self._finish(sim, "failed", error=self.error)
            return False
        self._log(sim, "plan", dag=self.dag.to_dict(), query=self.query.to_dict() if self.query else None)
        return True

    def _replan(self, sim: Simulation, step) -> bool:
        if self.query is None:
            self._finish(sim, "failed", error="explicit plan failed; nothing to replan from", step=step.id)
            return False
        old = self.dag
        try:
            self.query = self._scene_query(sim)
            new = replan_on_failure(old, step, self.outcomes, self.client, self.query, self.kb,
                                    history=self.failures, budget=self.budget)
        except PlannerError as exc:
            self.error = f"{type(exc).__name__}: {exc}"
            self._finish(sim, "failed", error=self.error, step=step.id)
            return False
        self.outcomes = carry_over(old, new, self.outcomes)
        self.dag = new
        self._log(sim, "replan", attempt=len(self.failures), failed_step=step.id, dag=new.to_dict(),
                  kept=sorted(self.outcomes))
        return True

    def _track_held(self, step, outcome) -> None:
        if outcome.status is not SkillStatus.SUCCEEDED:
            return
        if step.skill == "pick":
            self.held = step.parameters["object"]
        elif step.skill in ("place", "handover"):
            self.held = None

    # ----------------------------------------------------------- driver
    def control(self, sim: Simulation):
        runner = sim.runner
        if not self.started:
            self.started = True
            self.held = sim.config.data["robot"]["held"]
            if not self._plan(sim):
                return HOLD
        if runner.active:
            cmd = runner.step()
            return cmd if runner.active else self._collect(sim)
        res = resolve(self.dag, self.outcomes, self._facts(sim))
        for sid in res.skipped:
            self.outcomes[sid] = "skipped"
            self._log(sim, "skip", step=sid, condition=self.dag.step(sid).branch_condition)
        if res.state == "complete":
            self._finish(sim, "succeeded")
            return HOLD
        if res.state == "blocked":
            self._log(sim, "deadlock", failed=res.failed)
            self._finish(sim, "failed", error="no step is enabled")
            return HOLD
        step = res.step
        self._log(sim, "dispatch", step=step.id, skill=step.skill, condition=step.branch_condition,
                  taken=step.branch_condition is not None)
        runner.start(step.skill, step.parameters, step.id)
        cmd = runner.step()
        return cmd if runner.active else self._collect(sim)

    def _collect(self, sim: Simulation):
        """Record the outcome of the skill that just ended; fail or replan as needed."""
        runner = sim.runner
        step = self.dag.step(runner.step_id)
        outcome = runner.outcome
        self.outcomes[step.id] = outcome
        self._track_held(step, outcome)
        if outcome.status is SkillStatus.ABORTED_SAFETY:
            self._finish(sim, "aborted_safety", step=step.id)
        elif outcome.status is SkillStatus.FAILED:
            self._replan(sim, step)
        return HOLD


@dataclass
class RunResult:
    status: str
    log_text: str
    metrics: dict
    violations: int
    sim: Simulation

    @property
    def ok(self) -> bool:
        return self.status == "succeeded" and self.violations == 0


def kb_digest(kb: KnowledgeBase | None) -> str | None:
    return None if kb is None else hashlib.sha256(kb.dumps().encode()).hexdigest()


def make_driver(config: ScenarioConfig, kb: KnowledgeBase | None, client: PlannerClient | None = None) -> Driver:
    task = config.task
    if "skill" in task:
        return SkillDriver(task["skill"]["name"], task["skill"].get("params", {}))
    if "plan" in task:
        try:
            dag = PlanDAG.from_dict(task["plan"])
        except InvalidPlan as exc:
            raise ScenarioError(f"scenario plan: {exc}") from None
        return PlanDriver(dag=dag, client=client, kb=kb)
    if "query" in task:
        return PlanDriver(query=TaskQuery(task["query"]), client=client, kb=kb)
    if "idle" in task:
        return _Idle(float(task["idle"]))
    raise ScenarioError(f"scenario task needs skill, plan, query or idle: {task}")


class _Idle(IdleDriver):
    """Holds still for a fixed time, for rate and timing checks."""

    def __init__(self, seconds: float):
        self.ticks = int(round(seconds * 40))
        self.count = 0

    def control(self, sim):
        self.count += 1
        if self.count >= self.ticks:
            self.done = True
            self.status = "succeeded"
        return HOLD


def run_scenario(config: ScenarioConfig, seed: int | None = None, query: str | None = None,
                 plan: dict | None = None, client: PlannerClient | None = None,
                 kb: KnowledgeBase | None = None, log_enabled: bool = True) -> RunResult:
    """Decompose (unless a plan or single skill is given), simulate, and compute metrics."""
    from .metrics import compute_metrics

    if query is not None:
        config = config.with_task({"query": query})
    elif plan is not None:
        config = config.with_task({"plan": plan})
    if kb is None and ("query" in config.task or "plan" in config.task):
        kb = KnowledgeBase.load()
    sim = Simulation(config, log_enabled=log_enabled, seed=seed)
    sim.log.header["knowledge_base"] = kb_digest(kb)
    sim.log.header["planner"] = type(client or RuleMock()).__name__
    driver = make_driver(sim.config, kb, client)
    status = sim.run(driver)
    text = sim.log_text()
    metrics = compute_metrics(parse_log(text)) if log_enabled else {}
    return RunResult(status, text, metrics, sim.violations, sim)
