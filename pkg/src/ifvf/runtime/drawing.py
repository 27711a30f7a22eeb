"""Build a drawing run for any silhouette and drawing surface."""

from __future__ import annotations

import copy

import numpy as np

from .. import art
from ..planner import PlanDAG, PlanStep
from .scenario import ScenarioConfig, load_scenario

BORDER = 0.02  # m of physical surface beyond the drawing area


def world_surface(surface: art.DrawingSurface, name: str = "plate") -> dict:
    """Physical support under a drawing surface: a sloped patch through its centre."""
    n = surface.normal
    if n[2] <= 0:
        raise art.DegenerateSurface("drawing surface must face upward")
    o = surface.origin.position
    u, v = surface.axes
    half = np.abs(np.outer(u, [surface.extent[0] / 2])) + np.abs(np.outer(v, [surface.extent[1] / 2]))
    size = 2 * half[:2, 0] + 2 * BORDER
    return {"id": name, "center": [float(o[0]), float(o[1])], "size": size.tolist(), "height": float(o[2]),
            "slope": [float(-n[0] / n[2]), float(-n[1] / n[2])]}


def draw_plan(silhouette: str, surface: art.DrawingSurface, pen_force: float = 1.5,
              margin: float = art.DEFAULT_MARGIN, tolerance: float = art.DEFAULT_TOLERANCE) -> PlanDAG:
    raster = art.load_silhouette(silhouette)
    wp = art.waypoints_for(raster, surface, margin, tolerance)
    notes = {"silhouette": silhouette, "surface": surface.to_dict(), "margin": margin, "tolerance": tolerance}
    return PlanDAG([PlanStep("L1", "draw_path", {"waypoints": wp.tolist(), "pen_force": pen_force}, [], None,
                             f"draw the {silhouette} outline", annotations=notes)])


def draw_scenario(silhouette: str, surface: art.DrawingSurface, seed: int | None = None,
                  base: str = "draw") -> ScenarioConfig:
    cfg = load_scenario(base)
    d = copy.deepcopy(cfg.data)
    d["world"]["surfaces"] = [world_surface(surface)]
    o = surface.origin.position
    d["robot"]["home"] = [float(o[0]), float(o[1]), float(min(o[2] + 0.19, 0.95))]
    d["assets"]["surfaces"] = {"plate": dict(surface.to_dict(), object="plate")}
    for obj in d["world"]["objects"]:
        if obj["id"] == "plate":
            obj["position"] = [float(o[0]), float(o[1]), 0.0]
    d["task"] = {"plan": draw_plan(silhouette, surface).to_dict()}
    if seed is not None:
        d["seed"] = int(seed)
    return ScenarioConfig(d, cfg.source)
