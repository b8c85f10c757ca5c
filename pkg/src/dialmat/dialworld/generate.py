"""Seeded world layouts and episode (task) sampling."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import language
from .language import QuestionType
from .planner import plan_expert
from .world import (COLORS, HEADINGS, OBJECT_CLASSES, OPENABLE, PICKUPABLE, TOGGLEABLE,
                    Action, Goal, ViewConfig, World, WorldConfig, WorldObject, step)


class UnsatisfiableConfig(ValueError):
    pass


def _connected(occ: np.ndarray) -> bool:
    free = list(zip(*np.nonzero(~occ)))
    if not free:
        return False
    seen = {free[0]}
    queue = deque([free[0]])
    h, w = occ.shape
    while queue:
        y, x = queue.popleft()
        for dx, dy in HEADINGS:
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and not occ[ny, nx] and (ny, nx) not in seen:
                seen.add((ny, nx))
                queue.append((ny, nx))
    return len(seen) == len(free)


def _accessible(world: World, occ: np.ndarray) -> bool:
    for o in world.objects:
        if not any(world.in_bounds(o.x + dx, o.y + dy) and not occ[o.y + dy, o.x + dx]
                   for dx, dy in HEADINGS):
            return False
    return True


def generate_world(seed: int, config: WorldConfig = WorldConfig()) -> World:
    """Seeded layout with at least one instance of every object class.

    Every object has a free neighbouring cell and all free cells are
    connected, so any object can be reached from any agent position.
    """
    n_cells = config.width * config.height
    if config.width < 1 or config.height < 1:
        raise UnsatisfiableConfig("grid must be at least 1x1")
    if config.n_objects < len(OBJECT_CLASSES):
        raise UnsatisfiableConfig(
            f"{config.n_objects} objects cannot cover all {len(OBJECT_CLASSES)} classes")
    if config.n_objects + config.n_walls + 1 > n_cells:
        raise UnsatisfiableConfig(
            f"{config.n_objects} objects + {config.n_walls} walls + agent "
            f"do not fit a {config.width}x{config.height} grid")
    if max(config.width, config.height) > 99:
        raise UnsatisfiableConfig("grid side above 99 cells")
    rng = np.random.default_rng(seed)
    for _ in range(config.max_attempts):
        cells = rng.permutation(n_cells)[: config.n_objects + config.n_walls + 1]
        xy = [(int(c % config.width), int(c // config.width)) for c in cells]
        walls = set(xy[: config.n_walls])
        obj_cells = xy[config.n_walls: config.n_walls + config.n_objects]
        ax, ay = xy[-1]
        classes = list(OBJECT_CLASSES) + list(
            rng.choice(OBJECT_CLASSES, size=config.n_objects - len(OBJECT_CLASSES)))
        objects = []
        for cls, (x, y) in zip(classes, obj_cells):
            color = COLORS[rng.integers(len(COLORS))]
            o = WorldObject(str(cls), color, x, y)
            if cls in TOGGLEABLE:
                o.is_on = bool(rng.integers(2))
            if cls in OPENABLE:
                o.is_open = bool(rng.integers(2))
            objects.append(o)
        world = World(config.width, config.height, walls, objects, ax, ay,
                      int(rng.integers(4)), seed)
        occ = world.occupancy()
        if _connected(occ) and _accessible(world, occ):
            return world
    raise UnsatisfiableConfig(
        f"no connected layout found in {config.max_attempts} attempts for seed {seed}")


@dataclass
class SubgoalRecord:
    instruction_tokens: list[str]
    goal: Goal
    expert_actions: list[Action]
    question_label: QuestionType

    def to_json(self) -> dict:
        return {"instruction_tokens": self.instruction_tokens, "goal": self.goal.to_dict(),
                "expert_actions": [a.to_json() for a in self.expert_actions],
                "question_label": self.question_label.name}

    @classmethod
    def from_json(cls, d: dict) -> SubgoalRecord:
        return cls(list(d["instruction_tokens"]), Goal.from_dict(d["goal"]),
                   [Action.from_json(a) for a in d["expert_actions"]],
                   QuestionType[d["question_label"]])


@dataclass
class Episode:
    seed: int
    task_seed: int
    split: str
    start_pose: tuple[int, int, int]
    subgoals: list[SubgoalRecord] = field(default_factory=list)

    @property
    def expert_length(self) -> int:
        return sum(len(s.expert_actions) for s in self.subgoals)

    def initial_world(self, config: WorldConfig) -> World:
        w = generate_world(self.seed, config)
        w.agent_x, w.agent_y, w.facing = self.start_pose
        return w

    def to_json(self) -> dict:
        return {"seed": self.seed, "task_seed": self.task_seed, "split": self.split,
                "start_pose": list(self.start_pose),
                "subgoals": [s.to_json() for s in self.subgoals]}

    @classmethod
    def from_json(cls, d: dict) -> Episode:
        return cls(d["seed"], d["task_seed"], d["split"], tuple(d["start_pose"]),
                   [SubgoalRecord.from_json(s) for s in d["subgoals"]])


def _single_task(world: World, rng, exclude: set[int]) -> list[Goal]:
    kinds = ["toggle", "openclose", "pickup", "pickup_put"]
    while True:
        kind = kinds[rng.integers(len(kinds))]
        if kind == "toggle":
            cand = [i for i, o in enumerate(world.objects) if o.cls in TOGGLEABLE]
        elif kind == "openclose":
            cand = [i for i, o in enumerate(world.objects) if o.cls in OPENABLE]
        else:
            cand = [i for i, o in enumerate(world.objects)
                    if o.cls in PICKUPABLE and o.occupies_cell]
            if world.held_index is not None:
                cand = []
        cand = [i for i in cand if i not in exclude]
        if not cand:
            continue
        i = cand[rng.integers(len(cand))]
        o = world.objects[i]
        if kind == "toggle":
            return [Goal("toggle_off" if o.is_on else "toggle_on", i)]
        if kind == "openclose":
            return [Goal("close" if o.is_open else "open", i)]
        if kind == "pickup":
            return [Goal("pickup", i)]
        recs = [j for j, r in enumerate(world.objects)
                if r.cls == "table" or (r.cls in OPENABLE and r.is_open)]
        return [Goal("pickup", i), Goal("put", recs[rng.integers(len(recs))], obj=i)]


def sample_episode(world: World, seed: int, task_seed: int, split: str,
                   view: ViewConfig = ViewConfig()) -> Episode:
    """Sample start pose and 1-2 tasks, then record expert plans by replay."""
    rng = np.random.default_rng([seed, task_seed])
    w = world.copy()
    free = [(x, y) for y in range(w.height) for x in range(w.width) if w.passable(x, y)]
    w.agent_x, w.agent_y = free[rng.integers(len(free))]
    w.facing = int(rng.integers(4))
    ep = Episode(seed, task_seed, split, (w.agent_x, w.agent_y, w.facing))
    goals = _single_task(w, rng, set())
    if len(goals) == 1 and rng.random() < 0.4:
        # chain a second task on a different object; planned after replaying the first
        goals = goals + [None]
    pending = list(goals)
    while pending:
        goal = pending.pop(0)
        if goal is None:
            goal = _single_task(w, rng, {g.target for g in goals if g is not None})[0]
        words = language.instruction(goal, w, rng)
        label = language.heuristic_question(w, goal, view)
        plan = plan_expert(w, goal)
        ep.subgoals.append(SubgoalRecord(words, goal, plan, label))
        for a in plan:
            w, _ = step(w, a, goal)
        if not goal.satisfied(w):
            raise RuntimeError(f"expert plan for {goal} does not satisfy it")
    return ep
