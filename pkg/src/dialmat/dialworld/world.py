"""Deterministic 4-direction gridworld with manipulable objects."""

from __future__ import annotations

import copy
import enum
import json
from dataclasses import asdict, dataclass, field

import numpy as np


class ActionType(enum.IntEnum):
    MoveAhead = 0
    RotateLeft = 1
    RotateRight = 2
    LookUp = 3
    LookDown = 4
    Pickup = 5
    Put = 6
    Open = 7
    Close = 8
    ToggleOn = 9
    ToggleOff = 10
    Stop = 11

    @property
    def is_manipulation(self) -> bool:
        return ActionType.Pickup <= self <= ActionType.ToggleOff


NAVIGATION = (ActionType.MoveAhead, ActionType.RotateLeft, ActionType.RotateRight)

OBJECT_CLASSES = ("lamp", "tv", "fridge", "cabinet", "apple", "mug", "book", "table")
COLORS = ("red", "green", "blue", "yellow")
TOGGLEABLE = frozenset({"lamp", "tv"})
OPENABLE = frozenset({"fridge", "cabinet"})
PICKUPABLE = frozenset({"apple", "mug", "book"})
RECEPTACLES = frozenset({"table", "fridge", "cabinet"})

# facing: 0=N, 1=E, 2=S, 3=W; y grows southward
HEADINGS = ((0, -1), (1, 0), (0, 1), (-1, 0))
FACING_NAMES = "NESW"


class InvalidAction(ValueError):
    pass


class InvariantViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class Action:
    action_type: ActionType
    object_arg: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "action_type", ActionType(self.action_type))
        if self.action_type.is_manipulation:
            if self.object_arg is None:
                raise InvalidAction(f"{self.action_type.name} needs an object argument")
            if not 0 <= self.object_arg < len(OBJECT_CLASSES):
                raise InvalidAction(f"object id {self.object_arg} out of range")
        elif self.object_arg is not None:
            raise InvalidAction(f"{self.action_type.name} takes no object argument")

    def to_json(self) -> list:
        obj = None if self.object_arg is None else OBJECT_CLASSES[self.object_arg]
        return [self.action_type.name, obj]

    @classmethod
    def from_json(cls, item) -> Action:
        name, obj = item
        return cls(ActionType[name], None if obj is None else OBJECT_CLASSES.index(obj))

    def __str__(self) -> str:
        if self.object_arg is None:
            return self.action_type.name
        return f"{self.action_type.name}({OBJECT_CLASSES[self.object_arg]})"


@dataclass
class WorldObject:
    cls: str
    color: str
    x: int
    y: int
    is_open: bool = False
    is_on: bool = False
    held: bool = False
    # index of the receptacle this object was put on, if any
    on: int | None = None

    @property
    def occupies_cell(self) -> bool:
        return not self.held and self.on is None


@dataclass
class World:
    width: int
    height: int
    walls: set[tuple[int, int]]
    objects: list[WorldObject]
    agent_x: int
    agent_y: int
    facing: int
    seed: int = 0

    def copy(self) -> World:
        return copy.deepcopy(self)

    @property
    def held_index(self) -> int | None:
        for i, o in enumerate(self.objects):
            if o.held:
                return i
        return None

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def object_at(self, x: int, y: int) -> int | None:
        for i, o in enumerate(self.objects):
            if o.occupies_cell and o.x == x and o.y == y:
                return i
        return None

    def occupancy(self) -> np.ndarray:
        """Boolean grid [y, x], True where the agent cannot stand."""
        occ = np.zeros((self.height, self.width), dtype=bool)
        for x, y in self.walls:
            occ[y, x] = True
        for o in self.objects:
            if o.occupies_cell:
                occ[o.y, o.x] = True
        return occ

    def passable(self, x: int, y: int) -> bool:
        return self.in_bounds(x, y) and (x, y) not in self.walls and self.object_at(x, y) is None

    def facing_cell(self) -> tuple[int, int]:
        dx, dy = HEADINGS[self.facing]
        return self.agent_x + dx, self.agent_y + dy

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height,
                "walls": sorted([list(w) for w in self.walls]),
                "objects": [asdict(o) for o in self.objects],
                "agent": [self.agent_x, self.agent_y, self.facing], "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> World:
        ax, ay, f = d["agent"]
        return cls(d["width"], d["height"], {tuple(w) for w in d["walls"]},
                   [WorldObject(**o) for o in d["objects"]], ax, ay, f, d.get("seed", 0))

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def check_invariants(self) -> None:
        problems = []
        if not self.in_bounds(self.agent_x, self.agent_y):
            problems.append("agent out of bounds")
        elif (self.agent_x, self.agent_y) in self.walls:
            problems.append("agent inside wall")
        elif self.object_at(self.agent_x, self.agent_y) is not None:
            problems.append("agent inside object")
        if sum(o.held for o in self.objects) > 1:
            problems.append("more than one held object")
        if problems:
            raise InvariantViolation("; ".join(problems))


# goals ---------------------------------------------------------------------

GOAL_TYPES = ("toggle_on", "toggle_off", "open", "close", "pickup", "put")

GOAL_ACTION = {
    "toggle_on": ActionType.ToggleOn, "toggle_off": ActionType.ToggleOff,
    "open": ActionType.Open, "close": ActionType.Close,
    "pickup": ActionType.Pickup, "put": ActionType.Put,
}


@dataclass(frozen=True)
class Goal:
    """``target`` indexes the object the final manipulation is aimed at.

    For ``put`` goals ``target`` is the receptacle and ``obj`` the carried object.
    """

    kind: str
    target: int
    obj: int | None = None

    def satisfied(self, world: World) -> bool:
        t = world.objects[self.target]
        if self.kind == "toggle_on":
            return t.is_on
        if self.kind == "toggle_off":
            return not t.is_on
        if self.kind == "open":
            return t.is_open
        if self.kind == "close":
            return not t.is_open
        if self.kind == "pickup":
            return t.held
        if self.kind == "put":
            return world.objects[self.obj].on == self.target
        raise ValueError(f"unknown goal kind {self.kind!r}")

    def final_action(self, world: World) -> Action:
        return Action(GOAL_ACTION[self.kind], OBJECT_CLASSES.index(world.objects[self.target].cls))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "target": self.target, "obj": self.obj}

    @classmethod
    def from_dict(cls, d: dict) -> Goal:
        return cls(d["kind"], d["target"], d.get("obj"))


# stepping --------------------------------------------------------------------

@dataclass(frozen=True)
class StepResult:
    status: str  # moved | blocked | manipulated | invalid | stopped
    subgoal_done: bool = False


def _manipulate(world: World, action: Action) -> bool:
    fx, fy = world.facing_cell()
    if not world.in_bounds(fx, fy):
        return False
    idx = world.object_at(fx, fy)
    if idx is None:
        return False
    cls_name = OBJECT_CLASSES[action.object_arg]
    a = action.action_type
    if a == ActionType.Pickup:
        if world.held_index is not None:
            return False
        # facing a receptacle: pick up the matching object resting on it
        cand = idx if world.objects[idx].cls == cls_name else None
        if cand is None:
            for j, o in enumerate(world.objects):
                if o.on == idx and o.cls == cls_name:
                    cand = j
                    break
        if cand is None or world.objects[cand].cls not in PICKUPABLE:
            return False
        o = world.objects[cand]
        o.held, o.on = True, None
        return True
    target = world.objects[idx]
    if target.cls != cls_name:
        return False
    if a == ActionType.Put:
        held = world.held_index
        if held is None or target.cls not in RECEPTACLES:
            return False
        if target.cls in OPENABLE and not target.is_open:
            return False
        o = world.objects[held]
        o.held, o.on, o.x, o.y = False, idx, target.x, target.y
        return True
    if a in (ActionType.Open, ActionType.Close):
        want = a == ActionType.Open
        if target.cls not in OPENABLE or target.is_open == want:
            return False
        target.is_open = want
        return True
    if a in (ActionType.ToggleOn, ActionType.ToggleOff):
        want = a == ActionType.ToggleOn
        if target.cls not in TOGGLEABLE or target.is_on == want:
            return False
        target.is_on = want
        return True
    return False


def step(world: World, action: Action, goal: Goal | None = None) -> tuple[World, StepResult]:
    """Apply ``action`` to a copy of ``world``.

    Illegal actions never raise; they come back as ``invalid`` (or ``blocked``
    for a move into an obstacle) with the world unchanged.
    """
    w = world.copy()
    a = action.action_type
    if a == ActionType.MoveAhead:
        fx, fy = w.facing_cell()
        if w.passable(fx, fy):
            w.agent_x, w.agent_y = fx, fy
            status = "moved"
        else:
            status = "blocked"
    elif a == ActionType.RotateLeft:
        w.facing = (w.facing - 1) % 4
        status = "moved"
    elif a == ActionType.RotateRight:
        w.facing = (w.facing + 1) % 4
        status = "moved"
    elif a == ActionType.Stop:
        status = "stopped"
    elif a.is_manipulation:
        status = "manipulated" if _manipulate(w, action) else "invalid"
    else:
        # no camera pitch in a top-down grid
        status = "invalid"
    if status in ("invalid", "blocked"):
        w = world
    done = goal.satisfied(w) if goal is not None else False
    return w, StepResult(status, done)


# egocentric geometry -------------------------------------------------------

def egocentric(world: World, x: int, y: int) -> tuple[int, int]:
    """(forward, right) offset of cell (x, y) in the agent's frame."""
    dx, dy = x - world.agent_x, y - world.agent_y
    fx, fy = HEADINGS[world.facing]
    rx, ry = HEADINGS[(world.facing + 1) % 4]
    return dx * fx + dy * fy, dx * rx + dy * ry


def from_egocentric(world: World, forward: int, right: int) -> tuple[int, int]:
    fx, fy = HEADINGS[world.facing]
    rx, ry = HEADINGS[(world.facing + 1) % 4]
    return world.agent_x + forward * fx + right * rx, world.agent_y + forward * fy + right * ry


def relative_direction(world: World, x: int, y: int) -> str:
    """ahead / behind / left / right; ties on the diagonal go to ahead/behind."""
    f, r = egocentric(world, x, y)
    if abs(r) > abs(f):
        return "right" if r > 0 else "left"
    return "ahead" if f > 0 else "behind"


@dataclass(frozen=True)
class ViewConfig:
    depth: int = 5
    width: int = 5
    # also show the agent's own row, i.e. the cells directly beside it
    own_row: bool = True

    def __post_init__(self):
        if self.depth < 1 or self.width < 1 or self.width % 2 == 0:
            raise ValueError(f"view needs depth >= 1 and an odd width, got {self.depth}x{self.width}")

    @property
    def rows(self) -> int:
        return self.depth + int(self.own_row)

    @property
    def channels(self) -> int:
        return N_CHANNELS


# channel layout: classes | colors | open, on, holding | wall
CH_CLASS = 0
CH_COLOR = len(OBJECT_CLASSES)
CH_OPEN = CH_COLOR + len(COLORS)
CH_ON = CH_OPEN + 1
CH_HOLDING = CH_OPEN + 2
CH_WALL = CH_OPEN + 3
N_CHANNELS = CH_WALL + 1


def view_cells(world: World, view: ViewConfig) -> list[list[tuple[int, int]]]:
    """World coordinates of each view cell; row 0 is farthest ahead."""
    half = view.width // 2
    return [[from_egocentric(world, view.depth - r, c - half) for c in range(view.width)]
            for r in range(view.rows)]


def render_observation(world: World, view: ViewConfig = ViewConfig()) -> np.ndarray:
    """C x rows x width egocentric feature grid of the cells ahead of (and beside) the agent."""
    obs = np.zeros((N_CHANNELS, view.rows, view.width))
    holding = world.held_index is not None
    for r, row in enumerate(view_cells(world, view)):
        for c, (x, y) in enumerate(row):
            if holding:
                obs[CH_HOLDING, r, c] = 1.0
            if not world.in_bounds(x, y) or (x, y) in world.walls:
                obs[CH_WALL, r, c] = 1.0
                continue
            idx = world.object_at(x, y)
            if idx is None:
                continue
            o = world.objects[idx]
            obs[CH_CLASS + OBJECT_CLASSES.index(o.cls), r, c] = 1.0
            obs[CH_COLOR + COLORS.index(o.color), r, c] = 1.0
            obs[CH_OPEN, r, c] = float(o.is_open)
            obs[CH_ON, r, c] = float(o.is_on)
    return obs


def in_view(world: World, x: int, y: int, view: ViewConfig = ViewConfig()) -> bool:
    f, r = egocentric(world, x, y)
    return (0 if view.own_row else 1) <= f <= view.depth and abs(r) <= view.width // 2


@dataclass
class WorldConfig:
    width: int = 8
    height: int = 8
    n_objects: int = 10
    n_walls: int = 4
    max_attempts: int = 200
    view: ViewConfig = field(default_factory=ViewConfig)
