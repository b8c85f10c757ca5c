"""Breadth-first expert planner."""

from __future__ import annotations

from collections import deque

from .world import HEADINGS, NAVIGATION, Action, ActionType, Goal, World


class Unreachable(RuntimeError):
    pass


def _neighbours(occ, width: int, height: int, pose):
    x, y, f = pose
    dx, dy = HEADINGS[f]
    nx, ny = x + dx, y + dy
    if 0 <= nx < width and 0 <= ny < height and not occ[ny, nx]:
        yield ActionType.MoveAhead, (nx, ny, f)
    yield ActionType.RotateLeft, (x, y, (f - 1) % 4)
    yield ActionType.RotateRight, (x, y, (f + 1) % 4)


def navigate(world: World, tx: int, ty: int) -> list[Action]:
    """Shortest action sequence ending in a pose that faces cell (tx, ty).

    Ties between equally short plans resolve in MoveAhead, RotateLeft,
    RotateRight order, so the result is deterministic.
    """
    occ = world.occupancy()
    start = (world.agent_x, world.agent_y, world.facing)

    def facing_target(pose):
        x, y, f = pose
        dx, dy = HEADINGS[f]
        return (x + dx, y + dy) == (tx, ty)

    parent = {start: None}
    queue = deque([start])
    while queue:
        pose = queue.popleft()
        if facing_target(pose):
            path = []
            while parent[pose] is not None:
                prev, a = parent[pose]
                path.append(Action(a))
                pose = prev
            return path[::-1]
        for a, nxt in _neighbours(occ, world.width, world.height, pose):
            if nxt not in parent:
                parent[nxt] = (pose, a)
                queue.append(nxt)
    raise Unreachable(f"no pose facing ({tx}, {ty}) is reachable from {start}")


def plan_expert(world: World, goal: Goal) -> list[Action]:
    """Navigation to face the goal's target, then the single manipulation."""
    if goal.satisfied(world):
        return []
    t = world.objects[goal.target]
    if t.held:
        raise Unreachable("goal target is being held")
    return navigate(world, t.x, t.y) + [goal.final_action(world)]


def brute_force_navigation_length(world: World, tx: int, ty: int, max_depth: int = 12) -> int | None:
    """Exhaustive iterative-deepening search over navigation action strings."""
    occ = world.occupancy()
    start = (world.agent_x, world.agent_y, world.facing)

    def apply(pose, a):
        x, y, f = pose
        if a == ActionType.MoveAhead:
            dx, dy = HEADINGS[f]
            nx, ny = x + dx, y + dy
            if 0 <= nx < world.width and 0 <= ny < world.height and not occ[ny, nx]:
                return nx, ny, f
            return pose
        if a == ActionType.RotateLeft:
            return x, y, (f - 1) % 4
        return x, y, (f + 1) % 4

    def faces(pose):
        dx, dy = HEADINGS[pose[2]]
        return (pose[0] + dx, pose[1] + dy) == (tx, ty)

    def search(pose, depth):
        if depth == 0:
            return faces(pose)
        return any(search(apply(pose, a), depth - 1) for a in NAVIGATION)

    for depth in range(max_depth + 1):
        if search(start, depth):
            return depth
    return None
