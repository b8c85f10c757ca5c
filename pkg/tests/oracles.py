"""Independent reference computations used as test oracles."""

from dialmat.dialworld.world import HEADINGS, World


def facing_distance(world: World, tx: int, ty: int) -> dict:
    """Fewest navigation actions from every free pose to a pose facing (tx, ty).

    Bellman relaxation over the pose graph until a fixed point, sharing no
    code with the planner's queue search. ``None`` marks unreachable poses.
    """
    blocked = {(x, y) for x, y in world.walls} | {
        (o.x, o.y) for o in world.objects if o.occupies_cell}
    poses = [(x, y, f) for x in range(world.width) for y in range(world.height)
             if (x, y) not in blocked for f in range(4)]
    inf = float("inf")
    dist = {}
    for x, y, f in poses:
        hx, hy = HEADINGS[f]
        dist[(x, y, f)] = 0 if (x + hx, y + hy) == (tx, ty) else inf
    changed = True
    while changed:
        changed = False
        for x, y, f in poses:
            hx, hy = HEADINGS[f]
            succ = [(x, y, (f + 1) % 4), (x, y, (f + 3) % 4)]
            nx, ny = x + hx, y + hy
            if 0 <= nx < world.width and 0 <= ny < world.height and (nx, ny) not in blocked:
                succ.append((nx, ny, f))
            best = min(dist[s] for s in succ) + 1
            if best < dist[(x, y, f)]:
                dist[(x, y, f)] = best
                changed = True
    return {p: (None if d == inf else int(d)) for p, d in dist.items()}
