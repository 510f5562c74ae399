"""Reference implementations the tests compare the package against.

Nothing here imports the code under test except for plain data types.
"""

from __future__ import annotations

import itertools

from shapely.affinity import affine_transform
from shapely.geometry import LineString

from intersection_consensus.geometry import Approach, Movement, PathDirection

# Quarter turns counter-clockwise needed to carry the south arm onto each arm.
_TURNS = {Approach.SOUTH: 0, Approach.EAST: 1, Approach.NORTH: 2, Approach.WEST: 3}


def oracle_path(d: PathDirection, lanes_per_approach: int) -> LineString:
    """Swept path of ``d`` drawn on an integer grid.

    The box is ``[0, 4k]^2`` for ``k`` lanes per approach so that every lane
    centre has an integer coordinate. Paths are drawn for the south arm
    (northbound traffic on the east half) and rotated into place.
    """
    k = lanes_per_approach
    size = 4 * k
    mid = 2 * k
    off = 2 * d.entry_lane + 1
    x = mid + off
    if d.movement is Movement.STRAIGHT:
        pts = [(x, 0), (x, size)]
    elif d.movement is Movement.RIGHT:
        # eastbound traffic uses the south half
        pts = [(x, 0), (x, mid - off), (size, mid - off)]
    else:
        # westbound traffic uses the north half
        pts = [(x, 0), (x, mid + off), (0, mid + off)]
    line = LineString(pts)
    for _ in range(_TURNS[d.approach]):
        # (x, y) -> (size - y, x), exact on integers
        line = affine_transform(line, [0, -1, 1, 0, size, 0])
    return line


def oracle_conflicts(a: PathDirection, b: PathDirection, lanes_per_approach: int) -> bool:
    return oracle_path(a, lanes_per_approach).intersects(oracle_path(b, lanes_per_approach))


def all_directions(lanes_per_approach: int) -> list[PathDirection]:
    return [
        PathDirection(a, m, lane)
        for a in Approach
        for m in Movement
        for lane in range(lanes_per_approach)
    ]


def plate_order(plates: list[str]) -> list[str]:
    """Crossing order by comparing upper-cased plates one byte at a time."""

    def before(p: str, q: str) -> bool:
        x, y = p.upper().encode("utf-8"), q.upper().encode("utf-8")
        for i in range(min(len(x), len(y))):
            if x[i] != y[i]:
                return x[i] < y[i]
        return len(x) < len(y)

    out: list[str] = []
    for p in plates:
        i = 0
        while i < len(out) and before(out[i], p):
            i += 1
        out.insert(i, p)
    return out


def preferred_compatible_subset(leader, members: list, conflict) -> list:
    """Brute-force choice of co-passers.

    Among all subsets of ``members`` that are pairwise conflict-free together
    with ``leader``, return the one that is best when subsets are compared by
    whether they contain the first member, then the second, and so on.
    """
    for mask in itertools.product((1, 0), repeat=len(members)):
        chosen = [m for m, bit in zip(members, mask) if bit]
        group = [leader, *chosen]
        if all(not conflict(p, q) for p, q in itertools.combinations(group, 2)):
            return chosen
    return []


def quorum_by_enumeration(n: int) -> int:
    """Smallest k such that any two k-subsets of n voters share a voter."""
    voters = range(n)
    for k in range(1, n + 1):
        subsets = list(itertools.combinations(voters, k))
        if all(set(a) & set(b) for a, b in itertools.combinations(subsets, 2)):
            return k
    return n
