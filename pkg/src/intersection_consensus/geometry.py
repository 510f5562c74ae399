"""Four-way intersection geometry, the movement conflict relation and quorum sizes.

The intersection box is the unit square with north at ``y = 1`` and east at
``x = 1``. Traffic keeps right. Every approach has ``lanes_per_approach``
inbound lanes; lane ``0`` is the one nearest the centre line. A movement is
drawn as a polyline: straight through, or an L-shaped turn that pivots where
the inbound lane's axis meets the outbound lane's axis. Two movements
conflict when their polylines touch anywhere, which also covers a shared
exit lane.

All coordinates are exact ``Fraction`` values so that touching and collinear
cases are decided without rounding.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

VALID_TOTAL_LANES = (2, 4, 6, 8)


class InvalidDirection(ValueError):
    pass


class InvalidInput(ValueError):
    pass


class Approach(enum.Enum):
    NORTH = "N"
    EAST = "E"
    SOUTH = "S"
    WEST = "W"


class Movement(enum.Enum):
    LEFT = "L"
    STRAIGHT = "S"
    RIGHT = "R"


class QuorumMode(enum.Enum):
    MAJORITY = "majority"
    FULL = "full"


# Approach order when turning right (clockwise on the compass seen from above
# is N -> E -> S -> W, a right turn from the north arm heads west).
_APPROACHES = (Approach.NORTH, Approach.EAST, Approach.SOUTH, Approach.WEST)


@dataclass(frozen=True)
class PathDirection:
    approach: Approach
    movement: Movement
    entry_lane: int = 0

    @property
    def label(self) -> str:
        return f"{self.approach.value}{self.movement.value}{self.entry_lane}"

    @classmethod
    def parse(cls, label: str) -> "PathDirection":
        """Inverse of :attr:`label`, e.g. ``"NS0"`` or ``"WL2"``."""
        if len(label) < 3:
            raise InvalidDirection(f"bad direction label {label!r}")
        try:
            approach = Approach(label[0])
            movement = Movement(label[1])
            lane = int(label[2:])
        except ValueError as exc:
            raise InvalidDirection(f"bad direction label {label!r}") from exc
        if lane < 0:
            raise InvalidDirection(f"bad direction label {label!r}")
        return cls(approach, movement, lane)

    def exit_approach(self) -> Approach:
        """Arm of the intersection the vehicle leaves through."""
        i = _APPROACHES.index(self.approach)
        if self.movement is Movement.STRAIGHT:
            return _APPROACHES[(i + 2) % 4]
        if self.movement is Movement.RIGHT:
            return _APPROACHES[(i + 3) % 4]
        return _APPROACHES[(i + 1) % 4]


@dataclass(frozen=True)
class IntersectionGeometry:
    total_lanes: int = 2

    def __post_init__(self):
        if self.total_lanes not in VALID_TOTAL_LANES:
            raise InvalidInput(
                f"total_lanes must be one of {VALID_TOTAL_LANES}, got {self.total_lanes}"
            )

    @property
    def lanes_per_approach(self) -> int:
        return self.total_lanes // 2

    def directions(self) -> list[PathDirection]:
        return [
            PathDirection(a, m, lane)
            for a in _APPROACHES
            for m in Movement
            for lane in range(self.lanes_per_approach)
        ]

    def validate(self, d: PathDirection) -> None:
        if not isinstance(d.approach, Approach) or not isinstance(d.movement, Movement):
            raise InvalidDirection(f"invalid direction {d!r}")
        if not 0 <= d.entry_lane < self.lanes_per_approach:
            raise InvalidDirection(
                f"entry_lane {d.entry_lane} outside 0..{self.lanes_per_approach - 1}"
            )


def max_batch(geometry: IntersectionGeometry) -> int:
    """Most vehicles that can enter together: one per inbound lane."""
    return 4 * geometry.lanes_per_approach


def quorum(n_total: int) -> int:
    """Strict majority of ``n_total`` vehicles."""
    if n_total < 1:
        raise InvalidInput(f"quorum needs at least one vehicle, got {n_total}")
    return n_total // 2 + 1


def required_votes(n_total: int, mode: QuorumMode = QuorumMode.MAJORITY) -> int:
    if mode is QuorumMode.FULL:
        if n_total < 1:
            raise InvalidInput(f"quorum needs at least one vehicle, got {n_total}")
        return n_total
    return quorum(n_total)


# ---------------------------------------------------------------------------
# polylines

Point = tuple[Fraction, Fraction]


def _lane_offset(lane: int, lanes_per_approach: int) -> Fraction:
    # distance of the lane centre from the road centre line
    return Fraction(2 * lane + 1, 4 * lanes_per_approach)


def _inbound_axis(approach: Approach, offset: Fraction) -> tuple[Point, Point]:
    """Entry point on the box edge and the heading for an inbound lane."""
    half = Fraction(1, 2)
    one, zero = Fraction(1), Fraction(0)
    if approach is Approach.NORTH:  # southbound keeps to the west half
        return (half - offset, one), (zero, -one)
    if approach is Approach.SOUTH:  # northbound, east half
        return (half + offset, zero), (zero, one)
    if approach is Approach.EAST:  # westbound, north half
        return (one, half + offset), (-one, zero)
    return (zero, half - offset), (one, zero)  # eastbound, south half


def path_polyline(d: PathDirection, lanes_per_approach: int) -> tuple[Point, ...]:
    """Polyline swept by movement ``d`` across the unit box."""
    offset = _lane_offset(d.entry_lane, lanes_per_approach)
    start, _ = _inbound_axis(d.approach, offset)
    exit_arm = d.exit_approach()
    # Outbound lanes on the exit arm are collinear with the inbound lanes of
    # the arm opposite to it (same flow direction, same offset).
    mirror = _APPROACHES[(_APPROACHES.index(exit_arm) + 2) % 4]
    out_start, out_heading = _inbound_axis(mirror, offset)
    if d.movement is Movement.STRAIGHT:
        end = _exit_point(out_start, out_heading)
        return (start, end)
    # pivot: intersection of the inbound axis and the outbound axis
    if out_heading[0] == 0:  # outbound runs along y, so x is fixed
        pivot = (out_start[0], start[1])
    else:
        pivot = (start[0], out_start[1])
    end = _exit_point(out_start, out_heading)
    return (start, pivot, end)


def _exit_point(origin: Point, heading: tuple[Fraction, Fraction]) -> Point:
    x, y = origin
    dx, dy = heading
    if dx > 0:
        return (Fraction(1), y)
    if dx < 0:
        return (Fraction(0), y)
    if dy > 0:
        return (x, Fraction(1))
    return (x, Fraction(0))


def _orient(p: Point, q: Point, r: Point) -> int:
    v = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    return (v > 0) - (v < 0)


def _on_segment(p: Point, q: Point, r: Point) -> bool:
    # r collinear with p-q: does it lie within the bounding box of p-q?
    return min(p[0], q[0]) <= r[0] <= max(p[0], q[0]) and min(p[1], q[1]) <= r[1] <= max(
        p[1], q[1]
    )


def segments_touch(p1: Point, p2: Point, q1: Point, q2: Point) -> bool:
    o1, o2 = _orient(p1, p2, q1), _orient(p1, p2, q2)
    o3, o4 = _orient(q1, q2, p1), _orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and _on_segment(p1, p2, q1):
        return True
    if o2 == 0 and _on_segment(p1, p2, q2):
        return True
    if o3 == 0 and _on_segment(q1, q2, p1):
        return True
    if o4 == 0 and _on_segment(q1, q2, p2):
        return True
    return False


def polylines_touch(a: tuple[Point, ...], b: tuple[Point, ...]) -> bool:
    for i in range(len(a) - 1):
        for j in range(len(b) - 1):
            if segments_touch(a[i], a[i + 1], b[j], b[j + 1]):
                return True
    return False


@lru_cache(maxsize=None)
def _conflicts_cached(a: PathDirection, b: PathDirection, lanes: int) -> bool:
    return polylines_touch(path_polyline(a, lanes), path_polyline(b, lanes))


def conflicts(
    a: PathDirection, b: PathDirection, geometry: IntersectionGeometry | None = None
) -> bool:
    """True iff movements ``a`` and ``b`` cannot share the box at the same time.

    When ``geometry`` is omitted the smallest intersection that can host both
    entry lanes is assumed.
    """
    for d in (a, b):
        if not isinstance(d, PathDirection) or not isinstance(d.approach, Approach) or not isinstance(
            d.movement, Movement
        ):
            raise InvalidDirection(f"invalid direction {d!r}")
    if geometry is None:
        lanes = max(a.entry_lane, b.entry_lane) + 1
        if lanes > 4:
            raise InvalidDirection("entry lane beyond an eight-lane intersection")
    else:
        geometry.validate(a)
        geometry.validate(b)
        lanes = geometry.lanes_per_approach
    # canonical ordering keeps the cache (and the answer) symmetric
    if b.label < a.label:
        a, b = b, a
    return _conflicts_cached(a, b, lanes)


def conflict_matrix(geometry: IntersectionGeometry) -> tuple[list[str], list[list[int]]]:
    dirs = geometry.directions()
    labels = [d.label for d in dirs]
    rows = [[int(conflicts(a, b, geometry)) for b in dirs] for a in dirs]
    return labels, rows


def conflict_matrix_csv(geometry: IntersectionGeometry) -> str:
    """Conflict table as CSV; the first column holds row labels."""
    labels, rows = conflict_matrix(geometry)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["direction", *labels])
    for label, row in zip(labels, rows):
        writer.writerow([label, *row])
    return buf.getvalue()
