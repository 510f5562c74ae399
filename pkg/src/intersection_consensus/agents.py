"""Vehicle behaviour around the protocol: CAVs, silent HVs and the vision system."""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .geometry import PathDirection, QuorumMode, required_votes
from .protocol import (
    CandidateOutcome,
    ElectionOutcome,
    ElectionStatus,
    MessageKind,
    ProtocolMessage,
    VehicleInfo,
    election_request,
    handle_candidate_vote_request,
    handle_election_vote_request,
    issue_pass_permits,
    on_candidate_vote_response,
    on_election_vote_response,
    start_cycle,
)

HV_DECISION_DELAY_US = 3_000_000
T_VISION_US = 500_000


class DuplicatePlate(ValueError):
    pass


class RoutingError(RuntimeError):
    pass


class Kind(enum.Enum):
    CAV = "CAV"
    HV = "HV"


@dataclass(frozen=True)
class AgentKind:
    kind: Kind
    hv_decision_delay: int = 0

    @classmethod
    def cav(cls) -> "AgentKind":
        return cls(Kind.CAV)

    @classmethod
    def hv(cls, delay: int = HV_DECISION_DELAY_US) -> "AgentKind":
        return cls(Kind.HV, delay)

    @property
    def is_cav(self) -> bool:
        return self.kind is Kind.CAV


@dataclass(frozen=True)
class VisionModel:
    t_vision: int = T_VISION_US
    parallel: bool = True

    def __post_init__(self):
        if self.t_vision <= 0:
            raise ValueError("t_vision must be positive")

    def decision_time(self, start: int, n_plates: int) -> int:
        # plates are read in parallel: the cost does not grow with the count
        return start + self.t_vision


def vision_rank(plates: list[str]) -> list[str]:
    """Crossing order by byte-wise comparison of the upper-cased plates."""
    if not plates:
        raise ValueError("no plates to rank")
    keys = [p.upper().encode("utf-8") for p in plates]
    if len(set(keys)) != len(keys):
        raise DuplicatePlate("license plates must be unique")
    return [p for _, p in sorted(zip(keys, plates))]


class CycleOutcome(enum.Enum):
    CYCLE_COMPLETE = "CycleComplete"
    RE_CONSENSUS = "ReConsensus"


def observe_passage(passed: list[str]) -> CycleOutcome:
    """A cycle is over once somebody has physically cleared the box."""
    return CycleOutcome.CYCLE_COMPLETE if passed else CycleOutcome.RE_CONSENSUS


# ---------------------------------------------------------------------------
# agents


@dataclass(frozen=True)
class Delivery:
    dst: str
    src: str
    msg: ProtocolMessage
    time: int


@dataclass(frozen=True)
class Unreachable:
    """The transport could not reach ``peer``; the request will never be answered."""

    dst: str
    peer: str
    kind: MessageKind
    time: int


Outgoing = tuple[int, str, ProtocolMessage]  # (send_time, destination, message)


class HvAgent:
    """Human driver: no radio, never answers."""

    def __init__(self, address: str, plate: str, direction: PathDirection,
                 kind: AgentKind | None = None):
        self.address = address
        self.plate = plate
        self.direction = direction
        self.kind = kind or AgentKind.hv()
        self.messages_sent = 0

    def on_event(self, event) -> list[Outgoing]:
        return []


@dataclass
class CavAgent:
    info: VehicleInfo
    peers: list[str]
    n_total: int
    mode: QuorumMode = QuorumMode.MAJORITY
    conflict_fn: Callable[[PathDirection, PathDirection], bool] | None = None
    directions: Mapping[str, PathDirection] = field(default_factory=dict)
    plates: Mapping[str, str] = field(default_factory=dict)
    pending_candidate: set[str] = field(default_factory=set)
    pending_election: set[str] = field(default_factory=set)
    permit_time: int | None = None
    leader_time: int | None = None
    messages_sent: int = 0
    permits: list[tuple[str, ProtocolMessage]] = field(default_factory=list)
    started: bool = False

    @property
    def address(self) -> str:
        return self.info.address

    @property
    def status(self) -> ElectionStatus:
        return self.info.election_status

    def _compatible(self, other: PathDirection | None) -> bool:
        if other is None or self.conflict_fn is None:
            return False
        return not self.conflict_fn(self.info.direction, other)

    def reset(self) -> None:
        """Back to a fresh InitCandidate that has not yet asked anybody."""
        self.info.reset()
        self.pending_candidate = set(self.peers)
        self.pending_election = set()
        self.permit_time = None
        self.leader_time = None
        self.permits = []
        self.started = False

    def start(self, now: int, rng: random.Random, jitter_bound: int) -> list[Outgoing]:
        self.pending_candidate = set(self.peers)
        self.started = True
        out = start_cycle(self.info, self.peers, jitter_bound, rng, now)
        self.messages_sent += len(out)
        return out

    def can_still_lead(self) -> bool:
        """False once this vehicle has no path to leadership left this round."""
        s = self.info.election_status
        if s is ElectionStatus.LEADER:
            return True
        if s is ElectionStatus.FOLLOWER:
            return False
        if s is ElectionStatus.INIT_CANDIDATE:
            if not self.started:
                # its own round has not begun yet, it will ask everybody
                return True
            need = required_votes(self.n_total, self.mode)
            return self.info.received_votes + len(self.pending_candidate) >= need
        need = required_votes(self.n_total, self.mode)
        return 1 + self.info.election_received_votes + len(self.pending_election) >= need

    def on_event(self, event) -> list[Outgoing]:
        if event.dst != self.address:
            raise RoutingError(f"event for {event.dst} delivered to {self.address}")
        if isinstance(event, Unreachable):
            if event.kind is MessageKind.CANDIDATE_VOTE_REQUEST:
                self.pending_candidate.discard(event.peer)
            elif event.kind is MessageKind.ELECTION_VOTE_REQUEST:
                self.pending_election.discard(event.peer)
            return []
        out = self._dispatch(event.msg, event.time)
        self.messages_sent += len(out)
        return out

    def _dispatch(self, msg: ProtocolMessage, now: int) -> list[Outgoing]:
        kind = msg.kind
        if kind is MessageKind.CANDIDATE_VOTE_REQUEST:
            resp = handle_candidate_vote_request(self.info, msg, self._compatible)
            return [(now, msg.sender, resp)]
        if kind is MessageKind.CANDIDATE_VOTE_RESPONSE:
            self.pending_candidate.discard(msg.sender)
            outcome = on_candidate_vote_response(self.info, msg, now, self.n_total, self.mode)
            if outcome is CandidateOutcome.BECAME_FIN_CANDIDATE:
                self.pending_election = set(self.peers)
                req = election_request(self.info)
                return [(now, p, req) for p in self.peers]
            return []
        if kind is MessageKind.ELECTION_VOTE_REQUEST:
            resp = handle_election_vote_request(self.info, msg)
            return [(now, msg.sender, resp)]
        if kind is MessageKind.ELECTION_VOTE_RESPONSE:
            self.pending_election.discard(msg.sender)
            outcome = on_election_vote_response(self.info, msg, self.n_total, self.mode)
            if outcome is ElectionOutcome.BECAME_LEADER:
                return self._lead(now)
            return []
        if kind is MessageKind.PASS_PERMIT:
            if self.permit_time is None:
                self.permit_time = now
            return []
        # PassageAnnouncement: informational, the vision system confirms it
        return []

    def _lead(self, now: int) -> list[Outgoing]:
        self.leader_time = now
        conflict_fn = self.conflict_fn or (lambda a, b: True)
        self.permits = issue_pass_permits(self.info, conflict_fn, self.directions, self.plates)
        out: list[Outgoing] = [(now, dst, permit) for dst, permit in self.permits]
        note = ProtocolMessage(
            kind=MessageKind.PASSAGE_ANNOUNCEMENT,
            sender=self.address,
            plate=self.info.plate,
            direction=self.info.direction,
            election_status=ElectionStatus.LEADER,
        )
        out.extend((now, p, note) for p in self.peers)
        return out
