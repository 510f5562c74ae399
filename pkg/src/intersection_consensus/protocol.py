"""Per-vehicle two-phase voting state machine.

A cycle runs in two phases. In the candidate phase every connected vehicle
votes for itself, asks every peer for a vote and grants its own single
outgoing vote to the first request it sees. A vehicle holding a strict
majority of the candidate votes becomes a final candidate and asks every peer
to accept it as leader; a peer accepts a final candidate that outranks it and
becomes a follower. Rank is (more candidate votes, earlier election time,
smaller plate).

Handlers mutate one :class:`VehicleInfo` and never block. The event engine
serialises all events of one vehicle, which is what makes each handler
atomic.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from .geometry import PathDirection, QuorumMode, required_votes


class ProtocolError(Exception):
    pass


class NotEnoughVehicles(ProtocolError):
    pass


class NilRequest(ProtocolError):
    def __init__(self):
        super().__init__("received nil request")


class IllegalState(ProtocolError):
    pass


class ElectionStatus(enum.Enum):
    INIT_CANDIDATE = "InitCandidate"
    FIN_CANDIDATE = "FinCandidate"
    FOLLOWER = "Follower"
    LEADER = "Leader"


LEGAL_TRANSITIONS = {
    ElectionStatus.INIT_CANDIDATE: {ElectionStatus.FIN_CANDIDATE, ElectionStatus.FOLLOWER},
    ElectionStatus.FIN_CANDIDATE: {ElectionStatus.LEADER, ElectionStatus.FOLLOWER},
    ElectionStatus.FOLLOWER: set(),
    ElectionStatus.LEADER: set(),
}


class Verdict(enum.Enum):
    ACKNOWLEDGED = "Acknowledged"
    IGNORED = "Ignored"


class MessageKind(enum.Enum):
    CANDIDATE_VOTE_REQUEST = "CandidateVoteRequest"
    CANDIDATE_VOTE_RESPONSE = "CandidateVoteResponse"
    ELECTION_VOTE_REQUEST = "ElectionVoteRequest"
    ELECTION_VOTE_RESPONSE = "ElectionVoteResponse"
    PASS_PERMIT = "PassPermit"
    PASSAGE_ANNOUNCEMENT = "PassageAnnouncement"


class CandidateOutcome(enum.Enum):
    STILL_CANDIDATE = "StillCandidate"
    BECAME_FIN_CANDIDATE = "BecameFinCandidate"
    DROPPED = "Dropped"


class ElectionOutcome(enum.Enum):
    STILL_FIN_CANDIDATE = "StillFinCandidate"
    BECAME_LEADER = "BecameLeader"
    DEMOTED = "Demoted"
    DROPPED = "Dropped"


class TimeoutDecision(enum.Enum):
    CONTINUE_CONSENSUS = "ContinueConsensus"
    SWITCH_TO_VISION = "SwitchToVision"


@dataclass(frozen=True)
class ProtocolMessage:
    """One protocol message. Fields not used by a kind stay ``None``.

    Requests and responses carry the sender's vote snapshot
    (``received_votes``, ``election_time``, ``election_status``); ``plate`` is
    the plate the snapshot is ranked under, i.e. the sender's own plate or the
    plate of the final candidate it follows.
    """

    kind: MessageKind
    sender: str
    plate: str | None = None
    direction: PathDirection | None = None
    received_votes: int | None = None
    election_time: int | None = None
    election_status: ElectionStatus | None = None
    verdict: Verdict | None = None
    direction_status: bool | None = None

    def rank(self) -> tuple:
        return (-(self.received_votes or 0), self.election_time or 0, self.plate or "")


@dataclass
class VehicleInfo:
    address: str
    plate: str
    direction: PathDirection
    sent_votes: int = 0
    received_votes: int = 0
    election_received_votes: int = 0
    no_collision_list: set[str] = field(default_factory=set)
    election_status: ElectionStatus = ElectionStatus.INIT_CANDIDATE
    election_time: int = 0
    # plate the (received_votes, election_time) pair belongs to; differs from
    # ``plate`` once the vehicle adopted a final candidate's snapshot
    election_plate: str = ""
    # a vehicle accepts at most one final candidate per cycle
    election_vote_granted: bool = False
    ack_times: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.election_plate:
            self.election_plate = self.plate

    def rank(self) -> tuple:
        return (-self.received_votes, self.election_time, self.election_plate)

    def snapshot(self, kind: MessageKind, **extra) -> ProtocolMessage:
        return ProtocolMessage(
            kind=kind,
            sender=self.address,
            plate=self.election_plate,
            direction=self.direction,
            received_votes=self.received_votes,
            election_time=self.election_time,
            election_status=self.election_status,
            **extra,
        )

    def transition(self, new: ElectionStatus) -> None:
        if new is self.election_status:
            return
        if new not in LEGAL_TRANSITIONS[self.election_status]:
            raise IllegalState(f"{self.election_status.value} -> {new.value}")
        self.election_status = new

    def adopt(self, msg: ProtocolMessage) -> None:
        self.received_votes = msg.received_votes
        self.election_time = msg.election_time
        self.election_plate = msg.plate

    def reset(self) -> None:
        """Fresh state for a re-consensus round."""
        self.sent_votes = 0
        self.received_votes = 0
        self.election_received_votes = 0
        self.no_collision_list = set()
        self.election_status = ElectionStatus.INIT_CANDIDATE
        self.election_time = 0
        self.election_plate = self.plate
        self.election_vote_granted = False
        self.ack_times = {}


def start_cycle(
    info: VehicleInfo,
    peers: Iterable[str],
    jitter_bound: int,
    rng: random.Random,
    cycle_start: int = 0,
) -> list[tuple[int, str, ProtocolMessage]]:
    """Cast the self-vote and schedule one candidate request per peer.

    Returns ``(send_time, destination, message)`` triples. Each send offset is
    drawn uniformly from ``[0, jitter_bound]`` microseconds.
    """
    peers = list(peers)
    if info.election_status is not ElectionStatus.INIT_CANDIDATE:
        raise IllegalState("a cycle starts from InitCandidate")
    if not peers:
        raise NotEnoughVehicles("no peers to ask for votes; use the vision fallback")
    info.received_votes = 1
    info.election_time = cycle_start
    out = []
    for peer in peers:
        offset = rng.randint(0, jitter_bound) if jitter_bound > 0 else 0
        out.append(
            (
                cycle_start + offset,
                peer,
                info.snapshot(MessageKind.CANDIDATE_VOTE_REQUEST),
            )
        )
    return out


def handle_candidate_vote_request(
    info: VehicleInfo,
    req: ProtocolMessage | None,
    valid_directions: set[PathDirection] | Callable[[PathDirection], bool],
) -> ProtocolMessage:
    """Grant the single outgoing candidate vote to the first requester.

    ``valid_directions`` is either the set of directions compatible with this
    vehicle's own path or a predicate answering the same question.
    """
    if req is None:
        raise NilRequest()
    if info.sent_votes == 0:
        info.sent_votes = 1
        if callable(valid_directions):
            ok = bool(valid_directions(req.direction))
        else:
            ok = req.direction in valid_directions
        return info.snapshot(
            MessageKind.CANDIDATE_VOTE_RESPONSE,
            verdict=Verdict.ACKNOWLEDGED,
            direction_status=ok,
        )
    return info.snapshot(MessageKind.CANDIDATE_VOTE_RESPONSE, verdict=Verdict.IGNORED)


def on_candidate_vote_response(
    info: VehicleInfo,
    resp: ProtocolMessage,
    now: int,
    n_total: int,
    mode: QuorumMode = QuorumMode.MAJORITY,
) -> CandidateOutcome:
    if info.election_status is not ElectionStatus.INIT_CANDIDATE:
        return CandidateOutcome.DROPPED
    if resp.verdict is not Verdict.ACKNOWLEDGED:
        return CandidateOutcome.STILL_CANDIDATE
    info.received_votes += 1
    info.election_time = max(info.election_time, now)
    if resp.direction_status:
        info.no_collision_list.add(resp.sender)
        info.ack_times[resp.sender] = now
    if info.received_votes >= required_votes(n_total, mode):
        info.transition(ElectionStatus.FIN_CANDIDATE)
        return CandidateOutcome.BECAME_FIN_CANDIDATE
    return CandidateOutcome.STILL_CANDIDATE


def election_request(info: VehicleInfo) -> ProtocolMessage:
    if info.election_status is not ElectionStatus.FIN_CANDIDATE:
        raise IllegalState("only a FinCandidate asks for leader votes")
    return info.snapshot(MessageKind.ELECTION_VOTE_REQUEST)


def handle_election_vote_request(info: VehicleInfo, req: ProtocolMessage | None) -> ProtocolMessage:
    """Accept or refuse a final candidate.

    The earlier election time wins a tie on votes, so the candidate that
    reached quorum first is preferred. A vehicle that already accepted a
    candidate, or that is itself leader, refuses everyone else.
    """
    if req is None:
        raise NilRequest()

    def ignored():
        return info.snapshot(MessageKind.ELECTION_VOTE_RESPONSE, verdict=Verdict.IGNORED)

    if req.election_status is ElectionStatus.FOLLOWER:
        return ignored()
    if info.election_status is ElectionStatus.LEADER or info.election_vote_granted:
        return ignored()
    if req.rank() < info.rank():
        info.transition(ElectionStatus.FOLLOWER)
        info.adopt(req)
        info.election_vote_granted = True
        return info.snapshot(MessageKind.ELECTION_VOTE_RESPONSE, verdict=Verdict.ACKNOWLEDGED)
    return ignored()


def on_election_vote_response(
    info: VehicleInfo,
    resp: ProtocolMessage,
    n_total: int,
    mode: QuorumMode = QuorumMode.MAJORITY,
) -> ElectionOutcome:
    """Count a leader vote, or step down when the responder outranks us.

    A refusal carrying a weaker snapshot (the responder is committed to some
    lower-ranked candidate) costs the vote but not the candidacy.
    """
    if info.election_status is not ElectionStatus.FIN_CANDIDATE:
        return ElectionOutcome.DROPPED
    if resp.verdict is Verdict.ACKNOWLEDGED:
        info.election_received_votes += 1
        if 1 + info.election_received_votes >= required_votes(n_total, mode):
            info.transition(ElectionStatus.LEADER)
            return ElectionOutcome.BECAME_LEADER
        return ElectionOutcome.STILL_FIN_CANDIDATE
    if resp.election_status is ElectionStatus.LEADER or resp.rank() < info.rank():
        info.transition(ElectionStatus.FOLLOWER)
        info.adopt(resp)
        return ElectionOutcome.DEMOTED
    return ElectionOutcome.STILL_FIN_CANDIDATE


def issue_pass_permits(
    leader: VehicleInfo,
    conflict_fn: Callable[[PathDirection, PathDirection], bool],
    directions: Mapping[str, PathDirection],
    plates: Mapping[str, str] | None = None,
) -> list[tuple[str, ProtocolMessage]]:
    """Permits for no-collision-list members that can cross with the leader.

    Members are taken greedily by acknowledgement time (ties by plate) and
    kept only if they conflict with nobody already crossing. Returns
    ``(recipient, permit)`` pairs.
    """
    if leader.election_status is not ElectionStatus.LEADER:
        raise IllegalState("only the leader issues pass permits")
    plates = plates or {}
    order = sorted(
        leader.no_collision_list,
        key=lambda a: (leader.ack_times.get(a, 0), plates.get(a, a)),
    )
    crossing = [leader.direction]
    permits = []
    for addr in order:
        d = directions[addr]
        if any(conflict_fn(d, other) for other in crossing):
            continue
        crossing.append(d)
        permits.append(
            (addr, ProtocolMessage(
                kind=MessageKind.PASS_PERMIT,
                sender=leader.address,
                plate=leader.plate,
                direction=d,
                election_status=ElectionStatus.LEADER,
            ))
        )
    return permits


def on_timeout(t_consensus: int, t_vision: int) -> TimeoutDecision:
    if t_consensus >= t_vision:
        return TimeoutDecision.SWITCH_TO_VISION
    return TimeoutDecision.CONTINUE_CONSENSUS
