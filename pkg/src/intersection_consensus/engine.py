"""Discrete-event execution of one voting cycle.

A cycle is a sequence of rounds. Every round resets all connected vehicles to
InitCandidate. The first round starts everybody at the cycle start; later
rounds start each vehicle after its own random backoff in
``[0, backoff_bound]`` so that one of them usually asks first. A round is
abandoned, and the next begun after ``restart_gap``, as soon as no vehicle
can still become leader given the requests it is waiting on.

Each vehicle handles one delivered message at a time; handling takes
``handling_time`` and the handler's effects happen when it finishes.

With ``round_timeout`` set, a round that has produced no leader by then is
abandoned the same way, which is how a lost message stops stalling it.

A lost message is gone unless ``retransmit_timeout`` is set, in which case
the sender resends it after that delay, doubling the delay on every further
loss. Without resending, a loss that leaves a candidate waiting stalls the
round until the vision deadline. Requests to a crashed vehicle fail fast
with :class:`~.agents.Unreachable`.
"""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Callable, Mapping

from . import net
from .agents import CavAgent, Delivery, Unreachable
from .geometry import PathDirection, QuorumMode, conflicts, required_votes
from .protocol import ElectionStatus, MessageKind, VehicleInfo


@dataclass(frozen=True)
class Participant:
    address: str
    plate: str
    direction: PathDirection
    is_cav: bool = True
    crashed: bool = False


@dataclass
class TraceEvent:
    time: int
    what: str
    src: str
    dst: str
    kind: str

    def line(self) -> str:
        return f"{self.time} {self.what} {self.src}->{self.dst} {self.kind}"


@dataclass
class VotingResult:
    leader: str | None
    leader_time: int | None
    end_time: int
    rounds: int
    timed_out: bool
    # (address, delivery time) of permits that reached their recipient
    permits: list[tuple[str, int]] = field(default_factory=list)
    leaders: list[str] = field(default_factory=list)
    messages_sent: int = 0
    trace: list[TraceEvent] = field(default_factory=list)


class EventQueue:
    """Time-ordered queue; equal times pop in insertion order."""

    def __init__(self):
        self._heap: list = []
        self._seq = itertools.count()

    def push(self, time: int, item) -> None:
        heapq.heappush(self._heap, (time, next(self._seq), item))

    def pop(self):
        time, _, item = heapq.heappop(self._heap)
        return time, item

    def clear(self) -> None:
        self._heap.clear()

    def __len__(self) -> int:
        return len(self._heap)


@dataclass(frozen=True)
class _Send:
    src: str
    dst: str
    msg: object
    attempt: int = 0


@dataclass(frozen=True)
class _Start:
    address: str


def run_voting_cycle(
    participants: list[Participant],
    *,
    start: int,
    t_vision: int,
    delay_model: net.DelayModel,
    rng: random.Random,
    jitter_bound: int = 5000,
    mode: QuorumMode = QuorumMode.MAJORITY,
    conflict_fn: Callable[[PathDirection, PathDirection], bool] = conflicts,
    restart_gap: int = 0,
    backoff_bound: int = 0,
    handling_time: int = 0,
    retransmit_timeout: int | None = None,
    round_timeout: int | None = None,
    stop_on_leader: bool = True,
    record_trace: bool = False,
    max_rounds: int | None = None,
) -> VotingResult:
    """Run rounds until a leader is elected or ``start + t_vision`` is reached.

    ``participants`` lists every vehicle in the box. Only connected vehicles
    (CAVs, crashed or not) are addressable; every vehicle counts toward the
    quorum. With ``stop_on_leader=False`` a round is drained to the end so
    that a second leader, if the protocol ever allowed one, would show up in
    ``leaders``.
    """
    n_total = len(participants)
    deadline = start + t_vision
    connected = [p for p in participants if p.is_cav]
    crashed = {p.address for p in connected if p.crashed}
    directions: Mapping[str, PathDirection] = {p.address: p.direction for p in participants}
    plates = {p.address: p.plate for p in participants}
    agents: dict[str, CavAgent] = {}
    for p in connected:
        if p.crashed:
            continue
        agents[p.address] = CavAgent(
            info=VehicleInfo(p.address, p.plate, p.direction),
            peers=[q.address for q in connected if q.address != p.address],
            n_total=n_total,
            mode=mode,
            conflict_fn=conflict_fn,
            directions=directions,
            plates=plates,
        )
    result = VotingResult(None, None, deadline, 0, True)
    trace = result.trace if record_trace else None
    # silent human drivers are visible to everyone, so a quorum that the
    # radios cannot reach even in principle is never attempted
    if len(agents) < 1 or len(connected) < max(2, required_votes(n_total, mode)):
        return result

    queue = EventQueue()
    round_start = start
    while round_start < deadline:
        if max_rounds is not None and result.rounds >= max_rounds:
            break
        result.rounds += 1
        queue.clear()
        busy = dict.fromkeys(agents, 0)
        for addr in sorted(agents):
            offset = rng.randint(0, backoff_bound) if result.rounds > 1 and backoff_bound else 0
            agents[addr].reset()
            queue.push(round_start + offset, _Start(addr))
        # a vehicle that cannot lead never recovers within the round, and only
        # the vehicle handling an event can change, so track the rest
        viable = set(agents)
        dead_at = None
        give_up = deadline
        if round_timeout:
            give_up = min(deadline, round_start + round_timeout)
        while len(queue):
            now, item = queue.pop()
            if now >= give_up:
                if give_up < deadline:
                    # election timer: nobody won in time, start over
                    dead_at = give_up
                break
            if isinstance(item, _Start):
                if agents[item.address].status is not ElectionStatus.INIT_CANDIDATE:
                    # already following somebody who asked first
                    continue
                starter = agents[item.address]
                for send_time, dst, msg in starter.start(now, rng, jitter_bound):
                    queue.push(send_time, _Send(item.address, dst, msg))
                if not starter.can_still_lead():
                    viable.discard(starter.address)
                    if not viable:
                        dead_at = now
                        break
                continue
            if isinstance(item, _Send):
                _transmit(item, now, delay_model, queue, crashed, result, trace, retransmit_timeout)
                continue
            if isinstance(item, _Arrival):
                # one message at a time per vehicle
                done = max(now, busy[item.event.dst]) + handling_time
                busy[item.event.dst] = done
                queue.push(done, item.event)
                continue
            agent = agents[item.dst]
            if trace is not None:
                kind = item.msg.kind.value if isinstance(item, Delivery) else "Unreachable"
                src = item.src if isinstance(item, Delivery) else item.peer
                trace.append(TraceEvent(now, "recv", src, item.dst, kind))
            for send_time, dst, msg in agent.on_event(item):
                queue.push(send_time, _Send(agent.address, dst, msg))
            if agent.status is ElectionStatus.LEADER and agent.address not in result.leaders:
                result.leaders.append(agent.address)
                if result.leader is None:
                    result.leader = agent.address
                    result.leader_time = now
                    result.timed_out = False
            if result.leader is not None:
                if stop_on_leader:
                    # let the permits go out; they are already queued as sends
                    _flush_permits(queue, delay_model, crashed, result, trace)
                    result.end_time = result.leader_time
                    return result
                continue
            if not agent.can_still_lead():
                viable.discard(agent.address)
                if not viable:
                    dead_at = now
                    break
        if result.leader is not None:
            result.end_time = result.leader_time
            return result
        if dead_at is None and give_up < deadline:
            # everything left in flight was lost; the timer still fires
            dead_at = give_up
        if dead_at is None:
            # nothing left to deliver but someone is still waiting on a lost
            # message, or the deadline passed: the vision system decides
            break
        round_start = dead_at + restart_gap
    result.end_time = deadline
    return result


@dataclass(frozen=True)
class _Arrival:
    event: object


def _transmit(item: _Send, now, delay_model, queue, crashed, result, trace, rto) -> None:
    env = net.send(delay_model, item.msg, item.src, item.dst, now)
    result.messages_sent += 1
    if trace is not None:
        what = "lost" if env.lost else "send"
        trace.append(TraceEvent(now, what, item.src, item.dst, item.msg.kind.value))
    if env.lost:
        if rto:
            # the stream layer resends after its retransmission timer, which
            # doubles on every further loss
            retry = _Send(item.src, item.dst, item.msg, item.attempt + 1)
            queue.push(now + rto * (2 ** item.attempt), retry)
        return
    if item.dst in crashed:
        if item.msg.kind in (MessageKind.CANDIDATE_VOTE_REQUEST, MessageKind.ELECTION_VOTE_REQUEST):
            back = env.deliver_time + delay_model.draw_delay()
            queue.push(back, Unreachable(item.src, item.dst, item.msg.kind, back))
        return
    queue.push(
        env.deliver_time,
        _Arrival(Delivery(item.dst, item.src, item.msg, env.deliver_time)),
    )


def _flush_permits(queue, delay_model, crashed, result, trace) -> None:
    # Only the sends issued at the leader's promotion matter now: permits and
    # the announcement. Everything else in flight belongs to a finished round.
    pending = []
    while len(queue):
        t, item = queue.pop()
        if isinstance(item, _Send) and item.msg.kind in (
            MessageKind.PASS_PERMIT,
            MessageKind.PASSAGE_ANNOUNCEMENT,
        ):
            pending.append((t, item))
    for t, item in pending:
        env = net.send(delay_model, item.msg, item.src, item.dst, t)
        result.messages_sent += 1
        if trace is not None:
            trace.append(
                TraceEvent(t, "lost" if env.lost else "send", item.src, item.dst, item.msg.kind.value)
            )
        if item.msg.kind is MessageKind.PASS_PERMIT and not env.lost and item.dst not in crashed:
            result.permits.append((item.dst, env.deliver_time))
