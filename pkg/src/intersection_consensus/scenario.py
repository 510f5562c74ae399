"""Batch generation, cycle orchestration and metrics for whole scenarios.

A scenario pushes ``n_vehicles`` through the intersection in batches of
simultaneous entrants. Each batch is resolved by consensus cycles until every
member has crossed; the next batch enters once the previous one has cleared.

Cycle rules, by the number of vehicles still waiting:

* 1 vehicle: it goes (TrivialPass), no messages.
* 2 vehicles: plate ranking decides after ``t_vision`` (VisionFallback).
* 3 or more: vehicles vote if enough of them are connected to possibly form
  the required quorum; otherwise the plate ranking decides directly. A vote
  that has not produced a leader by ``t_vision`` is a timeout and the plate
  ranking decides.

A vision decision lets only the top-ranked vehicle cross; the leader of a
successful vote crosses together with every vehicle it issued a permit to.
Human drivers add ``hv_delay`` before their crossing.

Calibration of the timing defaults: message delays are Uniform(1 ms, 5 ms)
and request send offsets are Uniform(0, 5 ms). Each vehicle handles one
message at a time at ``handling_time`` (4 ms) per message. With these values
the two-lane all-CAV baseline lands at roughly 35 ms mean consensus time.
See ``README.md`` for the procedure.
"""

from __future__ import annotations

import csv
import io
import json
import math
import random
import statistics
import string
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

from . import net
from .agents import HV_DECISION_DELAY_US, T_VISION_US, AgentKind, VisionModel, vision_rank
from .engine import Participant, run_voting_cycle
from .geometry import (
    VALID_TOTAL_LANES,
    Approach,
    IntersectionGeometry,
    Movement,
    PathDirection,
    QuorumMode,
    conflicts,
    max_batch,
    required_votes,
)

PLATE_ALPHABET = string.ascii_uppercase + string.digits
PLATE_LENGTH = 7
US_PER_MS = 1000
US_PER_MINUTE = 60_000_000


class ConfigError(ValueError):
    """Invalid scenario setting. ``field`` names the offending setting."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class DecisionMode(Enum):
    VOTING = "Voting"
    VISION_FALLBACK = "VisionFallback"
    TRIVIAL_PASS = "TrivialPass"


@dataclass(frozen=True)
class ScenarioConfig:
    total_lanes: int = 2
    n_vehicles: int = 300
    cav_ratio: float = 1.0
    t_vision: int = T_VISION_US
    hv_delay: int = HV_DECISION_DELAY_US
    quorum_mode: QuorumMode = QuorumMode.MAJORITY
    delay: str = "uniform:1000,5000"
    loss: float = 0.0
    jitter_bound: int = 5_000
    passage_time: int = 2_000_000
    # batch sizes are uniform on [batch_min, batch_max]; 0 means max_batch
    batch_min: int = 1
    batch_max: int = 0
    # per-message handling cost at the receiving vehicle
    handling_time: int = 4_000
    # randomised start spread for re-consensus rounds
    backoff_bound: int = 20_000
    # resend delay for a lost message (doubles per loss); 0 disables resending
    retransmit_timeout: int = 0
    # give up on a round without a leader after this long; 0 disables
    round_timeout: int = 0
    seed: int = 0
    runs: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.total_lanes not in VALID_TOTAL_LANES:
            raise ConfigError("lanes", f"must be one of {VALID_TOTAL_LANES}, got {self.total_lanes}")
        if not isinstance(self.quorum_mode, QuorumMode):
            raise ConfigError("quorum", f"unknown quorum mode {self.quorum_mode!r}")
        _check_int("vehicles", self.n_vehicles, lo=1)
        if not isinstance(self.cav_ratio, (int, float)) or not 0.0 <= self.cav_ratio <= 1.0:
            raise ConfigError("cav_ratio", f"must lie in [0, 1], got {self.cav_ratio!r}")
        _check_int("t_vision", self.t_vision, lo=1)
        _check_int("hv_delay", self.hv_delay, lo=0)
        _check_int("jitter", self.jitter_bound, lo=0)
        _check_int("passage_time", self.passage_time, lo=1)
        _check_int("handling_time", self.handling_time, lo=0)
        _check_int("backoff", self.backoff_bound, lo=0)
        _check_int("retransmit", self.retransmit_timeout, lo=0)
        _check_int("round_timeout", self.round_timeout, lo=0)
        _check_int("seed", self.seed, lo=0, hi=2**64 - 1)
        _check_int("runs", self.runs, lo=1)
        cap = max_batch(IntersectionGeometry(self.total_lanes))
        _check_int("batch_min", self.batch_min, lo=1, hi=cap)
        _check_int("batch_max", self.batch_max, lo=0, hi=cap)
        if self.batch_max and self.batch_max < self.batch_min:
            raise ConfigError("batch_max", "must be 0 or at least batch_min")
        try:
            self.delay_model(0)
        except ValueError as exc:
            field_name = "loss" if "loss" in str(exc) else "delay"
            raise ConfigError(field_name, str(exc)) from None

    @property
    def geometry(self) -> IntersectionGeometry:
        return IntersectionGeometry(self.total_lanes)

    @property
    def batch_cap(self) -> int:
        return self.batch_max or max_batch(self.geometry)

    def delay_model(self, seed: int) -> net.DelayModel:
        return net.DelayModel.parse(self.delay, self.loss, seed)


def _check_int(name: str, value, lo: int | None = None, hi: int | None = None) -> None:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(name, f"must be an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(name, f"must be >= {lo}, got {value}")
    if hi is not None and value > hi:
        raise ConfigError(name, f"must be <= {hi}, got {value}")


# ---------------------------------------------------------------------------
# batches


@dataclass(frozen=True)
class BatchMember:
    address: str
    kind: AgentKind
    direction: PathDirection
    plate: str


@dataclass(frozen=True)
class Batch:
    index: int
    members: tuple[BatchMember, ...]
    # offset from the moment the previous batch cleared; arrivals are back to back
    arrival_time: int = 0


def random_plate(rng: random.Random) -> str:
    return "".join(rng.choice(PLATE_ALPHABET) for _ in range(PLATE_LENGTH))


def generate_batches(cfg: ScenarioConfig, rng: random.Random) -> list[Batch]:
    geometry = cfg.geometry
    slots = [(a, lane) for a in Approach for lane in range(geometry.lanes_per_approach)]
    movements = list(Movement)
    hv = AgentKind.hv(cfg.hv_delay)
    cav = AgentKind.cav()
    seen: set[str] = set()
    batches = []
    left = cfg.n_vehicles
    serial = 0
    while left > 0:
        size = min(rng.randint(cfg.batch_min, cfg.batch_cap), left)
        members = []
        for approach, lane in rng.sample(slots, size):
            direction = PathDirection(approach, rng.choice(movements), lane)
            kind = cav if rng.random() < cfg.cav_ratio else hv
            plate = random_plate(rng)
            while plate in seen:
                plate = random_plate(rng)
            seen.add(plate)
            members.append(BatchMember(f"v{serial:04d}", kind, direction, plate))
            serial += 1
        batches.append(Batch(len(batches), tuple(members)))
        left -= size
    return batches


# ---------------------------------------------------------------------------
# cycles


@dataclass
class CycleMetrics:
    run: int
    batch: int
    cycle: int
    start_time: int
    batch_size: int
    n_cav: int
    n_hv: int
    decision_mode: DecisionMode
    # time from cycle start to the decision, whatever made it
    decision_time: int
    # time to leader promotion; only for cycles settled by voting
    consensus_time: int | None
    leader: str | None
    co_passers: int
    re_consensus_rounds: int
    timed_out: bool
    passed: tuple[str, ...] = ()
    messages: int = 0

    def __post_init__(self):
        if self.decision_mode is DecisionMode.VOTING and self.consensus_time is None:
            raise ValueError("a voting decision needs a consensus time")


CSV_COLUMNS = (
    "run",
    "batch",
    "cycle",
    "start_us",
    "batch_size",
    "n_cav",
    "n_hv",
    "decision_mode",
    "decision_time_us",
    "consensus_time_us",
    "leader",
    "co_passers",
    "re_consensus_rounds",
    "timed_out",
    "passed",
    "messages",
)


def _row(m: CycleMetrics) -> list:
    return [
        m.run,
        m.batch,
        m.cycle,
        m.start_time,
        m.batch_size,
        m.n_cav,
        m.n_hv,
        m.decision_mode.value,
        m.decision_time,
        "" if m.consensus_time is None else m.consensus_time,
        m.leader or "",
        m.co_passers,
        m.re_consensus_rounds,
        int(m.timed_out),
        " ".join(m.passed),
        m.messages,
    ]


@dataclass
class Aggregates:
    runs: int
    n_vehicles: int
    cycles: int
    voting_cycles: int
    contested_cycles: int  # cycles with three or more vehicles
    timeouts: int
    fallbacks: int
    mean_consensus_ms: float | None
    p95_consensus_ms: float | None
    # every cycle, including one- and two-vehicle ones
    mean_decision_ms: float | None
    mean_contested_decision_ms: float | None
    timeout_rate: float
    fallback_rate: float
    throughput_vpm: float
    total_time_us: int


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    cycles: list[CycleMetrics]
    # simulated end time of each run
    run_times: list[int] = field(default_factory=list)

    def aggregates(self) -> Aggregates:
        return aggregate(self.cycles, self.run_times, self.config.n_vehicles)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for m in self.cycles:
            w.writerow(_row(m))
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"config": config_to_dict(self.config), "aggregates": asdict(self.aggregates())}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def aggregate(cycles: Sequence[CycleMetrics], run_times: Sequence[int], n_vehicles: int) -> Aggregates:
    voting = [m.consensus_time for m in cycles if m.decision_mode is DecisionMode.VOTING]
    contested = [m for m in cycles if m.batch_size >= 3]
    timeouts = sum(m.timed_out for m in contested)
    fallbacks = sum(m.decision_mode is DecisionMode.VISION_FALLBACK for m in contested)
    total = sum(run_times)
    return Aggregates(
        runs=len(run_times),
        n_vehicles=n_vehicles,
        cycles=len(cycles),
        voting_cycles=len(voting),
        contested_cycles=len(contested),
        timeouts=timeouts,
        fallbacks=fallbacks,
        mean_consensus_ms=_ms(statistics.fmean(voting)) if voting else None,
        p95_consensus_ms=_ms(percentile(voting, 95)) if voting else None,
        mean_decision_ms=_ms(statistics.fmean(m.decision_time for m in cycles)) if cycles else None,
        mean_contested_decision_ms=(
            _ms(statistics.fmean(m.decision_time for m in contested)) if contested else None
        ),
        timeout_rate=timeouts / len(contested) if contested else 0.0,
        fallback_rate=fallbacks / len(contested) if contested else 0.0,
        throughput_vpm=(n_vehicles * len(run_times)) * US_PER_MINUTE / total if total else 0.0,
        total_time_us=total,
    )


def _ms(us: float) -> float:
    return round(us / US_PER_MS, 6)


def percentile(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile."""
    if not values:
        raise ValueError("percentile of nothing")
    ordered = sorted(values)
    rank = max(1, math.ceil(q / 100 * len(ordered)))
    return ordered[rank - 1]


def run_once(cfg: ScenarioConfig, run: int = 0) -> tuple[list[CycleMetrics], int]:
    """One simulated run with seed ``cfg.seed + run``; returns cycles and end time."""
    seed = (cfg.seed + run) % 2**64
    master = random.Random(seed)
    batches = generate_batches(cfg, master)
    stream = master.getrandbits(64)
    vision = VisionModel(cfg.t_vision)
    geometry = cfg.geometry

    def conflict_fn(a, b):
        return conflicts(a, b, geometry)

    now = 0
    out: list[CycleMetrics] = []
    for batch in batches:
        now += batch.arrival_time
        waiting = list(batch.members)
        cycle = 0
        while waiting:
            # every cycle draws from its own substream, so configs that differ
            # only in timing see the same draws for the same cycle
            sub = random.Random(f"{stream}:{batch.index}:{cycle}")
            delay_model = cfg.delay_model(sub.getrandbits(64))
            m, cost = _run_cycle(cfg, waiting, now, vision, delay_model, sub, conflict_fn)
            m.run, m.batch, m.cycle = run, batch.index, cycle
            out.append(m)
            gone = set(m.passed)
            waiting = [v for v in waiting if v.address not in gone]
            now += m.decision_time + cost
            cycle += 1
    return out, now


def _run_cycle(cfg, waiting, start, vision, delay_model, rng, conflict_fn):
    """Settle one cycle. Returns the metrics and the crossing cost after the decision."""
    n = len(waiting)
    n_cav = sum(v.kind.is_cav for v in waiting)
    by_addr = {v.address: v for v in waiting}

    def crossing_cost(addresses):
        hv = any(not by_addr[a].kind.is_cav for a in addresses)
        return cfg.passage_time + (cfg.hv_delay if hv else 0)

    def metrics(mode, decision, **kw):
        return CycleMetrics(
            run=0, batch=0, cycle=0, start_time=start, batch_size=n, n_cav=n_cav,
            n_hv=n - n_cav, decision_mode=mode, decision_time=decision, **kw,
        )

    if n == 1:
        only = waiting[0].address
        m = metrics(DecisionMode.TRIVIAL_PASS, 0, consensus_time=None, leader=None,
                    co_passers=0, re_consensus_rounds=0, timed_out=False, passed=(only,))
        return m, crossing_cost([only])

    timed_out = False
    rounds = 0
    messages = 0
    if n >= 3 and n_cav >= required_votes(n, cfg.quorum_mode):
        participants = [
            Participant(v.address, v.plate, v.direction, is_cav=v.kind.is_cav) for v in waiting
        ]
        res = run_voting_cycle(
            participants,
            start=start,
            t_vision=cfg.t_vision,
            delay_model=delay_model,
            rng=rng,
            jitter_bound=cfg.jitter_bound,
            mode=cfg.quorum_mode,
            conflict_fn=conflict_fn,
            backoff_bound=cfg.backoff_bound,
            handling_time=cfg.handling_time,
            retransmit_timeout=cfg.retransmit_timeout or None,
            round_timeout=cfg.round_timeout or None,
        )
        rounds = res.rounds
        messages = res.messages_sent
        if res.leader is not None:
            permitted = tuple(sorted(a for a, _ in res.permits))
            passed = (res.leader, *permitted)
            elapsed = res.leader_time - start
            m = metrics(DecisionMode.VOTING, elapsed, consensus_time=elapsed, leader=res.leader,
                        co_passers=len(permitted), re_consensus_rounds=max(0, rounds - 1),
                        timed_out=False, passed=passed, messages=messages)
            return m, crossing_cost(passed)
        timed_out = True

    # plate ranking: the first plate crosses alone
    ranked = vision_rank([v.plate for v in waiting])
    first = next(v.address for v in waiting if v.plate == ranked[0])
    decision = vision.decision_time(start, n) - start
    m = metrics(DecisionMode.VISION_FALLBACK, decision, consensus_time=None, leader=None,
                co_passers=0, re_consensus_rounds=max(0, rounds - 1), timed_out=timed_out,
                passed=(first,), messages=messages)
    return m, crossing_cost([first])


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    cycles: list[CycleMetrics] = []
    times = []
    for run in range(cfg.runs):
        c, t = run_once(cfg, run)
        cycles.extend(c)
        times.append(t)
    return ScenarioResult(cfg, cycles, times)


def run_batch(configs: Iterable[ScenarioConfig], workers: int = 1) -> list[ScenarioResult]:
    """Run independent scenarios, optionally in worker processes. Order is preserved."""
    configs = list(configs)
    if workers <= 1 or len(configs) <= 1:
        return [run_scenario(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_scenario, configs))


# ---------------------------------------------------------------------------
# experiment suites

DEFAULT_RATIOS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
DEFAULT_T_VISIONS = (50_000, 300_000, 500_000)


@dataclass
class SweepResult:
    columns: tuple[str, ...]
    rows: list[dict]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_cell(r[c]) for c in self.columns])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"columns": list(self.columns), "rows": self.rows}, indent=2, sort_keys=True) + "\n"

    def where(self, **match) -> list[dict]:
        return [r for r in self.rows if all(r[k] == v for k, v in match.items())]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 6))
    return v


_AGG_COLUMNS = (
    "cycles",
    "contested_cycles",
    "timeouts",
    "timeout_rate",
    "fallback_rate",
    "mean_consensus_ms",
    "p95_consensus_ms",
    "mean_decision_ms",
    "mean_contested_decision_ms",
    "throughput_vpm",
)


def _agg_cells(a: Aggregates) -> dict:
    return {k: getattr(a, k) for k in _AGG_COLUMNS}


def run_quorum_comparison(base: ScenarioConfig, ratios: Sequence[float] = DEFAULT_RATIOS,
                          workers: int = 1) -> SweepResult:
    grid = [(r, q) for r in ratios for q in QuorumMode]
    results = run_batch([replace(base, cav_ratio=r, quorum_mode=q) for r, q in grid], workers)
    rows = [
        {"cav_ratio": r, "quorum": q.value, **_agg_cells(res.aggregates())}
        for (r, q), res in zip(grid, results)
    ]
    return SweepResult(("cav_ratio", "quorum", *_AGG_COLUMNS), rows)


def run_tvision_sweep(base: ScenarioConfig, t_visions: Sequence[int] = DEFAULT_T_VISIONS,
                      workers: int = 1) -> SweepResult:
    """Aggregates per t_vision plus a per-batch-size breakdown of timeouts."""
    results = run_batch([replace(base, t_vision=t) for t in t_visions], workers)
    rows = []
    for t, res in zip(t_visions, results):
        agg = res.aggregates()
        rows.append({"t_vision_ms": t // US_PER_MS, "batch_size": "all", **_agg_cells(agg)})
        sizes = sorted({m.batch_size for m in res.cycles if m.batch_size >= 3})
        for size in sizes:
            sub = [m for m in res.cycles if m.batch_size == size]
            a = aggregate(sub, res.run_times, res.config.n_vehicles)
            cells = _agg_cells(a)
            cells["throughput_vpm"] = None  # not meaningful for a slice
            rows.append({"t_vision_ms": t // US_PER_MS, "batch_size": str(size), **cells})
    return SweepResult(("t_vision_ms", "batch_size", *_AGG_COLUMNS), rows)


def run_lane_sweep(base: ScenarioConfig, lanes: Sequence[int] = VALID_TOTAL_LANES,
                   ratios: Sequence[float] = DEFAULT_RATIOS, workers: int = 1) -> SweepResult:
    grid = [(lane, r) for lane in lanes for r in ratios]
    results = run_batch([replace(base, total_lanes=lane, cav_ratio=r) for lane, r in grid], workers)
    rows = [
        {"lanes": lane, "cav_ratio": r, **_agg_cells(res.aggregates())}
        for (lane, r), res in zip(grid, results)
    ]
    return SweepResult(("lanes", "cav_ratio", *_AGG_COLUMNS), rows)


# ---------------------------------------------------------------------------
# config (de)serialisation

# external key -> ScenarioConfig attribute
CONFIG_KEYS = {
    "lanes": "total_lanes",
    "vehicles": "n_vehicles",
    "cav_ratio": "cav_ratio",
    "t_vision_ms": "t_vision",
    "hv_delay_ms": "hv_delay",
    "quorum": "quorum_mode",
    "delay": "delay",
    "loss": "loss",
    "jitter_ms": "jitter_bound",
    "passage_ms": "passage_time",
    "batch_min": "batch_min",
    "batch_max": "batch_max",
    "handling_ms": "handling_time",
    "backoff_ms": "backoff_bound",
    "retransmit_ms": "retransmit_timeout",
    "round_timeout_ms": "round_timeout",
    "seed": "seed",
    "runs": "runs",
}
_MS_KEYS = {"t_vision_ms", "hv_delay_ms", "jitter_ms", "passage_ms", "handling_ms",
            "backoff_ms", "retransmit_ms", "round_timeout_ms"}


def config_from_dict(values: dict, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Build a config from external keys (milliseconds for durations)."""
    kwargs = {}
    for key, raw in values.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(key, "unknown setting")
        attr = CONFIG_KEYS[key]
        if key in _MS_KEYS:
            if isinstance(raw, bool) or not isinstance(raw, (int, float)):
                raise ConfigError(key, f"must be a number of milliseconds, got {raw!r}")
            us = raw * US_PER_MS
            if us != int(us):
                raise ConfigError(key, f"finer than a microsecond: {raw!r}")
            kwargs[attr] = int(us)
        elif key == "quorum":
            try:
                kwargs[attr] = QuorumMode(str(raw).lower())
            except ValueError:
                raise ConfigError(key, f"must be majority or full, got {raw!r}") from None
        elif key in ("cav_ratio", "loss"):
            if isinstance(raw, bool) or not isinstance(raw, (int, float)):
                raise ConfigError(key, f"must be a number, got {raw!r}")
            kwargs[attr] = float(raw)
        elif key == "delay":
            if not isinstance(raw, str):
                raise ConfigError(key, f"must be a string like uniform:1000,5000, got {raw!r}")
            kwargs[attr] = raw
        else:
            kwargs[attr] = raw
    return replace(base or ScenarioConfig(), **kwargs)


def config_to_dict(cfg: ScenarioConfig) -> dict:
    out = {}
    for key, attr in CONFIG_KEYS.items():
        v = getattr(cfg, attr)
        if key in _MS_KEYS:
            v = v / US_PER_MS
            v = int(v) if float(v).is_integer() else v
        elif isinstance(v, QuorumMode):
            v = v.value
        out[key] = v
    return out


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines with JSON scalar values; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(key or f"line {lineno}", f"expected key = value on line {lineno}")
        try:
            value = json.loads(raw.strip())
        except json.JSONDecodeError:
            raise ConfigError(key, f"value on line {lineno} is not a JSON scalar") from None
        if isinstance(value, (dict, list)) or value is None:
            raise ConfigError(key, f"value on line {lineno} is not a JSON scalar")
        if key in values:
            raise ConfigError(key, f"set twice (line {lineno})")
        values[key] = value
    return values
