"""Acceptance checks 1 to 9.

Each test records one ``criterion N: PASS|FAIL ...`` line, which is echoed in
the terminal summary. Run on its own with::

    pytest tests/test_acceptance.py -v
"""

import itertools
import random
from collections import defaultdict
from dataclasses import replace

from intersection_consensus import cli, net
from intersection_consensus.engine import Participant, run_voting_cycle
from intersection_consensus.geometry import (
    VALID_TOTAL_LANES,
    Approach,
    IntersectionGeometry,
    Movement,
    PathDirection,
    QuorumMode,
    conflicts,
)
from intersection_consensus.scenario import (
    DEFAULT_RATIOS,
    DecisionMode,
    ScenarioConfig,
    aggregate,
    generate_batches,
    random_plate,
    run_batch,
    run_scenario,
)

from interleavings import Explorer
from oracles import all_directions, oracle_conflicts

SEEDS = 30
MS = 1000


def _run_all(configs):
    return run_batch(configs)


# -- 1 ----------------------------------------------------------------------

DELAYS = ("uniform:1000,5000", "fixed:3000", "lognormal:8,0.5")


def _random_cycle(seed, loss):
    rng = random.Random(seed)
    g = IntersectionGeometry(8)
    n = rng.randint(3, 16)
    slots = rng.sample([(a, i) for a in Approach for i in range(g.lanes_per_approach)], n)
    n_hv = rng.randint(0, n // 4)
    ps = [
        Participant(f"v{i:02d}", random_plate(rng), PathDirection(a, rng.choice(list(Movement)), lane),
                    is_cav=i >= n_hv)
        for i, (a, lane) in enumerate(slots)
    ]
    rng.shuffle(ps)
    dm = net.DelayModel.parse(DELAYS[seed % 3], loss, seed)
    return run_voting_cycle(
        ps, start=0, t_vision=500 * MS, delay_model=dm, rng=rng,
        mode=rng.choice(list(QuorumMode)), stop_on_leader=False,
        backoff_bound=20 * MS, handling_time=rng.choice((0, 4 * MS)),
    )


def test_criterion_1_single_leader(criterion):
    exhaustive = {}
    for n in (3, 4, 5):
        r = Explorer(n).explore()
        exhaustive[n] = (r.states, r.max_leaders, len(r.violations))
    multi = {}
    for loss in (0.0, 0.1, 0.3):
        multi[loss] = sum(len(_random_cycle(seed, loss).leaders) > 1 for seed in range(10_000))
    ok = all(m <= 1 and v == 0 for _, m, v in exhaustive.values()) and not any(multi.values())
    detail = "exhaustive " + ", ".join(
        f"n={n}: {s} states, max {m} leader" for n, (s, m, _) in exhaustive.items()
    ) + "; random 10000 seeds x loss " + ", ".join(f"{k}: {v} multi-leader" for k, v in multi.items())
    assert criterion(1, ok, detail)


# -- 2 ----------------------------------------------------------------------

def test_criterion_2_liveness_with_f_silent(criterion):
    fails = defaultdict(int)
    for f in (1, 2, 3):
        for seed in range(1000):
            rng = random.Random(seed)
            crash = seed % 2 == 1
            ps = []
            for i in range(2 * f + 1):
                silent = i < f
                d = PathDirection(list(Approach)[i % 4], Movement.STRAIGHT, i // 4)
                ps.append(Participant(f"v{i}", random_plate(rng), d,
                                      is_cav=not (silent and not crash), crashed=silent and crash))
            rng.shuffle(ps)
            r = run_voting_cycle(ps, start=0, t_vision=500 * MS,
                                 delay_model=net.DelayModel("uniform", (1000, 5000), 0.0, seed),
                                 rng=rng, backoff_bound=20 * MS, handling_time=4 * MS)
            fails[f] += r.leader is None
    ok = not any(fails.values())
    detail = "; ".join(f"f={f}: {fails[f]}/1000 without leader" for f in (1, 2, 3))
    assert criterion(2, ok, detail)


# -- 3 ----------------------------------------------------------------------

def test_criterion_3_baseline_consensus_time(criterion):
    res = run_scenario(ScenarioConfig(total_lanes=2, cav_ratio=1.0, runs=SEEDS, seed=1))
    mean = res.aggregates().mean_consensus_ms
    ok = 25 <= mean <= 50
    assert criterion(3, ok, f"mean consensus {mean:.2f} ms over {SEEDS} runs (target 25-50)")


# -- 4 ----------------------------------------------------------------------

def test_criterion_4_quorum_trends(criterion):
    base = ScenarioConfig(total_lanes=2, n_vehicles=300, loss=0.05, runs=SEEDS, seed=1)
    grid = [(r, q) for r in DEFAULT_RATIOS for q in QuorumMode]
    results = dict(zip(grid, _run_all([replace(base, cav_ratio=r, quorum_mode=q) for r, q in grid])))
    agg = {k: v.aggregates() for k, v in results.items()}

    all_cav = [m for r in DEFAULT_RATIOS for m in results[r, QuorumMode.MAJORITY].cycles
               if m.batch_size >= 3 and m.n_hv == 0]
    maj_timeouts = sum(m.timed_out for m in all_cav)
    ok_a = maj_timeouts == 0

    full = [agg[r, QuorumMode.FULL].timeout_rate for r in DEFAULT_RATIOS]
    ok_b = all(a < b for a, b in zip(full, full[1:])) and full[-1] >= 0.35

    high = [r for r in DEFAULT_RATIOS if r >= 0.8]
    thr = {r: (agg[r, QuorumMode.MAJORITY].throughput_vpm, agg[r, QuorumMode.FULL].throughput_vpm)
           for r in high}
    ok_c = all(m > f for m, f in thr.values())

    detail = (
        f"(a) {'ok' if ok_a else 'FAIL'} majority timeouts on all-CAV batches "
        f"{maj_timeouts}/{len(all_cav)}; "
        f"(b) {'ok' if ok_b else 'FAIL'} full timeout rate by ratio "
        + ",".join(f"{x:.3f}" for x in full)
        + f"; (c) {'ok' if ok_c else 'FAIL'} throughput majority/full "
        + ", ".join(f"{r}: {m:.2f}/{f:.2f}" for r, (m, f) in thr.items())
    )
    assert criterion(4, ok_a and ok_b and ok_c, detail)


# -- 5 ----------------------------------------------------------------------

def test_criterion_5_tvision_trends(criterion):
    base = ScenarioConfig(total_lanes=4, n_vehicles=300, cav_ratio=1.0, runs=SEEDS, seed=1)
    t_visions = (500 * MS, 300 * MS, 50 * MS)  # decreasing
    results = _run_all([replace(base, t_vision=t) for t in t_visions])
    aggs = [r.aggregates() for r in results]
    decision = [a.mean_decision_ms for a in aggs]
    contested = [a.mean_contested_decision_ms for a in aggs]
    timeouts = [a.timeout_rate for a in aggs]
    ok_trend = (all(a >= b for a, b in zip(decision, decision[1:]))
                and all(a <= b for a, b in zip(timeouts, timeouts[1:])))

    def rate(res, keep):
        sub = [m for m in res.cycles if m.batch_size >= 3 and keep(m.batch_size)]
        return aggregate(sub, res.run_times, base.n_vehicles).timeout_rate

    big = [rate(r, lambda s: s >= 5) for r in results]
    small = [rate(r, lambda s: s < 5) for r in results]
    rise_big, rise_small = big[-1] - big[0], small[-1] - small[0]
    ok_conc = rise_big > rise_small
    detail = (
        "T_vision 500/300/50 ms: mean decision "
        + "/".join(f"{d:.2f}" for d in decision) + " ms (3+ vehicles only "
        + "/".join(f"{d:.2f}" for d in contested) + " ms), timeout rate "
        + "/".join(f"{t:.3f}" for t in timeouts)
        + f"; timeout rise in batches >=5: {rise_big:.3f}, in 3-4: {rise_small:.3f}"
    )
    assert criterion(5, ok_trend and ok_conc, detail)


# -- 6 ----------------------------------------------------------------------

def test_criterion_6_lane_trends(criterion):
    ratios = (0.0, 0.6, 1.0)
    grid = list(itertools.product(VALID_TOTAL_LANES, ratios))
    base = ScenarioConfig(n_vehicles=300, runs=SEEDS, seed=1)
    results = _run_all([replace(base, total_lanes=lanes, cav_ratio=r) for lanes, r in grid])
    thr = {k: res.aggregates().throughput_vpm for k, res in zip(grid, results)}
    ok = all(thr[lanes, 0.0] < thr[lanes, 0.6] < thr[lanes, 1.0] for lanes in VALID_TOTAL_LANES)
    detail = "; ".join(
        f"{lanes}-lane " + "/".join(f"{thr[lanes, r]:.1f}" for r in ratios) for lanes in VALID_TOTAL_LANES
    ) + " vpm at CAV 0/0.6/1.0"
    assert criterion(6, ok, detail)


# -- 7 ----------------------------------------------------------------------

def test_criterion_7_conflict_oracle(criterion):
    total = mismatched = 0
    for lanes in VALID_TOTAL_LANES:
        g = IntersectionGeometry(lanes)
        dirs = all_directions(g.lanes_per_approach)
        for a, b in itertools.product(dirs, repeat=2):
            total += 1
            mismatched += conflicts(a, b, g) != oracle_conflicts(a, b, g.lanes_per_approach)
    ok = mismatched == 0
    assert criterion(7, ok, f"{total - mismatched}/{total} direction pairs agree with the path oracle")


# -- 8 ----------------------------------------------------------------------

INVOCATIONS = [
    ["run", "--lanes", "4", "--cav-ratio", "0.7", "--loss", "0.1", "--vehicles", "60", "--seed", "42"],
    ["quorum-compare", "--vehicles", "40", "--loss", "0.05", "--ratios", "0.4,1.0", "--seed", "7"],
    ["tvision-sweep", "--lanes", "4", "--vehicles", "40", "--seed", "7"],
    ["lane-sweep", "--vehicles", "30", "--ratios", "0,1", "--seed", "7"],
    ["export-conflicts", "--lanes", "8"],
]


def test_criterion_8_cli_determinism(criterion, tmp_path):
    checked = differing = 0
    for i, argv in enumerate(INVOCATIONS):
        formats = ("csv",) if argv[0] == "export-conflicts" else ("csv", "json")
        for fmt in formats:
            outs = []
            for attempt in range(2):
                out = tmp_path / f"{i}-{attempt}.{fmt}"
                assert cli.main([*argv, "--out", str(out)]) == 0
                outs.append(out.read_bytes())
            checked += 1
            differing += outs[0] != outs[1]
    ok = differing == 0
    assert criterion(8, ok, f"{checked - differing}/{checked} repeated invocations byte-identical")


# -- 9 ----------------------------------------------------------------------

def test_criterion_9_small_batches(criterion):
    configs = [ScenarioConfig(total_lanes=lanes, cav_ratio=r, loss=0.1, n_vehicles=300, seed=5)
               for lanes in VALID_TOTAL_LANES for r in (0.0, 0.5, 1.0)]
    twos = ones = bad = 0
    for cfg, res in zip(configs, _run_all(configs)):
        # a run draws its batches first from random.Random(seed + run)
        kinds = {m.address: m.kind for b in generate_batches(cfg, random.Random(cfg.seed))
                 for m in b.members}
        cycles = res.cycles
        ends = [c.start_time for c in cycles[1:]] + [res.run_times[0]]
        for m, end in zip(cycles, ends):
            crossing = end - m.start_time - m.decision_time
            expected = cfg.passage_time + (0 if all(kinds[a].is_cav for a in m.passed) else cfg.hv_delay)
            if m.batch_size == 2:
                twos += 1
                bad += not (m.decision_mode is DecisionMode.VISION_FALLBACK
                            and m.decision_time == cfg.t_vision
                            and crossing == expected and m.messages == 0)
            elif m.batch_size == 1:
                ones += 1
                bad += not (m.decision_mode is DecisionMode.TRIVIAL_PASS and m.messages == 0
                            and m.decision_time == 0 and crossing == expected)
    ok = bad == 0 and twos > 0 and ones > 0
    assert criterion(9, ok, f"{twos} two-vehicle and {ones} one-vehicle cycles, {bad} violations")
