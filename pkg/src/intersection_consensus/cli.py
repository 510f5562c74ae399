"""Command-line front end.

Settings come from built-in defaults, then an optional ``--config`` file
(flat ``key = value`` lines, JSON scalars), then flags. Durations on the
command line and in config files are milliseconds.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import scenario
from .geometry import VALID_TOTAL_LANES, IntersectionGeometry, conflict_matrix_csv
from .scenario import ConfigError

EXIT_OK = 0
EXIT_USAGE = 2

# flag dest -> config key
_FLAG_KEYS = {
    "lanes": "lanes",
    "vehicles": "vehicles",
    "cav_ratio": "cav_ratio",
    "t_vision_ms": "t_vision_ms",
    "hv_delay_ms": "hv_delay_ms",
    "quorum": "quorum",
    "delay": "delay",
    "loss": "loss",
    "jitter_ms": "jitter_ms",
    "passage_ms": "passage_ms",
    "batch_min": "batch_min",
    "batch_max": "batch_max",
    "handling_ms": "handling_ms",
    "backoff_ms": "backoff_ms",
    "retransmit_ms": "retransmit_ms",
    "round_timeout_ms": "round_timeout_ms",
    "seed": "seed",
    "runs": "runs",
}


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _add_scenario_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("scenario")
    g.add_argument("--config", type=Path, help="flat key = value file with JSON scalar values")
    g.add_argument("--lanes", type=int, help=f"total lanes, one of {VALID_TOTAL_LANES}")
    g.add_argument("--vehicles", type=int, help="vehicles per run (default 300)")
    g.add_argument("--cav-ratio", type=float, help="share of connected vehicles, 0..1")
    g.add_argument("--t-vision-ms", type=_number, help="plate recognition time (default 500)")
    g.add_argument("--hv-delay-ms", type=_number, help="human decision delay (default 3000)")
    g.add_argument("--quorum", help="majority or full")
    g.add_argument("--delay", help="uniform:a,b | fixed:d | lognormal:mu,sigma (microseconds)")
    g.add_argument("--loss", type=float, help="per-message loss probability")
    g.add_argument("--jitter-ms", type=_number, help="bound of the request send offset (default 5)")
    g.add_argument("--passage-ms", type=_number, help="crossing time per group (default 2000)")
    g.add_argument("--batch-min", type=int, help="smallest batch (default 1)")
    g.add_argument("--batch-max", type=int, help="largest batch, 0 = one per inbound lane")
    g.add_argument("--handling-ms", type=_number, help="per-message handling time (default 4)")
    g.add_argument("--backoff-ms", type=_number, help="re-consensus start spread (default 20)")
    g.add_argument("--retransmit-ms", type=_number, help="resend delay for lost messages, 0 = off")
    g.add_argument("--round-timeout-ms", type=_number,
                   help="restart a round with no leader after this long, 0 = off")
    g.add_argument("--seed", type=int, help="base seed; run i uses seed + i")
    g.add_argument("--runs", type=int, help="independent runs (default 1)")
    g.add_argument("--workers", type=int, default=1, help="worker processes for sweeps")
    _add_output_flags(p)


def _add_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", type=Path, help="output file (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), help="default: from --out suffix, else csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="intersection-consensus",
        description="Simulate voting-based right-of-way at an unsignalised intersection.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("run", help="one scenario; CSV has one row per cycle")
    _add_scenario_flags(p)

    p = sub.add_parser("quorum-compare", help="majority vs full quorum over CAV ratios")
    _add_scenario_flags(p)
    p.add_argument("--ratios", type=_float_list, help="comma-separated CAV ratios")

    p = sub.add_parser("tvision-sweep", help="vary the plate recognition time")
    _add_scenario_flags(p)
    p.add_argument("--t-visions-ms", type=_int_list, help="comma-separated values (default 50,300,500)")

    p = sub.add_parser("lane-sweep", help="lane configurations x CAV ratios")
    _add_scenario_flags(p)
    p.add_argument("--ratios", type=_float_list, help="comma-separated CAV ratios")
    p.add_argument("--lane-set", type=_int_list, help="comma-separated lane counts")

    p = sub.add_parser("export-conflicts", help="conflict matrix as CSV")
    p.add_argument("--lanes", type=int, default=2, help=f"total lanes, one of {VALID_TOTAL_LANES}")
    p.add_argument("--out", type=Path, help="output file (default: stdout)")
    return parser


def load_config(args: argparse.Namespace) -> scenario.ScenarioConfig:
    values: dict = {}
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("config", f"cannot read {args.config}: {exc.strerror}") from None
        values.update(scenario.parse_config_text(text))
    for dest, key in _FLAG_KEYS.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[key] = v
    return scenario.config_from_dict(values)


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _fmt(args) -> str:
    if args.format:
        return args.format
    if args.out is not None and args.out.suffix.lower() == ".json":
        return "json"
    return "csv"


def _check_values(name: str, values, check) -> None:
    for v in values:
        if not check(v):
            raise ConfigError(name, f"bad value {v!r}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: a command is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def _dispatch(args) -> int:
    if args.command == "export-conflicts":
        if args.lanes not in VALID_TOTAL_LANES:
            raise ConfigError("lanes", f"must be one of {VALID_TOTAL_LANES}, got {args.lanes}")
        _emit(conflict_matrix_csv(IntersectionGeometry(args.lanes)), args.out)
        return EXIT_OK

    cfg = load_config(args)
    fmt = _fmt(args)
    workers = max(1, args.workers)
    if args.command == "run":
        result = scenario.run_scenario(cfg)
        _emit(result.to_csv() if fmt == "csv" else result.to_json(), args.out)
        return EXIT_OK

    if args.command == "quorum-compare":
        ratios = args.ratios or scenario.DEFAULT_RATIOS
        _check_values("ratios", ratios, lambda r: 0.0 <= r <= 1.0)
        sweep = scenario.run_quorum_comparison(cfg, ratios, workers)
    elif args.command == "tvision-sweep":
        t_visions = args.t_visions_ms or [t // 1000 for t in scenario.DEFAULT_T_VISIONS]
        _check_values("t_visions_ms", t_visions, lambda t: t > 0)
        sweep = scenario.run_tvision_sweep(cfg, [t * 1000 for t in t_visions], workers)
    else:
        lanes = args.lane_set or VALID_TOTAL_LANES
        _check_values("lane_set", lanes, lambda n: n in VALID_TOTAL_LANES)
        ratios = args.ratios or scenario.DEFAULT_RATIOS
        _check_values("ratios", ratios, lambda r: 0.0 <= r <= 1.0)
        sweep = scenario.run_lane_sweep(cfg, lanes, ratios, workers)
    _emit(sweep.to_csv() if fmt == "csv" else sweep.to_json(), args.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
