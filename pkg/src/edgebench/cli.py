"""``edgebench`` command line."""

from __future__ import annotations

import argparse
import logging
import sys

from .scenarios import ConfigError, Settings, load_config

# flag dest -> Settings attribute
_OVERRIDES = {
    "duration": "duration_s",
    "repetitions": "repetitions",
    "producers": "producers",
    "rate": "rate_hz",
    "payload": "payload_bytes",
    "scheme": "scheme",
    "platform": "platform",
    "seed": "seed",
    "out": "out_dir",
    "sampler": "sampler",
    "edge_capacity": "edge_capacity",
    "per_cpu_rate": "per_cpu_rate",
    "queue_per_gb": "queue_per_gb",
    "poll_interval_ms": "poll_interval_ms",
    "cloud_max_records": "cloud_max_records",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgebench", description="Edge/cloud messaging pipeline benchmark")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run benchmark scenarios")
    run.add_argument("--config", help="INI-style file; flags override its values")
    run.add_argument("--scenario", action="append", help="I..VIII or all (repeatable, comma-separated)")
    run.add_argument("--duration", type=float, help="seconds per repetition (default 60)")
    run.add_argument("--repetitions", type=int, help="repetitions per scenario (default 3)")
    run.add_argument("--producers", type=int, help="override the producer count")
    run.add_argument("--rate", type=float, help="messages per second per producer (default 2.0)")
    run.add_argument("--payload", type=int, help="payload bytes (default 1280)")
    run.add_argument("--scheme", choices=("small", "medium", "large", "none"))
    run.add_argument("--platform", choices=("hybrid", "local"))
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory (default results)")
    run.add_argument("--sim-time", action="store_true", default=None, help="simulated time, no sockets")
    run.add_argument("--paper-scale", action="store_true", default=None, help="600 s x 10 repetitions")
    run.add_argument("--no-netem", action="store_true", default=None, help="disable link shaping")
    run.add_argument("--distributed", action="store_true", default=None, help="services as separate processes")
    run.add_argument("--sampler", choices=("first", "last"))
    run.add_argument("--edge-capacity", type=int)
    run.add_argument("--per-cpu-rate", type=float)
    run.add_argument("--queue-per-gb", type=int)
    run.add_argument("--poll-interval-ms", type=float)
    run.add_argument("--cloud-max-records", type=int)

    probe = sub.add_parser("probe", help="RTT and bandwidth calibration of the default links")
    probe.add_argument("--seed", type=int, default=42)

    serve = sub.add_parser("serve", help="run one service (used by --distributed)")
    from .distributed import add_serve_arguments

    add_serve_arguments(serve)
    return parser


def settings_from_args(args: argparse.Namespace) -> Settings:
    settings = load_config(args.config) if args.config else Settings()
    if args.scenario:
        settings.scenarios = [s.strip() for item in args.scenario for s in item.split(",") if s.strip()]
    for dest, attr in _OVERRIDES.items():
        value = getattr(args, dest)
        if value is not None:
            setattr(settings, attr, value)
    if args.sim_time:
        settings.sim_time = True
    if args.paper_scale:
        settings.paper_scale = True
    if args.no_netem:
        settings.netem = False
    if args.distributed:
        settings.distributed = True
    return settings


def _probe(seed: int) -> int:
    from .netem import bulk_transfer, default_profiles, echo_probe

    links = default_profiles(seed)
    echo = echo_probe(links["uplink_5g"], links["downlink_5g"])
    print(f"RTT  mean {echo.mean:.2f} ms  min {echo.min:.2f} ms  max {echo.max:.2f} ms  ({len(echo.rtts_ms)} probes)")
    for name in ("uplink_5g", "downlink_5g", "wan"):
        rate = bulk_transfer(links[name], 50_000_000)
        print(f"{name:12s} bulk {rate:8.2f} Mbit/s (cap {links[name].bandwidth_mbps:g})")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    if args.command == "probe":
        return _probe(args.seed)
    if args.command == "serve":
        from .distributed import serve_main

        return serve_main(args)

    from .runner import run_suite

    try:
        settings = settings_from_args(args)
        scenarios = settings.build()
    except (ConfigError, OSError) as exc:
        print(f"edgebench: {exc}", file=sys.stderr)
        return 2
    try:
        suite = run_suite(scenarios, settings.out_dir, stream=sys.stderr)
    except Exception as exc:
        logging.getLogger("edgebench").exception("scenario aborted")
        print(f"edgebench: scenario aborted: {exc}; partial logs kept in {settings.out_dir}", file=sys.stderr)
        return 3
    print(suite.summary, end="")
    return suite.exit_code
