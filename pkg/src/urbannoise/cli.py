"""Command-line entry point: ``urbannoise {sim,serve,query,study}``.

Exit codes: 0 success, 1 runtime failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import asyncio
import datetime as dt
import json
import logging
import signal
import sys
from pathlib import Path

from . import __version__
from .analytics import (
    complaints_to_csv,
    read_complaints_csv,
    simulation_attributor,
    study_report,
    validate_report,
)
from .config import ConfigError, defaults_help, load_config
from .ingest import FaultProxy, Ingestor, IngestServer, replay
from .lattice import LatticeLevel, Stat, series_to_csv, series_to_json
from .node import RetryPolicy, Uplink, run_fleet
from .soundscape import (
    SpecError,
    demo_spec,
    generate_complaints,
    generate_timeline,
    load_spec,
    timeline_to_csv,
)

logger = logging.getLogger("urbannoise")

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad user input detected after argument parsing."""


def parse_time(text: str) -> int:
    """Epoch seconds, or an ISO 8601 timestamp (naive means UTC)."""
    try:
        return int(text)
    except ValueError:
        pass
    try:
        t = dt.datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an epoch second or ISO 8601 time: {text!r}") from None
    if t.tzinfo is None:
        t = t.replace(tzinfo=dt.timezone.utc)
    return int(t.timestamp())


def _level(text: str) -> LatticeLevel:
    try:
        level = LatticeLevel.parse(text)
    except KeyError:
        raise argparse.ArgumentTypeError(f"unknown level {text!r}") from None
    if level == LatticeLevel.RAW:
        raise argparse.ArgumentTypeError("query a lattice level, not raw frames")
    return level


def _stat(text: str) -> Stat:
    try:
        return Stat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown stat {text!r}; one of {', '.join(s.value for s in Stat)}") from None


def _load_scenario(ref):
    if ref in (None, "demo"):
        return demo_spec()
    return load_spec(ref)


# --------------------------------------------------------------------------
# sim


def cmd_sim(args) -> int:
    cfg = load_config(args.config)
    spec = _load_scenario(args.spec)
    rate = cfg["scenario"]["snippet_rate_per_hour"]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "ingest.ndjson"
    log_path.write_text("")

    timeline = generate_timeline(spec)
    complaints = generate_complaints(spec, timeline)
    (out / "truth.csv").write_text(timeline_to_csv(timeline))
    (out / "complaints.csv").write_text(complaints_to_csv(complaints))

    ingestor = Ingestor(log_path=log_path, window=cfg["server"]["dedup_window"])
    key = cfg["server"]["key"]
    faulty = args.drop_acks > 0 or args.kill_rate > 0
    policy = RetryPolicy(base=0.01, cap=0.5, ack_timeout=0.25, max_attempts=100) if faulty else RetryPolicy()

    async def run():
        async with IngestServer(ingestor, key, port=0) as server:
            port = server.port
            proxy = None
            if faulty:
                proxy = await FaultProxy("127.0.0.1", port, args.drop_acks, args.kill_rate, args.fault_seed).start()
                port = proxy.port
            try:
                return await run_fleet(spec, Uplink("127.0.0.1", port, key), timeline, policy, rate)
            finally:
                if proxy is not None:
                    await proxy.close()

    try:
        fleet = asyncio.run(run())
    finally:
        ingestor.close()
    digest = ingestor.store.state_digest()
    (out / "digest.txt").write_text(digest + "\n")
    summary = {
        "config_hash": cfg.hash,
        "seed": spec.seed,
        "sensors": len(spec.sensors),
        "frames": fleet.frames,
        "batches": sum(r.batches for r in fleet.reports),
        "snippets": sum(r.snippets for r in fleet.reports),
        "duplicates_discarded": ingestor.duplicates,
        "events_in_truth": len(timeline),
        "complaints": len(complaints),
        "lattice_digest": digest,
    }
    (out / "sim_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"{fleet.frames} frames from {len(spec.sensors)} sensors; lattice digest {digest}")
    return EXIT_OK


# --------------------------------------------------------------------------
# serve


def cmd_serve(args) -> int:
    cfg = load_config(args.config)
    srv = cfg["server"]
    host = args.host or srv["host"]
    port = srv["port"] if args.port is None else args.port
    key = args.key or srv["key"]
    log_path = args.log or srv["log"]

    async def run():
        ingestor = Ingestor.resume(log_path, window=srv["dedup_window"], fsync=srv["fsync"])
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGTERM, signal.SIGINT):
            loop.add_signal_handler(sig, stop.set)
        try:
            async with IngestServer(ingestor, key, host, port) as server:
                print(f"listening on {host}:{server.port}, log {log_path}", flush=True)
                await stop.wait()
        finally:
            ingestor.close()
        logger.info("shut down cleanly; %d frames, digest %s", ingestor.frames_applied, ingestor.store.state_digest())

    asyncio.run(run())
    return EXIT_OK


# --------------------------------------------------------------------------
# query


def cmd_query(args) -> int:
    cfg = load_config(args.config)
    if args.end <= args.start:
        raise InputError("--to must be after --from")
    store = replay(args.log, strict=not args.lenient)
    if args.all:
        sensors = store.sensors
        points = store.aggregate_series(sensors, args.start, args.end, args.level, args.stat)
        who = "all"
    else:
        if args.sensor not in store.sensors:
            raise InputError(f"sensor {args.sensor!r} not present in {args.log}")
        points = store.series(args.sensor, args.start, args.end, args.level, args.stat)
        who = args.sensor
    if args.format == "json":
        text = series_to_json(points) + "\n"
    else:
        comment = (f"config_sha256={cfg.hash} sensor={who} level={args.level.name} "
                   f"stat={args.stat.value} from={args.start} to={args.end}")
        text = series_to_csv(points, comment)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------
# study


def cmd_study(args) -> int:
    cfg = load_config(args.config)
    spec = _load_scenario(args.spec or cfg["scenario"]["spec"])
    analysis = cfg.analysis(scenario_tz=spec.tz_offset)
    complaints = read_complaints_csv(Path(args.complaints).read_text())
    store = replay(args.log, strict=not args.lenient)
    start = spec.origin_epoch if args.start is None else args.start
    end = spec.end_epoch if args.end is None else args.end
    if end <= start:
        raise InputError("study range is empty")
    attribute = None if args.no_attribution else simulation_attributor(spec, generate_timeline(spec))
    report = study_report(
        store,
        {s.id: s.location for s in spec.sensors},
        complaints,
        (start, end),
        analysis,
        attribute,
        config_hash=cfg.hash,
    )
    doc = report.to_dict()
    validate_report(doc)
    report.write(args.out)
    ev = doc["evidence"]
    print(f"{doc['complaints_total']} complaints, {doc['events_total']} events; "
          f"after-hours construction evidence {ev['with_evidence']}/{ev['after_hours_construction_complaints']}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="urbannoise",
        description="Urban noise sensing pipeline: simulate, ingest, query, study.",
        epilog=defaults_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging and tracebacks")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sim", help="generate a scenario and stream it through an in-process server",
                       epilog=defaults_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("spec", help="scenario spec JSON, or 'demo' for the bundled scenario")
    s.add_argument("out_dir", help="writes ingest.ndjson, truth.csv, complaints.csv, digest.txt, sim_summary.json")
    s.add_argument("--config", help="run configuration JSON")
    s.add_argument("--drop-acks", type=float, default=0.0, metavar="P", help="drop this fraction of ACKs (default 0)")
    s.add_argument("--kill-rate", type=float, default=0.0, metavar="P",
                   help="kill the connection after this fraction of messages (default 0)")
    s.add_argument("--fault-seed", type=int, default=0, help="seed of the fault schedule (default 0)")
    s.set_defaults(func=cmd_sim)

    s = sub.add_parser("serve", help="run the ingest server until SIGTERM",
                       epilog=defaults_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("--config", help="run configuration JSON")
    s.add_argument("--host", help="listen address (default 127.0.0.1)")
    s.add_argument("--port", type=int, help="TCP port (default 7477)")
    s.add_argument("--key", help="shared node key")
    s.add_argument("--log", help="append-only ingest log (default ingest.ndjson); replayed on start")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("query", help="lattice series for one sensor or all sensors, as CSV")
    s.add_argument("--log", required=True, help="ingest log to load")
    who = s.add_mutually_exclusive_group(required=True)
    who.add_argument("--sensor", help="sensor id")
    who.add_argument("--all", action="store_true", help="aggregate across every sensor")
    s.add_argument("--from", dest="start", type=parse_time, required=True, help="range start (epoch s or ISO 8601)")
    s.add_argument("--to", dest="end", type=parse_time, required=True, help="range end, exclusive")
    s.add_argument("--level", type=_level, default=LatticeLevel.HOUR,
                   help="Minute, FiveMinute, Hour, Day, Week or Month (default Hour)")
    s.add_argument("--stat", type=_stat, default=Stat.MEAN_DB,
                   help="MeanDb, EnergeticMeanDb, Min, Max or Count (default MeanDb)")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.add_argument("--out", help="output file (default stdout)")
    s.add_argument("--config", help="run configuration JSON (its hash goes in the header)")
    s.add_argument("--lenient", action="store_true", help="skip corrupt log lines instead of failing")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("study", help="detect events, match complaints, write the study report",
                       epilog=defaults_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("--log", required=True, help="ingest log to load")
    s.add_argument("--complaints", required=True, help="complaint CSV (id,category,created_at,x,y,route,resolution)")
    s.add_argument("--spec", help="scenario spec for sensor locations and attribution ('demo' or a path)")
    s.add_argument("--config", help="run configuration JSON")
    s.add_argument("--out", required=True, help="output directory for study_report.json and CSV tables")
    s.add_argument("--from", dest="start", type=parse_time, help="study start (default scenario start)")
    s.add_argument("--to", dest="end", type=parse_time, help="study end (default scenario end)")
    s.add_argument("--no-attribution", action="store_true", help="report every event as Unknown")
    s.add_argument("--lenient", action="store_true", help="skip corrupt log lines instead of failing")
    s.set_defaults(func=cmd_study)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SpecError, ConfigError, InputError, ValueError) as e:
        if args.verbose:
            logger.exception("invalid input")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as e:  # noqa: BLE001 - top-level boundary
        if args.verbose:
            logger.exception("failed")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
