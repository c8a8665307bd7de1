"""Command line entry point.

    multinego run SCENARIO [--transcript PATH] [--seed N] [--transport inproc|tcp --listen ADDR]
    multinego replay TRANSCRIPT
    multinego broker --listen ADDR [--snapshot PATH]

``run`` exits 0 when some episode agreed, 2 when every episode aborted and
1 on errors.  ``replay`` exits 0 when clean and 2 on divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .agent import ConfigError
from .broker import Broker
from .net import BrokerServer
from .simulation import Scenario, Transcript, TranscriptError, replay, run

log = logging.getLogger("multinego")

EXIT_AGREED, EXIT_ERROR, EXIT_ABORTED = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multinego", description="Run negotiation scenarios, replay transcripts, serve the broker.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    # also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run a scenario file")
    p.add_argument("scenario")
    p.add_argument("--transcript", help="write the transcript here (default: stdout)")
    p.add_argument("--seed", type=int, help="overrides MULTINEGO_SEED and the scenario seed")
    p.add_argument("--transport", choices=("inproc", "tcp"))
    p.add_argument("--listen", help="relay address for --transport tcp, HOST:PORT")

    p = sub.add_parser("replay", parents=[common], help="check a transcript against its summaries")
    p.add_argument("transcript")

    p = sub.add_parser("broker", parents=[common], help="serve the advertisement repository over TCP")
    p.add_argument("--listen", required=True, help="HOST:PORT")
    p.add_argument("--snapshot", help="append-only snapshot file; restored on start if present")
    return parser


def _run(args) -> int:
    scenario = Scenario.load(args.scenario)
    transcript = run(scenario, seed=args.seed, transport=args.transport, listen=args.listen)
    if args.transcript:
        transcript.write(args.transcript)
    else:
        sys.stdout.buffer.write(transcript.to_bytes())
    for e in transcript.episodes:
        log.info("%s %s after %d rounds total=%s", e["episode_id"], e["outcome"], e["rounds_used"], e["total"])
    return EXIT_AGREED if transcript.outcome == "AGREED" else EXIT_ABORTED


def _replay(args) -> int:
    report = replay(Transcript.read(args.transcript))
    print(report)
    return EXIT_AGREED if report.clean else EXIT_ABORTED


def _broker(args) -> int:
    from pathlib import Path

    if args.snapshot and Path(args.snapshot).exists():
        broker = Broker.restore(args.snapshot)
    else:
        broker = Broker(args.snapshot)
    server = BrokerServer(args.listen, broker)
    log.info("broker listening on %s", server.address)
    print(server.address, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_AGREED


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "replay":
            return _replay(args)
        return _broker(args)
    except (ConfigError, TranscriptError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
