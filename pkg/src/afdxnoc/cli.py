"""afdxnoc command line: run / validate / vectors."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import frame as fr
from .checks import run_checks
from .config import ParseError, build_simulation, parse_config
from .errors import AfdxNocError
from .simnet import format_trace

log = logging.getLogger("afdxnoc")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2


def _setup_logging() -> None:
    level = os.environ.get("AFDXNOC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _load(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_config(text)


def cmd_validate(args) -> int:
    _load(args.config)
    print(f"{args.config}: ok")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args.config)
    cycles = cfg.run.cycles if args.cycles is None else args.cycles
    seed = cfg.run.seed if args.seed is None else args.seed
    sim = build_simulation(cfg, seed=seed, cycles=cycles)
    report, trace = sim.run(cycles)

    doc = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    stats_path = args.stats or cfg.run.stats
    if stats_path:
        Path(stats_path).write_text(doc)
        log.info("stats written to %s", stats_path)
    else:
        sys.stdout.write(doc)
    trace_path = args.trace or cfg.run.trace
    if trace_path:
        Path(trace_path).write_text(format_trace(trace))
        log.info("trace written to %s (%d records)", trace_path, len(trace))

    if args.check:
        problems = run_checks(sim, report, trace)
        for p in problems:
            print(f"CHECK FAILED {p}", file=sys.stderr)
        if problems:
            return EXIT_CHECK_FAILED
        print("all invariant checks passed", file=sys.stderr)
    return EXIT_OK


def codec_vectors() -> dict:
    crc_inputs = [b"", b"123456789", b"a", bytes(range(256)), b"\xff" * 64]
    frames = [
        fr.Frame(vlid=5, src_es=1, payload=bytes(range(17)), seq=1, udp_src_port=100, udp_dst_port=100),
        fr.Frame(vlid=0x1234, src_es=0xABCD, payload=b"", seq=0),
        fr.Frame(vlid=7, src_es=2, payload=b"hello avionics", seq=255, udp_src_port=1, udp_dst_port=2),
        fr.Frame(vlid=1, src_es=1, payload=bytes(i & 0xFF for i in range(fr.MAX_PAYLOAD)), seq=9),
    ]
    return {
        "crc32": [{"input": d.hex(), "crc32": f"{fr.crc32(d):08x}"} for d in crc_inputs],
        "frames": [
            {
                "vlid": f.vlid,
                "src_es": f.src_es,
                "udp_src_port": f.udp_src_port,
                "udp_dst_port": f.udp_dst_port,
                "seq": f.seq,
                "payload": f.payload.hex(),
                "wire": fr.encode(f).hex(),
            }
            for f in frames
        ],
    }


def cmd_vectors(args) -> int:
    doc = json.dumps(codec_vectors(), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(doc)
    else:
        sys.stdout.write(doc)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="afdxnoc", description="AFDX-style Network-on-Chip simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario")
    run.add_argument("--config", required=True)
    run.add_argument("--cycles", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--stats", help="stats output path (JSON); stdout if omitted")
    run.add_argument("--trace", help="trace output path (CSV)")
    run.add_argument("--check", action="store_true", help="run the invariant suite over the trace")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="parse and validate a scenario without running it")
    val.add_argument("--config", required=True)
    val.set_defaults(func=cmd_validate)

    vec = sub.add_parser("vectors", help="emit CRC and frame codec test vectors")
    vec.add_argument("--out")
    vec.set_defaults(func=cmd_vectors)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except AfdxNocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
