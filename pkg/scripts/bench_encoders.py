#!/usr/bin/env python3
"""Encoder throughput harness for CI tracking.

Generates (or reuses) a synthetic event stream, runs `evdepth bench` over all
three layouts, writes the JSON report, and optionally compares against a
stored baseline at the given tolerance. The comparison is informative only;
the exit code stays 0 unless the bench itself fails.

Usage:
  python scripts/bench_encoders.py --out bench.json
  python scripts/bench_encoders.py --events big.evb --baseline bench/baseline.json
"""

import argparse
import sys
import tempfile
from pathlib import Path

import numpy as np

from evdepth.cli import main as evdepth_main
from evdepth.events import EventStream, write_events


def generate_stream(path: Path, n_events: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    ts = np.sort(rng.integers(0, 600_000_000, size=n_events))
    stream = EventStream(
        346, 260,
        rng.integers(0, 346, size=n_events),
        rng.integers(0, 260, size=n_events),
        rng.choice(np.array([-1, 1], dtype=np.int8), size=n_events),
        ts,
    )
    write_events(stream, path)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--events", default=None, help="existing EVB file to bench")
    parser.add_argument("--n-events", type=int, default=10_000_000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--repetitions", type=int, default=3)
    parser.add_argument("--out", default="bench.json")
    parser.add_argument("--baseline", default=None)
    parser.add_argument("--tolerance", type=float, default=0.2)
    args = parser.parse_args()

    if args.events:
        events = Path(args.events)
        cleanup = None
    else:
        cleanup = tempfile.TemporaryDirectory()
        events = Path(cleanup.name) / "bench_events.evb"
        print(f"generating {args.n_events} synthetic events...")
        generate_stream(events, args.n_events, args.seed)

    cli = ["bench", "--events", str(events), "--repetitions", str(args.repetitions),
           "--out", args.out, "--tolerance", str(args.tolerance)]
    if args.baseline:
        cli += ["--baseline", args.baseline]
    code = evdepth_main(cli)
    if cleanup is not None:
        cleanup.cleanup()
    return code


if __name__ == "__main__":
    sys.exit(main())
