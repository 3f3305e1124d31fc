"""Command-line entry point.

Exit codes: 0 success, 1 invalid scenario, 2 a DSP failure in at least one
sweep point (partial results are still written).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .runner import expand_override, run_points, run_scenario
from .scenario import ScenarioError, load_scenario

EXIT_OK, EXIT_INVALID, EXIT_DSP = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="combphase",
                                 description="Frequency-comb carrier recovery experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file")
    run.add_argument("scenario")
    run.add_argument("--out", help="output directory (default: run.output_dir)")
    run.add_argument("--seed", type=int)
    run.add_argument("--threads", type=int)

    val = sub.add_parser("validate", help="check a scenario file and print its hash")
    val.add_argument("scenario")

    sweep = sub.add_parser("sweep", help="run a scenario once per value of one key")
    sweep.add_argument("scenario")
    sweep.add_argument("--param", required=True, help="dotted key, e.g. link.snr_db")
    sweep.add_argument("--values", required=True,
                       help="comma-separated values, or a JSON list")
    sweep.add_argument("--out")
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--threads", type=int)
    return ap


def parse_values(text: str) -> list:
    text = text.strip()
    if text.startswith("["):
        return json.loads(text)
    out = []
    for item in text.split(","):
        item = item.strip()
        try:
            out.append(json.loads(item))
        except json.JSONDecodeError:
            out.append(item)
    return out


def _report_invalid(exc: ScenarioError) -> int:
    print("invalid scenario:", file=sys.stderr)
    for fld, msg in exc.problems:
        print(f"  {fld}: {msg}", file=sys.stderr)
    return EXIT_INVALID


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        scn = load_scenario(args.scenario)
    except FileNotFoundError:
        print(f"scenario file not found: {args.scenario}", file=sys.stderr)
        return EXIT_INVALID
    except ScenarioError as exc:
        return _report_invalid(exc)

    if args.command == "validate":
        print(f"ok {scn.digest()}")
        return EXIT_OK

    out = Path(args.out or scn.run.output_dir)
    seed = scn.run.seed if args.seed is None else args.seed
    threads = scn.run.threads if args.threads is None else args.threads
    if args.command == "run":
        record, _ = run_scenario(scn, out, seed, threads)
    else:
        try:
            points = expand_override(scn, args.param, parse_values(args.values))
        except ScenarioError as exc:
            return _report_invalid(exc)
        record, _ = run_points(points, seed, threads, out, scn.digest())
    print(f"wrote {out / 'results.csv'} ({len(record.points)} points, "
          f"{record.failures} failures, {record.wall_clock_s:.1f} s)")
    return EXIT_DSP if record.failures else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
