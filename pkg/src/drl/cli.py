"""Command-line front end: ``run``, ``replay`` and ``sweep``.

Exit status is 0 when every enabled check passes, 1 when a check fails,
and 2 for unusable input (bad flags, config or trace).
"""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .errors import CheckFailed, ConfigError, CorruptTrace, DRLError, VersionMismatch
from .runner import ALL_CHECKS, DETECTIONS, RunReport, RunSpec, replay_trace, run_scenario, sweep
from .scheduler import Policy

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def parse_checks(text: str) -> frozenset:
    text = text.strip()
    if text in ("", "none"):
        return frozenset()
    if text == "all":
        return frozenset(ALL_CHECKS)
    names = frozenset(c.strip() for c in text.split(",") if c.strip())
    unknown = names - set(ALL_CHECKS)
    if unknown:
        raise ConfigError(f"unknown checks: {', '.join(sorted(unknown))}")
    return names


def parse_seed_range(text: str) -> range:
    """``A..B`` (inclusive) or a single seed."""
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            r = range(int(lo), int(hi) + 1)
        else:
            r = range(int(text), int(text) + 1)
    except ValueError as exc:
        raise ConfigError(f"bad seed range {text!r}") from exc
    if not r:
        raise ConfigError(f"empty seed range {text!r}")
    return r


def _spec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--config", metavar="FILE", help="policy file of key = value lines")
    p.add_argument("--aggregators", type=int, default=1)
    p.add_argument("--detect", choices=DETECTIONS, default="both")
    p.add_argument("--check", default="all", metavar="LIST", help="comma-separated checks, 'all' or 'none'")
    p.add_argument("--detect-every", type=int, default=25)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drl", description="Simulate and check actor reference-listing garbage collection.")
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run one seeded execution")
    run.add_argument("--seed", type=int, default=0)
    _spec_flags(run)
    run.add_argument("--trace-out", metavar="PATH")
    run.add_argument("-v", "--verbose", action="store_true", help="print the full trace to stdout")

    rep = sub.add_parser("replay", help="replay a recorded trace and compare verdicts")
    rep.add_argument("--trace", required=True, metavar="PATH")

    sw = sub.add_parser("sweep", help="run a range of seeds")
    sw.add_argument("--seeds", required=True, metavar="A..B")
    _spec_flags(sw)
    sw.add_argument("--trace-dir", metavar="DIR", help="keep every trace in DIR")
    sw.add_argument("--jobs", type=int, default=1, help="worker processes")
    return parser


def spec_from_args(args: argparse.Namespace, seed: int = 0) -> RunSpec:
    policy = Policy.from_file(args.config) if args.config else Policy()
    return RunSpec(
        seed=seed,
        steps=args.steps,
        policy=policy,
        aggregators=args.aggregators,
        detection=args.detect,
        checks=parse_checks(args.check),
        detect_every=args.detect_every,
    )


def describe(report: RunReport) -> list[str]:
    out = [report.summary()]
    rules = " ".join(f"{k}={v}" for k, v in sorted(report.rule_counts.items()))
    out.append(f"  events: {rules or 'none'}")
    st = report.stats
    out.append(
        f"  checkpoints={st.checkpoints} detections={st.detections} max-detected={st.detected_max} "
        f"enumerated={st.maximality_sets} coop={st.coop_instances} simple-garbage={st.simple_garbage_flags}"
    )
    for check, message in report.failures:
        out.append(f"  FAIL {check}: {message}")
    if report.trace_path:
        out.append(f"  trace: {report.trace_path}")
    return out


def _run(args: argparse.Namespace) -> int:
    spec = spec_from_args(args, args.seed)
    report = run_scenario(spec, args.trace_out, raise_on_failure=False)
    if args.verbose:
        print("\n".join(report.lines))
    print("\n".join(describe(report)))
    return EXIT_OK if report.passed else EXIT_FAIL


def _replay(args: argparse.Namespace) -> int:
    report = replay_trace(args.trace)
    print("\n".join(describe(report)))
    print("  replay: identical checkpoints and terminal configuration")
    return EXIT_OK if report.passed else EXIT_FAIL


def _sweep(args: argparse.Namespace) -> int:
    seeds = parse_seed_range(args.seeds)
    template = spec_from_args(args)
    result = sweep(seeds, template, args.trace_dir, jobs=max(1, args.jobs))
    for report in sorted(result.reports, key=lambda r: r.spec.seed):
        print(report.summary())
    rates = result.pass_rates()
    print(f"{len(result.reports)} runs")
    for check in sorted(rates):
        good, total = rates[check]
        print(f"  {check}: {good}/{total}")
    if result.first_failure is not None:
        failure: CheckFailed = result.first_failure
        print(f"first failure: {failure}")
        if failure.report is not None and failure.report.trace_path:
            print(f"  trace: {failure.report.trace_path}")
        return EXIT_FAIL
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": _run, "replay": _replay, "sweep": _sweep}[args.verb]
    try:
        return handler(args)
    except (ConfigError, CorruptTrace, VersionMismatch) as exc:
        print(f"drl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DRLError as exc:
        print(f"drl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
