"""Scenario runner: executions, periodic detection, checks, traces and replay."""

from __future__ import annotations

import dataclasses
import json
import os
import random
import tempfile
import zlib
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .coop import cooperative_detect, potentially_finalized_subset, summarize
from .detection import (
    Aggregator,
    DetectionResult,
    Snapshot as SnapshotRecord,
    SnapshotSet,
    finalized_by_enumeration,
    heuristic_finalized_subset,
    is_finalized,
    is_simple_garbage,
    is_strongly_finalized,
    maximum_finalized_subset,
    render_detect_line,
)
from .engine import Configuration, Event, Snapshot, apply_event, config_hash, render_configuration
from .errors import CheckFailed, ConfigError, CorruptTrace, IllegalEvent, InvariantViolation, VersionMismatch
from .facts import ActorName
from .oracle import ground_truth
from .scheduler import Policy, Simulator
from .trace import TRACE_VERSION, parse_event_line, render_event_line, render_names

ALL_CHECKS = ("chain-lemma", "lemma-counts", "safety", "liveness", "maximality", "summary-equivalence")
DETECTIONS = ("chain", "heuristic", "both")
MAX_ENUMERATION = 12


@dataclass(frozen=True)
class RunSpec:
    seed: int = 0
    steps: int = 300
    policy: Policy = field(default_factory=Policy)
    aggregators: int = 1
    detection: str = "both"
    checks: frozenset = frozenset(ALL_CHECKS)
    detect_every: int = 25

    def __post_init__(self) -> None:
        object.__setattr__(self, "checks", frozenset(self.checks))
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if self.aggregators < 1:
            raise ConfigError("at least one aggregator is required")
        if self.detection not in DETECTIONS:
            raise ConfigError(f"detection must be one of {DETECTIONS}")
        unknown = self.checks - set(ALL_CHECKS)
        if unknown:
            raise ConfigError(f"unknown checks: {sorted(unknown)}")
        if self.detect_every < 1 or (self.steps > 0 and self.detect_every > self.steps):
            raise ConfigError("detect-every must lie between 1 and the step count")

    @property
    def algorithms(self) -> tuple[str, ...]:
        return ("chain", "heuristic") if self.detection == "both" else (self.detection,)

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "steps": self.steps,
                "policy": self.policy.to_dict(),
                "aggregators": self.aggregators,
                "detection": self.detection,
                "checks": sorted(self.checks),
                "detect_every": self.detect_every,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> RunSpec:
        d = json.loads(text)
        d["policy"] = Policy.from_dict(d["policy"])
        d["checks"] = frozenset(d["checks"])
        return cls(**d)


@dataclass
class Stats:
    """Counters of what the checks actually exercised."""

    checkpoints: int = 0
    detections: int = 0
    detected_max: int = 0
    maximality_sets: int = 0
    equivalence_sets: int = 0
    coop_instances: int = 0
    simple_garbage_flags: int = 0
    sizes: list = field(default_factory=list)


@dataclass
class RunReport:
    spec: RunSpec
    verdicts: dict
    failures: list
    rule_counts: Counter
    stats: Stats
    final_hash: str = ""
    trace_path: str | None = None
    lines: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def summary(self) -> str:
        verdicts = " ".join(f"{c}={'pass' if ok else 'FAIL'}" for c, ok in sorted(self.verdicts.items()))
        return f"seed={self.spec.seed} steps={self.spec.steps} {verdicts or 'no-checks'}"


def home_aggregator(a: ActorName, count: int) -> int:
    return zlib.crc32(str(a).encode()) % count


class _Run:
    """One execution, driven either by the scheduler or by a recorded event script."""

    def __init__(self, spec: RunSpec, script: Sequence[tuple[int, Event]] | None = None, quiesce_at: int | None = None):
        self.spec = spec
        checks = spec.checks
        self.sim = Simulator(
            spec.policy,
            spec.seed,
            checked=bool({"chain-lemma", "lemma-counts"} & checks),
            check_chain="chain-lemma" in checks,
            check_counts="lemma-counts" in checks,
        )
        self.sim.listeners.append(self._on_event)
        self.aggs = [Aggregator(i) for i in range(spec.aggregators)]
        self.routed = 0
        self.lines: list[str] = [
            f"# drl-trace {TRACE_VERSION} seed={spec.seed} policy={spec.policy.digest()}",
            f"# spec {spec.to_json()}",
        ]
        self.failures: list[tuple[str, str]] = []
        self.stats = Stats()
        self.script = list(script) if script is not None else None
        self.cursor = 0
        self.quiesce_at = quiesce_at

    # event plumbing -------------------------------------------------------
    def _on_event(self, e: Event, before: Configuration, after: Configuration) -> None:
        self.lines.append(render_event_line(after.clock, e))
        if type(e) is Snapshot and "safety" in self.spec.checks:
            snap = SnapshotRecord(e.actor, after.knowledge(e.actor), after.clock)
            if is_simple_garbage(snap):
                self.stats.simple_garbage_flags += 1
                if e.actor not in ground_truth(after).terminated:
                    self.fail("safety", f"{e.actor} flagged as simple garbage at step {after.clock} but is not terminated")

    def fail(self, check: str, message: str) -> None:
        self.failures.append((check, message))

    def _next_scripted(self) -> Event:
        step, e = self.script[self.cursor]
        self.cursor += 1
        if step != self.sim.k.clock + 1:
            raise CorruptTrace(f"event numbered {step} follows step {self.sim.k.clock}")
        return e

    def _apply(self, e: Event) -> None:
        try:
            self.sim.apply(e)
        except IllegalEvent as exc:
            if self.script is not None:
                raise CorruptTrace(f"illegal event in trace: {exc}") from exc
            raise

    # main loop ------------------------------------------------------------
    def execute(self) -> None:
        spec = self.spec
        try:
            for _ in range(spec.steps):
                if self.script is not None:
                    if self.cursor >= len(self.script) or (
                        self.quiesce_at is not None and self.sim.k.clock >= self.quiesce_at
                    ):
                        break
                    self._apply(self._next_scripted())
                else:
                    e = self.sim.choose()
                    self._apply(e)
                    self.sim.maybe_snapshot(e)
                if self.sim.k.clock % spec.detect_every == 0:
                    self.checkpoint()
                if self.failures:
                    return
            if "liveness" in spec.checks:
                self.wind_down()
        except InvariantViolation as exc:
            check = exc.check if exc.check in ALL_CHECKS else "chain-lemma"
            self.fail(check, str(exc))

    def wind_down(self) -> None:
        self.lines.append(f"QUIESCE {self.sim.k.clock}")
        if self.script is not None:
            while self.cursor < len(self.script):
                self._apply(self._next_scripted())
        else:
            self.sim.quiesce()
        self.checkpoint()
        self.liveness()

    # detection ------------------------------------------------------------
    def route(self) -> None:
        snaps = self.sim.snapshots
        m = self.spec.aggregators
        for s in snaps[self.routed :]:
            self.aggs[home_aggregator(s.actor, m)].offer(s)
        self.routed = len(snaps)

    def central(self) -> SnapshotSet:
        q = SnapshotSet()
        for g in self.aggs:
            q = q.union(g.snapshots)
        return q

    def checkpoint(self) -> None:
        self.route()
        k = self.sim.k
        step = k.clock
        gt = ground_truth(k)
        self.stats.checkpoints += 1
        self.lines.append(f"ORACLE {step} terminated={render_names(gt.terminated)}")
        results: list[DetectionResult] = []
        multi = self.spec.aggregators > 1
        for alg in self.spec.algorithms:
            fn = maximum_finalized_subset if alg == "chain" else heuristic_finalized_subset
            for g in self.aggs:
                res = fn(g.snapshots)
                label = f"{alg}:G{g.ident}" if multi else alg
                self.lines.append(render_detect_line(step, label, res.finalized.domain, res.removed))
                results.append(res)
            if multi:
                parts = [g.snapshots for g in self.aggs]
                coop = cooperative_detect(parts, heuristic=(alg == "heuristic"))
                found = set().union(*(set(r.finalized) for r in coop))
                removed = set().union(*(r.removed for r in coop))
                self.lines.append(render_detect_line(step, f"coop-{alg}", found, removed))
                results.extend(coop)
        detected = set().union(*(set(r.finalized) for r in results)) if results else set()
        self.stats.detections += len(results)
        self.stats.detected_max = max(self.stats.detected_max, len(detected))
        self.stats.sizes.append((step, len(detected), len(gt.terminated)))
        checks = self.spec.checks
        if "safety" in checks:
            wrong = detected - gt.terminated
            if wrong:
                self.fail("safety", f"step {step}: detected {render_names(wrong)} not terminated")
        if "maximality" in checks:
            self.check_maximality(step)
        if "summary-equivalence" in checks and multi:
            self.check_summaries(step)

    def check_maximality(self, step: int) -> None:
        q = self.central()
        rng = random.Random(f"{self.spec.seed}:{step}")
        sample = q if len(q) <= MAX_ENUMERATION else q.restrict(connected_sample(q, MAX_ENUMERATION, rng))
        for problem in maximality_problems(sample):
            self.fail("maximality", f"step {step}: {problem}")
        if sample:
            self.stats.maximality_sets += 1
        for cand in (q, maximum_finalized_subset(q).finalized):
            for problem in equivalence_problems(cand):
                self.fail("maximality", f"step {step}: {problem}")
            if cand:
                self.stats.equivalence_sets += 1

    def check_summaries(self, step: int) -> None:
        parts = [g.snapshots for g in self.aggs]
        for problem in coop_problems(parts):
            self.fail("summary-equivalence", f"step {step}: {problem}")
        self.stats.coop_instances += 1

    def liveness(self) -> None:
        gt = ground_truth(self.sim.k)
        q = self.central()
        found = set(maximum_finalized_subset(q).finalized)
        if found != set(gt.terminated):
            self.fail(
                "liveness",
                f"after wind-down detected {render_names(found)}, oracle says {render_names(gt.terminated)}",
            )
        if "heuristic" in self.spec.algorithms:
            h = set(heuristic_finalized_subset(q).finalized)
            if h != set(gt.terminated):
                self.fail("liveness", f"after wind-down heuristic found {render_names(h)}")

    # report ---------------------------------------------------------------
    def finish(self) -> RunReport:
        k = self.sim.k
        h = config_hash(k)
        self.lines.append(f"END {k.clock} {h}")
        failed = {c for c, _ in self.failures}
        verdicts = {c: c not in failed for c in sorted(self.spec.checks)}
        for c in failed - set(verdicts):
            verdicts[c] = False
        return RunReport(
            spec=self.spec,
            verdicts=verdicts,
            failures=list(self.failures),
            rule_counts=Counter(self.sim.rule_counts),
            stats=self.stats,
            final_hash=h,
            lines=self.lines,
        )


# --------------------------------------------------------------------------
# Check bodies, usable on their own
# --------------------------------------------------------------------------


def maximality_problems(q: SnapshotSet) -> list[str]:
    problems = []
    alg = maximum_finalized_subset(q)
    heur = heuristic_finalized_subset(q)
    brute = finalized_by_enumeration(q)
    if set(alg.finalized) != brute:
        problems.append(
            f"algorithm found {render_names(alg.finalized)}, enumeration found {render_names(brute)}"
        )
    if not is_finalized(alg.finalized):
        problems.append("algorithm output is not finalized")
    if not set(heur.finalized) <= set(alg.finalized):
        problems.append("heuristic output is not within the maximum finalized subset")
    if not is_finalized(heur.finalized):
        problems.append("heuristic output is not finalized")
    return problems


def equivalence_problems(q: SnapshotSet) -> list[str]:
    a, b = is_finalized(q), is_strongly_finalized(q)
    if a != b:
        return [f"{q}: finalized={a} but strongly finalized={b}"]
    return []


def coop_problems(parts: Sequence[SnapshotSet]) -> list[str]:
    problems = []
    union = SnapshotSet()
    for p in parts:
        union = union.union(p)
    central = set(maximum_finalized_subset(union).finalized)
    coop = set().union(*(set(r.finalized) for r in cooperative_detect(parts)))
    if coop != central:
        problems.append(f"cooperative found {render_names(coop)}, central found {render_names(central)}")
    pruned = [potentially_finalized_subset(p) for p in parts]
    pruned_union = SnapshotSet()
    joint = SnapshotSet()
    for i, p in enumerate(pruned):
        pruned_union = pruned_union.union(p)
        joint = joint.union(summarize(p, i).snapshots)
    full = set(maximum_finalized_subset(pruned_union).finalized)
    summ = set(maximum_finalized_subset(joint).finalized)
    if summ != full & set(joint):
        problems.append(
            f"summaries finalize {render_names(summ)}, full parts finalize {render_names(full & set(joint))}"
        )
    return problems


def connected_sample(q: SnapshotSet, size: int, rng: random.Random) -> list[ActorName]:
    """Up to ``size`` actors grown breadth-first from a random start over refob mentions."""
    adj: dict[ActorName, set] = {a: set() for a in q}
    for a in q:
        for r in q[a].knowledge.refobs():
            for b in (r.owner, r.target):
                if b != a and b in adj:
                    adj[a].add(b)
                    adj[b].add(a)
    names = list(q.domain)
    chosen: list[ActorName] = []
    seen: set = set()
    while len(chosen) < size and len(seen) < len(names):
        start = rng.choice([a for a in names if a not in seen])
        frontier = [start]
        seen.add(start)
        while frontier and len(chosen) < size:
            a = frontier.pop(0)
            chosen.append(a)
            nbrs = sorted(adj[a] - seen)
            rng.shuffle(nbrs)
            for b in nbrs:
                seen.add(b)
                frontier.append(b)
    return chosen


# --------------------------------------------------------------------------
# Entry points
# --------------------------------------------------------------------------


def _write_trace(lines: Iterable[str], path: str | os.PathLike | None) -> str:
    if path is None:
        fd, path = tempfile.mkstemp(prefix="drl-", suffix=".trace")
        os.close(fd)
    Path(path).write_text("\n".join(lines) + "\n")
    return str(path)


def run_scenario(spec: RunSpec, trace_out: str | os.PathLike | None = None, raise_on_failure: bool = True) -> RunReport:
    run = _Run(spec)
    run.execute()
    report = run.finish()
    if trace_out is not None or not report.passed:
        report.trace_path = _write_trace(report.lines, trace_out)
    if not report.passed and raise_on_failure:
        check, message = report.failures[0]
        raise CheckFailed(f"seed {spec.seed}: {check}: {message}", report, spec.seed)
    return report


@dataclass
class ParsedTrace:
    spec: RunSpec
    events: list
    quiesce_at: int | None
    outputs: list
    end: str | None


def parse_trace(text: str) -> ParsedTrace:
    lines = text.splitlines()
    if len(lines) < 2 or not lines[0].startswith("# drl-trace "):
        raise CorruptTrace("missing trace header")
    head = lines[0].split()
    try:
        version = int(head[2])
    except (IndexError, ValueError) as exc:
        raise CorruptTrace("malformed trace header") from exc
    if version != TRACE_VERSION:
        raise VersionMismatch(f"trace version {version}, expected {TRACE_VERSION}")
    if not lines[1].startswith("# spec "):
        raise CorruptTrace("missing spec line")
    try:
        spec = RunSpec.from_json(lines[1][len("# spec ") :])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptTrace(f"bad spec line: {exc}") from exc
    if head[4:5] != [f"policy={spec.policy.digest()}"]:
        raise CorruptTrace("policy hash does not match the recorded spec")
    events, outputs = [], []
    quiesce_at = end = None
    for ln in lines[2:]:
        if not ln.strip():
            continue
        word = ln.split(" ", 1)[0]
        if word in ("ORACLE", "DETECT"):
            outputs.append(ln)
        elif word == "QUIESCE":
            quiesce_at = int(ln.split()[1])
        elif word == "END":
            end = ln
        else:
            events.append(parse_event_line(ln))
    return ParsedTrace(spec, events, quiesce_at, outputs, end)


def replay_trace(path: str | os.PathLike) -> RunReport:
    """Re-apply a recorded trace, recompute every checkpoint, and compare with the recording."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CorruptTrace(f"{path}: {exc}") from exc
    parsed = parse_trace(text)
    run = _Run(parsed.spec, script=parsed.events, quiesce_at=parsed.quiesce_at)
    run.execute()
    if run.cursor != len(parsed.events):
        raise CorruptTrace(f"{len(parsed.events) - run.cursor} recorded events were not replayed")
    report = run.finish()
    regenerated = [ln for ln in report.lines if ln.split(" ", 1)[0] in ("ORACLE", "DETECT")]
    if regenerated != parsed.outputs:
        raise CorruptTrace("replayed checkpoints differ from the recording")
    if parsed.end is not None and report.lines[-1] != parsed.end:
        raise CorruptTrace("replayed terminal configuration differs from the recording")
    report.trace_path = str(path)
    return report


@dataclass
class SweepReport:
    reports: list
    first_failure: CheckFailed | None = None

    @property
    def passed(self) -> bool:
        return self.first_failure is None and all(r.passed for r in self.reports)

    def pass_rates(self) -> dict:
        out: dict = {}
        for r in self.reports:
            for c, ok in r.verdicts.items():
                good, total = out.get(c, (0, 0))
                out[c] = (good + ok, total + 1)
        return out


def _sweep_one(args: tuple[RunSpec, str | None]) -> RunReport:
    spec, out = args
    return run_scenario(spec, out, raise_on_failure=False)


def sweep(
    seeds: Iterable[int],
    template: RunSpec,
    trace_dir: str | os.PathLike | None = None,
    jobs: int = 1,
) -> SweepReport:
    """Run the template once per seed and remember the first failure in seed order.

    Every run is isolated, so ``jobs > 1`` farms them out to worker processes
    without changing any verdict.
    """
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("empty seed range")
    if trace_dir is not None:
        Path(trace_dir).mkdir(parents=True, exist_ok=True)
    work = []
    for seed in seeds:
        spec = dataclasses.replace(template, seed=seed)
        out = None if trace_dir is None else str(Path(trace_dir) / f"seed-{seed}.trace")
        work.append((spec, out))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_sweep_one, work, chunksize=4))
    else:
        reports = [_sweep_one(w) for w in work]
    first = None
    for r in sorted(reports, key=lambda r: r.spec.seed):
        if not r.passed:
            check, message = r.failures[0]
            first = CheckFailed(f"seed {r.spec.seed}: {check}: {message}", r, r.spec.seed)
            break
    return SweepReport(reports, first)


def terminal_rendering(report: RunReport) -> str:
    """Canonical rendering of a trace's terminal configuration, by replay."""
    parsed = parse_trace("\n".join(report.lines))
    k = Simulator(parsed.spec.policy, parsed.spec.seed).k
    for _, e in parsed.events:
        k = apply_event(k, e)
    return render_configuration(k)
