"""Seeded scheduler, execution driver and wind-down.

The scheduler picks a category by weight (deliver, spawn, send, idle,
deactivate, snapshot, compact, external), then picks uniformly inside it.
Some choices commit the actor to a short sequence of follow-up events
(``SendInfo`` right after a ``Send`` in the default mode, the whole
deactivation batch in batching mode, an optional snapshot after an actor
settles); follow-ups run before anything else is scheduled so they always
remain enabled.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import random
from collections import Counter, deque
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable

from .detection import Snapshot as SnapshotRecord
from .engine import (
    ENV_ORIGIN,
    Compaction,
    Configuration,
    Event,
    Idle,
    In,
    Info,
    Receive,
    Release,
    Send,
    SendInfo,
    SendRelease,
    Snapshot,
    Spawn,
    apply_event,
    deliveries,
    initial_configuration,
    pending_infos,
    spawn_event,
)
from .errors import ConfigError, InternalError, InvariantViolation, NonQuiescent
from .facts import ActorName, Refob, Token
from .invariants import step_problems

CATEGORIES = ("deliver", "spawn", "send", "idle", "deactivate", "snapshot", "compact", "external")

DEFAULT_WEIGHTS = {
    "deliver": 8.0,
    "spawn": 2.0,
    "send": 4.0,
    "idle": 1.0,
    "deactivate": 1.5,
    "snapshot": 1.0,
    "compact": 1.0,
    "external": 1.0,
}


@dataclass(frozen=True)
class Policy:
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    max_refobs_per_message: int = 3
    busy_budget: int = 6
    max_actors: int = 20
    fifo: bool = False
    batch_release: bool = False
    snapshot_rate: float = 0.5

    # flat config keys -> field names
    _KEYS = {
        "limits.maxRefobsPerMessage": ("max_refobs_per_message", int),
        "limits.busyBudget": ("busy_budget", int),
        "limits.maxActors": ("max_actors", int),
        "mode.fifo": ("fifo", bool),
        "mode.batchRelease": ("batch_release", bool),
        "snapshot.rate": ("snapshot_rate", float),
    }

    def __post_init__(self) -> None:
        unknown = set(self.weights) - set(CATEGORIES)
        if unknown:
            raise ConfigError(f"unknown scheduler categories: {sorted(unknown)}")
        if any(w < 0 for w in self.weights.values()):
            raise ConfigError("weights must be non-negative")
        if self.max_refobs_per_message < 0 or self.busy_budget < 1 or self.max_actors < 1:
            raise ConfigError("limits must be positive")
        if not 0.0 <= self.snapshot_rate <= 1.0:
            raise ConfigError("snapshot.rate must lie in [0, 1]")

    @classmethod
    def from_mapping(cls, items: dict[str, str], base: Policy | None = None) -> Policy:
        """Build from flat ``key = value`` pairs; unknown keys are an error."""
        base = base or cls()
        weights = dict(base.weights)
        kwargs = {f.name: getattr(base, f.name) for f in fields(cls) if f.name != "weights"}
        for key, raw in items.items():
            raw = str(raw).strip()
            try:
                if key.startswith("weights."):
                    cat = key[len("weights.") :]
                    if cat not in CATEGORIES:
                        raise ConfigError(f"unknown weight {key}")
                    weights[cat] = float(raw)
                elif key in cls._KEYS:
                    name, kind = cls._KEYS[key]
                    kwargs[name] = _parse_bool(raw) if kind is bool else kind(raw)
                else:
                    raise ConfigError(f"unknown config key {key!r}")
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        return cls(weights=weights, **kwargs)

    @classmethod
    def from_file(cls, path: str | Path, base: Policy | None = None) -> Policy:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string("[policy]\n" + Path(path).read_text())
        except (configparser.Error, OSError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_mapping(dict(parser["policy"]), base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = {c: self.weights.get(c, 0.0) for c in CATEGORIES}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Policy:
        return cls(**d)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


@dataclass
class Trace:
    seed: int
    policy: Policy
    events: list[tuple[int, Event]]
    terminal: Configuration


class Simulator:
    """Drives one execution from a configuration with a seeded generator.

    ``checked`` runs every per-step invariant and raises
    :class:`InvariantViolation` on the first failure.
    """

    def __init__(
        self,
        policy: Policy | None = None,
        seed: int = 0,
        config: Configuration | None = None,
        checked: bool = False,
        check_chain: bool = True,
        check_counts: bool = True,
        full_check_every: int = 25,
    ) -> None:
        self.policy = policy or Policy()
        self.rng = random.Random(seed)
        self.k = config if config is not None else initial_configuration()
        self.checked = checked
        self.check_chain = check_chain
        self.check_counts = check_counts
        self.full_check_every = full_check_every
        self.followups: deque[Event] = deque()
        self.actions: Counter = Counter()
        self.events: list[tuple[int, Event]] = []
        self.snapshots: list[SnapshotRecord] = []
        self.last_change: dict[ActorName, int] = {a: self.k.clock for a in self.k.actors}
        self.last_snapshot: dict[ActorName, int] = {}
        self.released: set[Token] = set()
        self.rule_counts: Counter = Counter()
        self.listeners: list[Callable[[Event, Configuration, Configuration], None]] = []

    @property
    def step(self) -> int:
        return self.k.clock

    # application ----------------------------------------------------------
    def apply(self, e: Event) -> Configuration:
        before = self.k
        after = apply_event(before, e)
        if self.checked:
            full = self.full_check_every > 0 and after.clock % self.full_check_every == 0
            released = self.released | _release_of(e)
            bad = step_problems(before, e, after, released, self.check_chain, self.check_counts, full)
            if bad:
                name, problems = next(iter(bad.items()))
                raise InvariantViolation(name, "; ".join(problems[:3]), after.clock)
        self.k = after
        self.events.append((after.clock, e))
        self.rule_counts[type(e).__name__] += 1
        if isinstance(e, Release):
            self.released.add(e.x.token)
        if isinstance(e, Snapshot):
            self.snapshots.append(SnapshotRecord(e.actor, after.knowledge(e.actor), after.clock))
            self.last_snapshot[e.actor] = after.clock
        else:
            for a in _changed(before, after, e):
                self.last_change[a] = after.clock
        if isinstance(e, (Idle, Receive)):
            self.actions[e.actor] = 0
        elif isinstance(e, (Spawn, Send, SendRelease)):
            self.actions[e.actor] += 1
        for listener in self.listeners:
            listener(e, before, after)
        return after

    def run(self, steps: int) -> None:
        for _ in range(steps):
            e = self.choose()
            self.apply(e)
            self.maybe_snapshot(e)

    # choice ---------------------------------------------------------------
    def choose(self) -> Event:
        if self.followups:
            return self.followups.popleft()
        k = self.k
        p = self.policy
        busy = [a for a in sorted(k.actors) if k.actors[a].busy]
        idle = [a for a in sorted(k.actors) if not k.actors[a].busy]
        fresh = [a for a in busy if self.actions[a] < p.busy_budget]
        cands: dict[str, list] = {}
        deliver = [e for a in idle if k.mailbox(a) for e in deliveries(k, a, p.fifo)]
        if deliver:
            cands["deliver"] = deliver
        if fresh and len(k.actors) < p.max_actors:
            cands["spawn"] = fresh
        senders = [a for a in fresh if k.actors[a].knowledge.index.activated]
        if senders:
            cands["send"] = senders
            cands["deactivate"] = senders
        if busy:
            cands["idle"] = busy
        if idle:
            cands["snapshot"] = idle
        compact = [e for a in idle for e in _compactions(k, a)]
        if compact:
            cands["compact"] = compact
        external = [e for b in sorted(k.externals) if k.mailbox(b) for e in deliveries(k, b, p.fifo)]
        external += [("in", a) for a in sorted(k.receptionists)]
        if external:
            cands["external"] = external
        if not cands:
            raise InternalError("no enabled events")
        names = [c for c in CATEGORIES if c in cands and p.weights.get(c, 0) > 0]
        if not names:
            names = [c for c in CATEGORIES if c in cands]
            cat = names[self.rng.randrange(len(names))]
        else:
            cat = self.rng.choices(names, weights=[p.weights[c] for c in names])[0]
        pick = cands[cat][self.rng.randrange(len(cands[cat]))]
        return self._expand(cat, pick)

    def _expand(self, cat: str, pick) -> Event:
        k = self.k
        if cat in ("deliver", "compact"):
            return pick
        if cat == "external":
            if isinstance(pick, tuple):
                return self._in_event(pick[1])
            return pick
        if cat == "idle":
            return Idle(pick)
        if cat == "snapshot":
            return Snapshot(pick)
        if cat == "spawn":
            return spawn_event(k, pick)
        if cat == "send":
            return self._send_event(pick)
        if cat == "deactivate":
            return self._deactivate(pick)
        raise InternalError(f"unknown category {cat}")

    def _send_event(self, a: ActorName) -> Event:
        phi = self.k.actors[a].knowledge
        active = phi.activated()
        x = active[self.rng.randrange(len(active))]
        n = self.rng.randint(0, min(self.policy.max_refobs_per_message, len(active)))
        uses = self.rng.sample(active, n)
        origin = str(a)
        created = tuple(
            Refob(self.k.next_token(origin, i), x.target, y.target) for i, y in enumerate(uses)
        )
        e = Send(x, tuple(uses), created)
        if not self.policy.batch_release:
            self.followups.extend(SendInfo(y, z) for y, z in zip(uses, created))
        return e

    def _deactivate(self, a: ActorName) -> Event:
        phi = self.k.actors[a].knowledge
        active = phi.activated()
        if not self.policy.batch_release:
            x = active[self.rng.randrange(len(active))]
            # default mode keeps no CreatedUsing facts around, but a run may start from any state
            self.followups.extend(SendInfo(f.x, f.y) for f in pending_infos(phi) if f.x == x)
            self.followups.append(SendRelease(x))
            return self.followups.popleft()
        targets = sorted({r.target for r in active})
        c = targets[self.rng.randrange(len(targets))]
        self.followups.extend(SendInfo(f.x, f.y) for f in pending_infos(phi) if f.x.target == c)
        self.followups.extend(SendRelease(r) for r in active if r.target == c)
        return self.followups.popleft()

    def _in_event(self, a: ActorName) -> In:
        k = self.k
        n = self.rng.randint(0, self.policy.max_refobs_per_message)
        pool = sorted(k.receptionists) + sorted(k.externals)
        refobs = []
        fresh_ext = False
        for i in range(n):
            if not fresh_ext and self.rng.random() < 0.2:
                target = ActorName.ext(k.next_external)
                fresh_ext = True
            else:
                target = pool[self.rng.randrange(len(pool))]
            refobs.append(Refob(k.next_token(ENV_ORIGIN, i), a, target))
        return In(a, tuple(refobs))

    # bookkeeping ----------------------------------------------------------
    def maybe_snapshot(self, e: Event) -> None:
        if isinstance(e, (Idle, Info, Release)) and self.rng.random() < self.policy.snapshot_rate:
            self.followups.append(Snapshot(e.actor))

    def needs_snapshot(self, a: ActorName) -> bool:
        return self.last_snapshot.get(a, -1) < self.last_change.get(a, 0)

    # wind-down ------------------------------------------------------------
    def quiesce(self, bound: int | None = None) -> Configuration:
        """Wind down: no external input, no new sends, deliver everything, snapshot everyone."""
        if bound is None:
            bound = 50 * max(1, len(self.k.actors))
        start = self.k.clock
        while True:
            if self.k.clock - start > bound:
                raise NonQuiescent(f"wind-down exceeded {bound} steps")
            e = self._quiesce_choice()
            if e is None:
                return self.k
            self.apply(e)

    def _quiesce_choice(self) -> Event | None:
        if self.followups:
            return self.followups.popleft()
        k = self.k
        for a in sorted(k.actors):
            st = k.actors[a]
            if st.busy:
                return Idle(a)
        for a in sorted(k.actors):
            ds = deliveries(k, a, self.policy.fifo)
            if ds:
                return ds[0]
        for b in sorted(k.externals):
            ds = deliveries(k, b)
            if ds:
                return ds[0]
        for a in sorted(k.actors):
            cs = _compactions(k, a)
            if cs:
                return cs[0]
        for a in sorted(k.actors):
            if self.needs_snapshot(a):
                return Snapshot(a)
        return None


def _compactions(k: Configuration, a: ActorName) -> list[Compaction]:
    ix = k.actors[a].knowledge.index
    return [Compaction(ix.created[t]) for t in sorted(ix.created, key=Token.sort_key) if t in ix.released]


def _release_of(e: Event) -> set[Token]:
    return {e.x.token} if isinstance(e, Release) else set()


def _changed(before: Configuration, after: Configuration, e: Event) -> Iterable[ActorName]:
    """Internal actors whose state (status or knowledge) the event changed."""
    out = []
    for a, st in after.actors.items():
        old = before.actors.get(a)
        if old is None or old is not st:
            out.append(a)
    return out


def run_execution(
    seed: int, steps: int, policy: Policy | None = None, checked: bool = False
) -> Trace:
    if steps < 0:
        raise ValueError("steps must be non-negative")
    sim = Simulator(policy, seed, checked=checked)
    sim.run(steps)
    return Trace(seed, sim.policy, list(sim.events), sim.k)


def replay_events(events: Iterable[Event], config: Configuration | None = None) -> Configuration:
    k = config if config is not None else initial_configuration()
    for e in events:
        k = apply_event(k, e)
    return k


def quiesce(k: Configuration, policy: Policy | None = None, bound: int | None = None) -> Configuration:
    sim = Simulator(policy, 0, config=k)
    return sim.quiesce(bound)
