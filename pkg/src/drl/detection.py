"""Termination detection over sets of actor snapshots.

A :class:`SnapshotSet` holds at most one snapshot per internal actor.  All
predicates read each fact from the snapshot that would hold it in an
execution:

* ``Created`` for a chain base and ``Released``/``RecvCount`` come from the
  target's snapshot;
* ``Activated``, ``SentCount`` and ``CreatedUsing(x, _)`` come from the
  owner's snapshot;
* ``Created`` for ``Unreleased`` may come from any snapshot (a sender learns
  of a refob it created through its ``CreatedUsing`` facts).

On sets produced by the engine this coincides with deriving from the plain
union of all facts, because every fact only ever lives at that holder.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Mapping

from .facts import (
    Activated,
    ActorName,
    Created,
    CreatedUsing,
    Fact,
    KnowledgeSet,
    RecvCount,
    Refob,
    Released,
    SentCount,
    Token,
    Unreleased,
    derives,
)

__all__ = [
    "Snapshot",
    "SnapshotSet",
    "DetectionResult",
    "Aggregator",
    "q_derives",
    "chain_predicate",
    "relevant_predicate",
    "is_finalized",
    "is_strongly_finalized",
    "depends_on",
    "potentially_depends_on",
    "maximum_finalized_subset",
    "heuristic_finalized_subset",
    "finalized_by_enumeration",
    "is_simple_garbage",
    "render_detect_line",
]


@dataclass(frozen=True, slots=True)
class Snapshot:
    actor: ActorName
    knowledge: KnowledgeSet
    taken_at: int = 0


def _sorted_names(names: Iterable[ActorName]) -> tuple[ActorName, ...]:
    return tuple(sorted(names))


class SnapshotSet(Mapping[ActorName, Snapshot]):
    """Immutable mapping from internal actors to their snapshots.

    Chain and dependency structure is computed once per instance and cached.
    """

    def __init__(self, snapshots: Iterable[Snapshot] | Mapping[ActorName, Snapshot] = ()) -> None:
        items = snapshots.values() if isinstance(snapshots, Mapping) else snapshots
        by_actor: dict[ActorName, Snapshot] = {}
        for s in items:
            if s.actor.external:
                raise ValueError(f"snapshot of external actor {s.actor}")
            if s.actor in by_actor:
                raise ValueError(f"two snapshots of {s.actor}")
            by_actor[s.actor] = s
        self._by_actor = by_actor

    @classmethod
    def of(cls, knowledge: Mapping[ActorName, Iterable[Fact]], taken_at: int = 0) -> SnapshotSet:
        """Build from plain fact collections, mostly for tests."""
        return cls(
            Snapshot(a, phi if isinstance(phi, KnowledgeSet) else KnowledgeSet(phi), taken_at)
            for a, phi in knowledge.items()
        )

    # mapping protocol -----------------------------------------------------
    def __getitem__(self, a: ActorName) -> Snapshot:
        return self._by_actor[a]

    def __iter__(self) -> Iterator[ActorName]:
        return iter(self._by_actor)

    def __len__(self) -> int:
        return len(self._by_actor)

    def __repr__(self) -> str:
        return f"SnapshotSet({' '.join(map(str, self.domain))})"

    def __eq__(self, other: object) -> bool:
        if isinstance(other, SnapshotSet):
            return self._by_actor == other._by_actor
        return NotImplemented

    def __hash__(self) -> int:
        return hash(frozenset(self._by_actor.items()))

    @cached_property
    def domain(self) -> tuple[ActorName, ...]:
        return _sorted_names(self._by_actor)

    def phi(self, a: ActorName) -> KnowledgeSet | None:
        s = self._by_actor.get(a)
        return None if s is None else s.knowledge

    def restrict(self, names: Iterable[ActorName]) -> SnapshotSet:
        return SnapshotSet(self._by_actor[a] for a in names if a in self._by_actor)

    def without(self, names: Iterable[ActorName]) -> SnapshotSet:
        drop = set(names)
        return SnapshotSet(s for a, s in self._by_actor.items() if a not in drop)

    def union(self, other: SnapshotSet) -> SnapshotSet:
        merged = dict(self._by_actor)
        for a, s in other.items():
            if a in merged and merged[a] != s:
                raise ValueError(f"snapshot sets disagree on {a}")
            merged[a] = s
        return SnapshotSet(merged)

    def latest_step(self) -> int:
        return max((s.taken_at for s in self._by_actor.values()), default=0)

    # derived structure ----------------------------------------------------
    def refobs(self) -> set[Refob]:
        out: set[Refob] = set()
        for s in self._by_actor.values():
            out |= s.knowledge.refobs()
        return out

    def is_released(self, x: Refob) -> bool:
        phi = self.phi(x.target)
        return phi is not None and phi.is_released(x)

    def knows_created(self, x: Refob) -> bool:
        return any(s.knowledge.knows_created(x) for s in self._by_actor.values())

    def is_unreleased(self, x: Refob) -> bool:
        return not self.is_released(x) and x.token in self._created_anywhere

    @cached_property
    def _created_anywhere(self) -> dict[Token, Refob]:
        out: dict[Token, Refob] = {}
        for s in self._by_actor.values():
            ix = s.knowledge.index
            out.update(ix.created)
            out.update(ix.created_via)
        return out

    def sent_count(self, x: Refob) -> int:
        phi = self.phi(x.owner)
        return 0 if phi is None else phi.sent_count(x)

    def recv_count(self, x: Refob) -> int:
        phi = self.phi(x.target)
        return 0 if phi is None else phi.recv_count(x)

    def is_activated(self, x: Refob) -> bool:
        phi = self.phi(x.owner)
        return phi is not None and phi.is_activated(x)

    def is_relevant(self, x: Refob) -> bool:
        return self.is_activated(x) and self.sent_count(x) == self.recv_count(x)

    def chained_into(self, b: ActorName) -> dict[Token, Refob]:
        # computed per actor on demand so that early-exit callers stay cheap
        cache = self._chain_cache
        if b not in cache:
            s = self._by_actor.get(b)
            cache[b] = {} if s is None else self._search_chains(b, s.knowledge)
        return cache[b]

    @cached_property
    def _chain_cache(self) -> dict[ActorName, dict[Token, Refob]]:
        return {}

    @cached_property
    def _chains(self) -> dict[ActorName, dict[Token, Refob]]:
        out = {}
        for b in self._by_actor:
            found = self.chained_into(b)
            if found:
                out[b] = found
        return out

    def _search_chains(self, b: ActorName, phi: KnowledgeSet) -> dict[Token, Refob]:
        ix = phi.index
        released = ix.released
        found: dict[Token, Refob] = {}
        work: deque = deque()
        for table in (ix.created, ix.created_via):
            for tok, r in table.items():
                if r.target == b and tok not in released and tok not in found:
                    found[tok] = r
                    work.append(r)
        while work:
            r = work.popleft()
            owner = self.phi(r.owner)
            if owner is None:
                continue
            for z in owner.created_using(r):
                if z.token not in released and z.token not in found:
                    found[z.token] = z
                    work.append(z)
        return found

    @cached_property
    def chain_edges(self) -> dict[ActorName, frozenset]:
        """``A -> {B}`` for chained refobs ``x:A->B`` with both ends in the set."""
        edges: dict[ActorName, set] = {}
        for b, refs in self._chains.items():
            for r in refs.values():
                if r.owner in self._by_actor:
                    edges.setdefault(r.owner, set()).add(b)
        return {a: frozenset(bs) for a, bs in edges.items()}

    @cached_property
    def unreleased_edges(self) -> dict[ActorName, frozenset]:
        """``A -> {B}`` for refobs ``x:A->B`` derivably unreleased, both ends in the set."""
        edges: dict[ActorName, set] = {}
        for r in self._created_anywhere.values():
            if r.owner in self._by_actor and r.target in self._by_actor and not self.is_released(r):
                edges.setdefault(r.owner, set()).add(r.target)
        return {a: frozenset(bs) for a, bs in edges.items()}

    @cached_property
    def irrelevant_targets(self) -> frozenset:
        """Targets of chained refobs that fail ``Relevant``; removal starts here."""
        return frozenset(
            b for b, refs in self._chains.items() if any(not self.is_relevant(r) for r in refs.values())
        )


def forward_closure(edges: Mapping[ActorName, Iterable[ActorName]], start: Iterable[ActorName]) -> set[ActorName]:
    seen = set(start)
    work = deque(seen)
    while work:
        a = work.popleft()
        for b in edges.get(a, ()):
            if b not in seen:
                seen.add(b)
                work.append(b)
    return seen


# --------------------------------------------------------------------------
# Predicates
# --------------------------------------------------------------------------


def q_derives(q: SnapshotSet, goal) -> bool:
    """Derivation against the set as a whole; see the module docstring for holders."""
    if isinstance(goal, Created):
        return q.knows_created(goal.x)
    if isinstance(goal, Released):
        return q.is_released(goal.x)
    if isinstance(goal, Unreleased):
        return q.is_unreleased(goal.x)
    if isinstance(goal, Activated):
        return q.is_activated(goal.x)
    if isinstance(goal, SentCount):
        return q.sent_count(goal.x) == goal.n
    if isinstance(goal, RecvCount):
        return q.recv_count(goal.x) == goal.n
    if isinstance(goal, CreatedUsing):
        phi = q.phi(goal.x.owner)
        return phi is not None and derives(phi, goal)
    raise TypeError(f"cannot derive {goal!r}")


def chain_predicate(q: SnapshotSet, x: Refob) -> bool:
    chained = q.chained_into(x.target).get(x.token)
    return chained == x


def relevant_predicate(q: SnapshotSet, x: Refob) -> bool:
    return q.is_relevant(x)


def is_finalized(q: SnapshotSet) -> bool:
    for b in q:
        for r in q.chained_into(b).values():
            if r.owner not in q or not q.is_relevant(r):
                return False
    return True


def is_strongly_finalized(q: SnapshotSet) -> bool:
    for r in q._created_anywhere.values():
        if r.target in q and not q.is_released(r):
            if r.owner not in q or not q.is_relevant(r):
                return False
    return True


def depends_on(q: SnapshotSet) -> dict[ActorName, frozenset]:
    """``B -> {A : B depends on A}``, reflexive and transitive."""
    inverse: dict[ActorName, set] = {}
    for a, bs in q.chain_edges.items():
        for b in bs:
            inverse.setdefault(b, set()).add(a)
    return {b: frozenset(forward_closure(inverse, [b])) for b in q}


def potentially_depends_on(q: SnapshotSet) -> dict[ActorName, frozenset]:
    inverse: dict[ActorName, set] = {}
    for a, bs in q.unreleased_edges.items():
        for b in bs:
            inverse.setdefault(b, set()).add(a)
    return {b: frozenset(forward_closure(inverse, [b])) for b in q}


# --------------------------------------------------------------------------
# Algorithms
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectionResult:
    finalized: SnapshotSet
    removed: frozenset = field(default_factory=frozenset)
    algorithm: str = "chain"

    @property
    def names(self) -> tuple[ActorName, ...]:
        return self.finalized.domain

    def render(self, step: int) -> str:
        return render_detect_line(step, self.algorithm, self.finalized.domain, self.removed)


def render_detect_line(step: int, algorithm: str, finalized, removed) -> str:
    def names(ns) -> str:
        return "[" + " ".join(str(a) for a in sorted(ns)) + "]"

    return f"DETECT {step} {algorithm} finalized={names(finalized)} removed={names(removed)}"


def maximum_finalized_subset(q: SnapshotSet) -> DetectionResult:
    """Drop every actor that depends on a target of an irrelevant chained refob."""
    s2 = forward_closure(q.chain_edges, q.irrelevant_targets)
    return DetectionResult(q.without(s2), frozenset(s2), "chain")


def heuristic_finalized_subset(q: SnapshotSet) -> DetectionResult:
    """Like :func:`maximum_finalized_subset` but spreads removal along every unreleased refob."""
    s2 = forward_closure(q.unreleased_edges, q.irrelevant_targets)
    return DetectionResult(q.without(s2), frozenset(s2), "heuristic")


def finalized_by_enumeration(q: SnapshotSet) -> frozenset:
    """Union of all finalized subsets, by brute force.  Exponential; meant for small sets."""
    names = q.domain
    n = len(names)
    pos = {a: i for i, a in enumerate(names)}
    # Refobs recorded in B's own snapshot start a chain into B in every subset
    # holding B, so their owners must come along and they must be relevant.
    # This only filters subsets; the full check still decides.
    need: list[int | None] = []
    for b in names:
        ix = q[b].knowledge.index
        m = 0
        for table in (ix.created, ix.created_via):
            for tok, r in table.items():
                if r.target != b or tok in ix.released:
                    continue
                if r.owner not in pos or not q.is_relevant(r):
                    m = None
                    break
                m |= 1 << pos[r.owner]
            if m is None:
                break
        need.append(m)
    found = 0
    for mask in range(1, 1 << n):
        if mask & found == mask:
            continue
        if any(mask >> i & 1 and (need[i] is None or need[i] & mask != need[i]) for i in range(n)):
            continue
        if is_finalized(q.restrict(names[i] for i in range(n) if mask >> i & 1)):
            found |= mask
    return frozenset(names[i] for i in range(n) if found >> i & 1)


def is_simple_garbage(s: Snapshot) -> bool:
    """Local test: no unreleased inbound refob from another owner, and no self-message can be in flight.

    A released refob is harmless: its release carried the final send count,
    which includes the Info messages for refobs made from it.  A self-refob passes when it is active with agreeing counts, or when its
    release has already been processed.  A deactivated but unreleased
    self-refob has lost its send count while its ``ReleaseMsg`` (and maybe
    earlier messages) are still queued, so it never passes.
    """
    b = s.actor
    phi = s.knowledge
    ix = phi.index
    for table in (ix.created, ix.created_via):
        for r in table.values():
            if r.target != b:
                continue
            if phi.is_released(r):
                continue
            if r.owner != b:
                return False
            if not phi.is_activated(r) or phi.sent_count(r) != phi.recv_count(r):
                return False
    return True


# --------------------------------------------------------------------------
# Aggregator store
# --------------------------------------------------------------------------


class Aggregator:
    """Keeps the newest snapshot of every actor routed to it."""

    def __init__(self, ident: int = 0) -> None:
        self.ident = ident
        self._store: dict[ActorName, Snapshot] = {}
        self._view: SnapshotSet | None = None

    def offer(self, s: Snapshot) -> bool:
        cur = self._store.get(s.actor)
        if cur is not None and cur.taken_at >= s.taken_at:
            return False
        self._store[s.actor] = s
        self._view = None
        return True

    def discard(self, names: Iterable[ActorName]) -> None:
        for a in names:
            if self._store.pop(a, None) is not None:
                self._view = None

    @property
    def snapshots(self) -> SnapshotSet:
        if self._view is None:
            self._view = SnapshotSet(self._store.values())
        return self._view

    def __len__(self) -> int:
        return len(self._store)
