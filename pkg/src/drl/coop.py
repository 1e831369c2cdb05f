"""Cooperative detection across several snapshot aggregators.

Each aggregator owns a disjoint part of the snapshots.  Instead of shipping
whole parts around, an aggregator prunes what can never be finalized,
then builds a *summary*: the facts about refobs that cross its boundary,
plus synthetic ("fake") refobs recording which of its actors depend on
which of its receptionists.  Finalized receptionists computed over the
union of summaries coincide with those of the union of the full parts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .detection import (
    DetectionResult,
    Snapshot,
    SnapshotSet,
    depends_on,
    forward_closure,
    heuristic_finalized_subset,
    maximum_finalized_subset,
)
from .errors import DomainOverlap
from .facts import (
    Activated,
    ActorName,
    Created,
    CreatedUsing,
    KnowledgeSet,
    RecvCount,
    Refob,
    Released,
    SentCount,
    Token,
    render_facts,
)

__all__ = [
    "Summary",
    "potentially_finalized_subset",
    "receptionists_of",
    "summarize",
    "cooperative_detect",
    "fake_origin",
]


def fake_origin(aggregator: int) -> str:
    """Token namespace for synthetic refobs; engine tokens never use the ``G`` prefix."""
    return f"G{aggregator}"


def potentially_finalized_subset(q: SnapshotSet) -> SnapshotSet:
    """Remove every actor depending on an irrelevant chained refob whose owner is in ``q``."""
    bad = {
        b
        for b in q
        for r in q.chained_into(b).values()
        if r.owner in q and not q.is_relevant(r)
    }
    return q.without(forward_closure(q.chain_edges, bad))


def receptionists_of(q: SnapshotSet) -> frozenset:
    return frozenset(b for b in q if any(r.owner not in q for r in q.chained_into(b).values()))


@dataclass(frozen=True)
class Summary:
    snapshots: SnapshotSet
    fake_refobs: tuple[Refob, ...]
    receptionists: frozenset
    aggregator: int = 0

    def render(self) -> str:
        lines = [f"SUMMARY G{self.aggregator}"]
        lines.append("RECEPTIONISTS " + " ".join(str(a) for a in sorted(self.receptionists)))
        for a in self.snapshots.domain:
            lines.append(f"snapshot {a}")
            body = render_facts(self.snapshots[a].knowledge)
            lines.extend("  " + ln for ln in body.split("\n") if ln)
        lines.append("FAKE")
        lines.extend("  " + str(r) for r in self.fake_refobs)
        return "\n".join(lines)


def summarize(q: SnapshotSet, aggregator: int = 0) -> Summary:
    """Least summary of a potentially finalized set ``q``."""
    recs = receptionists_of(q)

    def boundary(r: Refob) -> bool:
        return r.target in recs or r.target not in q

    kept: dict[ActorName, set] = {}
    for a in q.domain:
        phi = q[a].knowledge
        facts = set()
        for f in phi:
            t = type(f)
            if t in (Activated, CreatedUsing, SentCount):
                if f.x.owner == a and boundary(f.x):
                    facts.add(f)
            elif t in (Created, Released, RecvCount):
                if a in recs and f.x.target == a:
                    facts.add(f)
        if facts:
            kept[a] = facts

    deps = depends_on(q)
    origin = fake_origin(aggregator)
    fakes: list[Refob] = []
    seq = 0
    for b in sorted(kept):
        for a in sorted(recs & deps[b]):
            if a == b:
                continue
            x = Refob(Token(origin, seq), a, b)
            seq += 1
            fakes.append(x)
    for x in fakes:
        kept[x.owner].add(Activated(x))
        kept[x.target].add(Created(x))

    taken = {a: q[a].taken_at for a in kept}
    snaps = SnapshotSet(Snapshot(a, KnowledgeSet(fs), taken[a]) for a, fs in kept.items())
    return Summary(snaps, tuple(fakes), recs, aggregator)


def cooperative_detect(parts: Sequence[SnapshotSet], heuristic: bool = False) -> list[DetectionResult]:
    """Per-part collected sets from local detection plus one exchange of summaries.

    Each part first collects its locally finalized actors and prunes actors
    that cannot be finalized.  The remainders, locally finalized actors
    included, are summarized; the finalized actors of the union of summaries
    decide which receptionists are finalized, and a part collects every
    actor all of whose receptionists are.
    """
    owner: dict[ActorName, int] = {}
    for i, p in enumerate(parts):
        for a in p:
            if a in owner:
                raise DomainOverlap(f"{a} appears in parts {owner[a]} and {i}")
            owner[a] = i

    local = [maximum_finalized_subset(p) for p in parts]
    pruned = [potentially_finalized_subset(p) for p in parts]
    summaries = [summarize(p, i) for i, p in enumerate(pruned)]

    joint = SnapshotSet()
    for s in summaries:
        joint = joint.union(s.snapshots)
    decide = heuristic_finalized_subset if heuristic else maximum_finalized_subset
    finalized = set(decide(joint).finalized)

    label = "coop-heuristic" if heuristic else "coop-chain"
    results = []
    for p, loc, pf, summ in zip(parts, local, pruned, summaries):
        deps = depends_on(pf)
        collected = set(loc.finalized)
        for c in pf:
            if all(r in finalized for r in summ.receptionists & deps[c]):
                collected.add(c)
        results.append(DetectionResult(p.restrict(collected), frozenset(set(p) - collected), label))
    return results
