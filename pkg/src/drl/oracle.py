"""Ground truth over full configurations.

The oracle sees everything the protocol cannot: every unreleased refob
wherever it lives (held, pending inside an application message, or
deactivated with its release still in flight), and refobs held by
external actors.  From these it computes potential acquaintance,
blocked/terminated status, the root set, and chains.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping

from .engine import AppMsg, Configuration, InfoMsg, ReleaseMsg
from .facts import ActorName, Refob, Token


def unreleased_refobs(k: Configuration) -> dict[Token, Refob]:
    """All refobs that exist and whose target has not processed their release."""
    out: dict[Token, Refob] = {}
    for st in k.actors.values():
        out.update(st.knowledge.index.activated)
    for box in k.mailboxes.values():
        for m in box:
            if isinstance(m, AppMsg):
                for r in m.refobs:
                    out[r.token] = r
            elif isinstance(m, ReleaseMsg):
                out[m.x.token] = m.x
    for r in k.external_refobs:
        out[r.token] = r
    return out


def root_set(k: Configuration) -> frozenset:
    roots = set(k.receptionists)
    for e in k.externals:
        for m in k.mailbox(e):
            if isinstance(m, AppMsg):
                roots.update(r.target for r in m.refobs if r.target in k.actors)
    return frozenset(roots)


@dataclass(frozen=True)
class GroundTruth:
    unblocked: frozenset
    terminated: frozenset
    root_set: frozenset
    acquaintances: Mapping[ActorName, frozenset]

    def reachable_from(self, sources: Iterable[ActorName]) -> set[ActorName]:
        """Reflexive-transitive closure of potential acquaintance from ``sources``."""
        seen = set(sources)
        work = deque(seen)
        while work:
            a = work.popleft()
            for b in self.acquaintances.get(a, ()):
                if b not in seen:
                    seen.add(b)
                    work.append(b)
        return seen

    def can_reach(self, a: ActorName, b: ActorName) -> bool:
        return b in self.reachable_from([a])


def acquaintance_graph(k: Configuration, unreleased: Mapping[Token, Refob] | None = None) -> dict:
    if unreleased is None:
        unreleased = unreleased_refobs(k)
    edges: dict[ActorName, set] = {}
    for r in unreleased.values():
        edges.setdefault(r.owner, set()).add(r.target)
    return {a: frozenset(bs) for a, bs in edges.items()}


def unblocked_actors(k: Configuration) -> frozenset:
    out = set(k.externals) | set(k.receptionists)
    for a, st in k.actors.items():
        if st.busy or k.mailbox(a):
            out.add(a)
    return frozenset(out)


def ground_truth(k: Configuration) -> GroundTruth:
    graph = acquaintance_graph(k)
    unblocked = unblocked_actors(k)
    gt = GroundTruth(unblocked=unblocked, terminated=frozenset(), root_set=root_set(k), acquaintances=graph)
    live = gt.reachable_from(unblocked)
    terminated = frozenset(a for a, st in k.actors.items() if not st.busy and a not in live)
    return GroundTruth(unblocked=unblocked, terminated=terminated, root_set=gt.root_set, acquaintances=graph)


def terminated_by_fixpoint(k: Configuration) -> frozenset:
    """Largest set of blocked internal actors closed under potential inverse acquaintance."""
    unreleased = unreleased_refobs(k)
    unblocked = unblocked_actors(k)
    inverse: dict[ActorName, set] = {}
    for r in unreleased.values():
        inverse.setdefault(r.target, set()).add(r.owner)
    s = {a for a in k.actors if a not in unblocked}
    changed = True
    while changed:
        changed = False
        for b in list(s):
            if any(a not in s for a in inverse.get(b, ())):
                s.discard(b)
                changed = True
    return frozenset(s)


def chained_refobs(
    k: Configuration, target: ActorName, unreleased: Mapping[Token, Refob] | None = None
) -> dict[Token, Refob]:
    """Every unreleased refob to ``target`` reachable by a chain, via breadth-first search.

    Chains start at refobs the target knows as created and follow
    ``CreatedUsing`` facts held by each link's owner, or ``InfoMsg`` messages
    still in transit to the target.
    """
    if unreleased is None:
        unreleased = unreleased_refobs(k)
    phi = k.actors[target].knowledge
    ix = phi.index
    infos: dict[Token, list[Refob]] = {}
    for m in k.mailbox(target):
        if isinstance(m, InfoMsg):
            infos.setdefault(m.y.token, []).append(m.z)
    found: dict[Token, Refob] = {}
    work: deque = deque()
    for r in list(ix.created.values()) + list(ix.created_via.values()):
        if r.target == target and r.token in unreleased and r.token not in found:
            found[r.token] = r
            work.append(r)
    while work:
        r = work.popleft()
        nxt = list(infos.get(r.token, ()))
        owner = k.actors.get(r.owner)
        if owner is not None:
            nxt.extend(owner.knowledge.created_using(r))
        for z in nxt:
            if z.target == target and z.token in unreleased and z.token not in found:
                found[z.token] = z
                work.append(z)
    return found


def has_chain(k: Configuration, x: Refob, unreleased: Mapping[Token, Refob] | None = None) -> bool:
    if x.target not in k.actors:
        return False
    return x.token in chained_refobs(k, x.target, unreleased)
