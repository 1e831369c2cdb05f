"""Small constructors shared by the test modules."""

from __future__ import annotations

from drl.detection import SnapshotSet
from drl.engine import ActorState, Configuration
from drl.facts import ActorName, KnowledgeSet, Refob, Token

A, B, C, D, E, F, G = (ActorName.internal(i) for i in range(7))
E0, E1 = ActorName.ext(0), ActorName.ext(1)


def tok(origin, seq: int) -> Token:
    return Token(str(origin), seq)


def ref(origin, seq: int, owner: ActorName, target: ActorName) -> Refob:
    return Refob(tok(origin, seq), owner, target)


def ks(*facts) -> KnowledgeSet:
    return KnowledgeSet(facts)


def busy(name: ActorName, *facts) -> ActorState:
    return ActorState(name, True, KnowledgeSet(facts))


def idle(name: ActorName, *facts) -> ActorState:
    return ActorState(name, False, KnowledgeSet(facts))


def config(*states: ActorState, mailboxes=None, receptionists=(), externals=(E0,), external_refobs=()) -> Configuration:
    return Configuration.build(
        {s.name: s for s in states},
        mailboxes or {},
        receptionists=receptionists,
        externals=externals,
        external_refobs=external_refobs,
    )


def qset(**by_name) -> SnapshotSet:
    """``qset(A=[...], B=[...])`` keyed by actor letters A..G."""
    names = {"A": A, "B": B, "C": C, "D": D, "E": E, "F": F, "G": G}
    return SnapshotSet.of({names[k]: v for k, v in by_name.items()})
