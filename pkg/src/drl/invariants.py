"""Runtime invariants of reachable configurations.

Each check returns a list of human-readable problems (empty when the
invariant holds).  :class:`~drl.scheduler.Simulator` runs them after every
step in checked mode and raises :class:`~drl.errors.InvariantViolation`.
"""

from __future__ import annotations

import dataclasses
from typing import Mapping

from .engine import AppMsg, Compaction, Configuration, Event, InfoMsg, SendInfo, Snapshot, Spawn
from .facts import Created, CreatedUsing, Refob, Released, Token
from .oracle import chained_refobs, root_set, unreleased_refobs

CHECK_NAMES = ("tokens", "knowledge", "messages", "persistence", "chain-lemma", "lemma-counts")


def token_uniqueness(k: Configuration) -> list[str]:
    seen: dict[Token, Refob] = {}
    problems = []

    def see(r: Refob) -> None:
        other = seen.setdefault(r.token, r)
        if other != r:
            problems.append(f"token {r.token} names both {other} and {r}")

    for st in k.actors.values():
        for r in st.knowledge.refobs():
            see(r)
    for box in k.mailboxes.values():
        for m in box:
            if isinstance(m, AppMsg):
                if m.x is not None:
                    see(m.x)
                for r in m.refobs:
                    see(r)
            elif isinstance(m, InfoMsg):
                see(m.y)
                see(m.z)
            else:
                see(m.x)
    for r in k.external_refobs:
        see(r)
    return problems


def messages_along_unreleased(
    k: Configuration, released: set[Token], unreleased: Mapping[Token, Refob] | None = None
) -> list[str]:
    """Every queued message travels along a refob whose release has not been processed."""
    if unreleased is None:
        unreleased = unreleased_refobs(k)
    problems = []
    for a, box in k.mailboxes.items():
        for m in box:
            along = m.along
            # externals consume messages in any order and never release
            if along is None or a.external:
                continue
            if along.token in released or along.token not in unreleased:
                problems.append(f"{m} queued at {a} along a released refob")
    return problems


def persistence(k: Configuration, e: Event, k2: Configuration) -> list[str]:
    """Protocol facts disappear only through the rule that consumes them.

    ``CreatedUsing`` only through ``SendInfo``; ``Created`` and ``Released``
    only through ``Compaction``.  Only the acting actor (and, for Spawn, the
    child) may change.
    """
    problems = []
    touched = {e.actor}
    if isinstance(e, Spawn):
        touched.add(e.x.target)
    for a, st2 in k2.actors.items():
        st = k.actors.get(a)
        if st is None:
            if a not in touched:
                problems.append(f"{a} appeared without being spawned")
            continue
        if st2 is st or st2.knowledge == st.knowledge:
            continue
        if a not in touched:
            problems.append(f"{e} changed the knowledge of bystander {a}")
            continue
        lost = st.knowledge.facts - st2.knowledge.facts
        for f in lost:
            if isinstance(f, CreatedUsing) and not (isinstance(e, SendInfo) and (e.y, e.z) == (f.x, f.y)):
                problems.append(f"{f} dropped at {a} by {e}")
            if isinstance(f, (Created, Released)) and not (isinstance(e, Compaction) and e.x == f.x):
                problems.append(f"{f} dropped at {a} by {e}")
    return problems


def chain_lemma(
    k: Configuration, unreleased: Mapping[Token, Refob] | None = None, only: set | None = None
) -> list[str]:
    """Unreleased refobs into non-root actors all have chains; root actors have one from outside.

    ``only`` limits the check to the given targets.
    """
    if unreleased is None:
        unreleased = unreleased_refobs(k)
    roots = root_set(k)
    by_target: dict = {}
    for r in unreleased.values():
        if r.target in k.actors and (only is None or r.target in only):
            by_target.setdefault(r.target, []).append(r)
    problems = []
    for b, refs in by_target.items():
        chained = chained_refobs(k, b, unreleased)
        if b in roots:
            if not any(r.owner.external and r.token in chained for r in refs):
                problems.append(f"root actor {b} has no chained refob from an external owner")
        else:
            for r in refs:
                if r.token not in chained:
                    problems.append(f"no chain to {r}")
    return problems


def message_counts(k: Configuration, only: set | None = None) -> list[str]:
    """With nothing in flight along an activated refob, sender and receiver counts agree.

    ``only`` limits the check to refobs with an owner or target in the set.
    """
    in_flight: set[Token] = set()
    for box in k.mailboxes.values():
        for m in box:
            if m.along is not None:
                in_flight.add(m.along.token)
    problems = []
    for a, st in k.actors.items():
        for x in st.knowledge.index.activated.values():
            tgt = k.actors.get(x.target)
            if tgt is None or x.token in in_flight:
                continue
            if only is not None and a not in only and x.target not in only:
                continue
            sent = st.knowledge.sent_count(x)
            recv = tgt.knowledge.recv_count(x)
            if sent != recv:
                problems.append(f"{x}: sent {sent}, received {recv}")
    return problems


def knowledge_sets(k: Configuration, only: set | None = None) -> list[str]:
    problems = []
    for a, st in k.actors.items():
        if only is not None and a not in only:
            continue
        problems.extend(f"{a}: {p}" for p in st.knowledge.check_invariants())
    return problems


def affected_actors(k: Configuration, e: Event, k2: Configuration) -> set:
    """Actors whose chains or counts an event can influence.

    Chains into ``B`` read ``B``'s knowledge, ``B``'s mailbox, the
    ``CreatedUsing`` facts of owners of refobs to ``B``, and the unreleased
    refobs to ``B``; every event touching one of those either is performed by
    ``B``, changes ``B``'s mailbox, or names a refob targeting ``B``.
    """
    out = {e.actor}
    for f in dataclasses.fields(e):
        v = getattr(e, f.name)
        for r in v if isinstance(v, tuple) else (v,):
            if isinstance(r, Refob):
                out.update((r.owner, r.target))
    for a, box in k2.mailboxes.items():
        if k.mailboxes.get(a) is not box:
            out.add(a)
    for a in k.mailboxes:
        if a not in k2.mailboxes:
            out.add(a)
    return out


def step_problems(
    k: Configuration,
    e: Event,
    k2: Configuration,
    released: set[Token],
    chain: bool = True,
    counts: bool = True,
    full: bool = True,
) -> dict[str, list[str]]:
    """Per-step checks, keyed by check name, omitting those that pass.

    With ``full=False`` the chain and count checks cover only the actors the
    event can affect, and token uniqueness (guaranteed by the engine's fresh
    counters) is skipped; callers run a full check periodically.
    """
    if type(e) is Snapshot:
        return {}
    unreleased = unreleased_refobs(k2)
    only = None if full else affected_actors(k, e, k2)
    found = {
        "tokens": token_uniqueness(k2) if full else [],
        "knowledge": knowledge_sets(k2, only),
        "messages": messages_along_unreleased(k2, released, unreleased),
        "persistence": persistence(k, e, k2),
    }
    if chain:
        found["chain-lemma"] = chain_lemma(k2, unreleased, only)
    if counts:
        found["lemma-counts"] = message_counts(k2, only)
    return {name: ps for name, ps in found.items() if ps}
