"""Refobs, facts and knowledge sets.

A refob is the triple ``(token, owner, target)``.  Every actor carries a
knowledge set of facts about refobs it owns, refobs pointing at it, and
refobs it created for others.  Derived facts (default-zero counts,
``Unreleased``, ``Created`` from ``CreatedUsing``) are never stored; they
are computed by :func:`derives` and the query helpers on
:class:`KnowledgeSet`.

Textual rendering is canonical: one fact per line, sorted by the token of
the fact's primary refob.  Refobs inside facts are written by token only,
e.g. ``CreatedUsing(x=A0!3, y=A0!4)`` or ``SentCount(x=A0!3, 2)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Union

__all__ = [
    "ActorName",
    "Token",
    "NULL_TOKEN",
    "Refob",
    "Created",
    "Released",
    "CreatedUsing",
    "Activated",
    "SentCount",
    "RecvCount",
    "Unreleased",
    "Fact",
    "KnowledgeSet",
    "derives",
    "inc_sent",
    "inc_recv",
    "render_facts",
]


@dataclass(frozen=True, order=True, slots=True)
class ActorName:
    """Actor address.  Internal actors render as ``A<n>``, externals as ``E<n>``."""

    external: bool
    num: int

    @classmethod
    def internal(cls, num: int) -> ActorName:
        return cls(False, num)

    @classmethod
    def ext(cls, num: int) -> ActorName:
        return cls(True, num)

    @classmethod
    def parse(cls, text: str) -> ActorName:
        m = re.fullmatch(r"([AE])(\d+)", text)
        if m is None:
            raise ValueError(f"bad actor name {text!r}")
        return cls(m.group(1) == "E", int(m.group(2)))

    @property
    def kind(self) -> str:
        return "external" if self.external else "internal"

    def __str__(self) -> str:
        return f"{'E' if self.external else 'A'}{self.num}"

    def __repr__(self) -> str:
        return str(self)


_ORIGIN = re.compile(r"([A-Za-z]+)(\d*)")


@dataclass(frozen=True, slots=True)
class Token:
    """Globally unique refob identifier: an origin namespace plus a local sequence number.

    Origins are actor names (``A3``), the environment (``X``) for refobs
    minted by :class:`~drl.engine.In` events, or aggregator namespaces
    (``G1``) for synthetic summary refobs.
    """

    origin: str
    seq: int

    @property
    def is_null(self) -> bool:
        return self.origin == "NULL"

    def sort_key(self) -> tuple:
        m = _ORIGIN.fullmatch(self.origin)
        if m is None:
            return (self.origin, -1, self.seq)
        return (m.group(1), int(m.group(2)) if m.group(2) else -1, self.seq)

    def __lt__(self, other: Token) -> bool:
        return self.sort_key() < other.sort_key()

    @classmethod
    def parse(cls, text: str) -> Token:
        if text == "NULL":
            return NULL_TOKEN
        origin, sep, seq = text.partition("!")
        if not sep or not origin:
            raise ValueError(f"bad token {text!r}")
        return cls(origin, int(seq))

    def __str__(self) -> str:
        return "NULL" if self.is_null else f"{self.origin}!{self.seq}"

    def __repr__(self) -> str:
        return str(self)


# Tags messages injected by external actors that do not take part in the protocol.
NULL_TOKEN = Token("NULL", 0)


@dataclass(frozen=True, slots=True)
class Refob:
    token: Token
    owner: ActorName
    target: ActorName

    def __str__(self) -> str:
        return f"{self.token}:{self.owner}->{self.target}"

    def __repr__(self) -> str:
        return str(self)

    @classmethod
    def parse(cls, text: str) -> Refob:
        m = re.fullmatch(r"([^:]+):([AE]\d+)->([AE]\d+)", text)
        if m is None:
            raise ValueError(f"bad refob {text!r}")
        return cls(Token.parse(m.group(1)), ActorName.parse(m.group(2)), ActorName.parse(m.group(3)))


@dataclass(frozen=True, slots=True)
class Created:
    x: Refob


@dataclass(frozen=True, slots=True)
class Released:
    x: Refob


@dataclass(frozen=True, slots=True)
class CreatedUsing:
    x: Refob
    y: Refob

    def __post_init__(self) -> None:
        if self.x.target != self.y.target:
            raise ValueError(f"CreatedUsing({self.x}, {self.y}): targets differ")


@dataclass(frozen=True, slots=True)
class Activated:
    x: Refob


@dataclass(frozen=True, slots=True)
class SentCount:
    x: Refob
    n: int


@dataclass(frozen=True, slots=True)
class RecvCount:
    x: Refob
    n: int


@dataclass(frozen=True, slots=True)
class Unreleased:
    """Derived goal only; never a member of a knowledge set."""

    x: Refob


Fact = Union[Created, Released, CreatedUsing, Activated, SentCount, RecvCount]

_KIND_ORDER = {Created: 0, Released: 1, CreatedUsing: 2, Activated: 3, SentCount: 4, RecvCount: 5}


def _fact_key(f: Fact) -> tuple:
    second = f.y.token.sort_key() if isinstance(f, CreatedUsing) else ()
    return (f.x.token.sort_key(), _KIND_ORDER[type(f)], second)


def _render_fact(f: Fact) -> str:
    name = type(f).__name__
    if isinstance(f, CreatedUsing):
        return f"{name}(x={f.x.token}, y={f.y.token})"
    if isinstance(f, (SentCount, RecvCount)):
        return f"{name}(x={f.x.token}, {f.n})"
    return f"{name}(x={f.x.token})"


class KnowledgeSet:
    """Immutable set of facts with lazily built per-token indexes."""

    __slots__ = ("_facts", "_index", "_hash")

    def __init__(self, facts: Iterable[Fact] = ()) -> None:
        self._facts = frozenset(facts)
        self._index: _Index | None = None
        self._hash: int | None = None

    # set protocol ---------------------------------------------------------
    def __iter__(self) -> Iterator[Fact]:
        return iter(self._facts)

    def __len__(self) -> int:
        return len(self._facts)

    def __contains__(self, fact: object) -> bool:
        return fact in self._facts

    def __eq__(self, other: object) -> bool:
        if isinstance(other, KnowledgeSet):
            return self._facts == other._facts
        if isinstance(other, (set, frozenset)):
            return self._facts == other
        return NotImplemented

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(self._facts)
        return self._hash

    def __le__(self, other: KnowledgeSet) -> bool:
        return self._facts <= other._facts

    def __repr__(self) -> str:
        return "{" + ", ".join(_render_fact(f) for f in self.sorted()) + "}"

    @property
    def facts(self) -> frozenset:
        return self._facts

    def sorted(self) -> list[Fact]:
        return sorted(self._facts, key=_fact_key)

    def replace(self, remove: Iterable[Fact] = (), add: Iterable[Fact] = ()) -> KnowledgeSet:
        return KnowledgeSet((self._facts - frozenset(remove)) | frozenset(add))

    def union(self, other: Iterable[Fact]) -> KnowledgeSet:
        return KnowledgeSet(self._facts | frozenset(other))

    # indexed queries ------------------------------------------------------
    @property
    def index(self) -> _Index:
        if self._index is None:
            self._index = _Index(self._facts)
        return self._index

    def sent_count(self, x: Refob) -> int:
        return self.index.sent.get(x.token, 0)

    def recv_count(self, x: Refob) -> int:
        return self.index.recv.get(x.token, 0)

    def has_sent_fact(self, x: Refob) -> bool:
        return x.token in self.index.sent

    def has_recv_fact(self, x: Refob) -> bool:
        return x.token in self.index.recv

    def knows_created(self, x: Refob) -> bool:
        """``Created(x)`` is derivable: stored directly or implied by ``CreatedUsing(_, x)``."""
        ix = self.index
        return x.token in ix.created or x.token in ix.created_via

    def is_released(self, x: Refob) -> bool:
        return x.token in self.index.released

    def is_activated(self, x: Refob) -> bool:
        return x.token in self.index.activated

    def is_unreleased(self, x: Refob) -> bool:
        return self.knows_created(x) and not self.is_released(x)

    def created_using(self, x: Refob) -> tuple[Refob, ...]:
        """Refobs ``y`` such that ``CreatedUsing(x, y)`` is stored."""
        return self.index.created_using.get(x.token, ())

    def activated(self) -> list[Refob]:
        return sorted(self.index.activated.values(), key=lambda r: r.token.sort_key())

    def refobs(self) -> set[Refob]:
        """Every refob mentioned by some fact."""
        return self.index.refobs

    def check_invariants(self) -> list[str]:
        problems = []
        seen_sent: dict[Token, int] = {}
        seen_recv: dict[Token, int] = {}
        for f in self._facts:
            if isinstance(f, SentCount):
                if f.x.token in seen_sent:
                    problems.append(f"two SentCount facts for {f.x.token}")
                seen_sent[f.x.token] = f.n
            elif isinstance(f, RecvCount):
                if f.x.token in seen_recv:
                    problems.append(f"two RecvCount facts for {f.x.token}")
                seen_recv[f.x.token] = f.n
        return problems


class _Index:
    __slots__ = ("created", "created_via", "released", "activated", "created_using", "sent", "recv", "refobs")

    def __init__(self, facts: frozenset) -> None:
        self.created: dict[Token, Refob] = {}
        self.created_via: dict[Token, Refob] = {}
        self.released: dict[Token, Refob] = {}
        self.activated: dict[Token, Refob] = {}
        self.created_using: dict[Token, tuple[Refob, ...]] = {}
        self.sent: dict[Token, int] = {}
        self.recv: dict[Token, int] = {}
        self.refobs: set[Refob] = set()
        for f in facts:
            t = type(f)
            self.refobs.add(f.x)
            if t is Created:
                self.created[f.x.token] = f.x
            elif t is Released:
                self.released[f.x.token] = f.x
            elif t is Activated:
                self.activated[f.x.token] = f.x
            elif t is CreatedUsing:
                self.refobs.add(f.y)
                self.created_via[f.y.token] = f.y
                self.created_using[f.x.token] = self.created_using.get(f.x.token, ()) + (f.y,)
            elif t is SentCount:
                self.sent[f.x.token] = f.n
            elif t is RecvCount:
                self.recv[f.x.token] = f.n


def derives(phi: KnowledgeSet, goal: Fact | Unreleased) -> bool:
    """Decide ``phi ⊢ goal`` under membership plus the four closure rules."""
    if isinstance(goal, SentCount):
        ix = phi.index
        if goal.x.token in ix.sent:
            return goal in phi
        return goal.n == 0
    if isinstance(goal, RecvCount):
        ix = phi.index
        if goal.x.token in ix.recv:
            return goal in phi
        return goal.n == 0
    if isinstance(goal, Created):
        return goal in phi or any(
            y == goal.x for y in phi.index.created_via.values() if y.token == goal.x.token
        )
    if isinstance(goal, Unreleased):
        return derives(phi, Created(goal.x)) and Released(goal.x) not in phi
    return goal in phi


def _bump(phi: KnowledgeSet, x: Refob, kind: type) -> KnowledgeSet:
    counts = phi.index.sent if kind is SentCount else phi.index.recv
    if x.token in counts:
        n = counts[x.token]
        old = kind(x, n)
        if old not in phi:
            old = next(f for f in phi if type(f) is kind and f.x.token == x.token)
        return phi.replace(remove=[old], add=[kind(x, n + 1)])
    return phi.union([kind(x, 1)])


def inc_sent(x: Refob, phi: KnowledgeSet) -> KnowledgeSet:
    return _bump(phi, x, SentCount)


def inc_recv(x: Refob, phi: KnowledgeSet) -> KnowledgeSet:
    return _bump(phi, x, RecvCount)


def render_facts(phi: Iterable[Fact]) -> str:
    facts = phi.sorted() if isinstance(phi, KnowledgeSet) else sorted(phi, key=_fact_key)
    return "\n".join(_render_fact(f) for f in facts)
