"""The global transition system.

A :class:`Configuration` holds every internal actor's status and knowledge
set, the undelivered messages addressed to each actor (internal or
external), the receptionists and the externals.  :func:`apply_event`
implements the fourteen labelled rules; each rule checks its own side
conditions and raises :class:`~drl.errors.IllegalEvent` when they fail.

Fresh names and tokens come from per-origin counters kept in the
configuration, so freshness is a counter comparison rather than a scan.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Union

from .errors import IllegalEvent
from .facts import (
    NULL_TOKEN,
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
    inc_recv,
    inc_sent,
    render_facts,
)

ENV_ORIGIN = "X"


# --------------------------------------------------------------------------
# Messages
# --------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class AppMsg:
    """Application message sent along ``x``; ``x`` is None for NULL-tagged external input."""

    x: Optional[Refob]
    refobs: tuple[Refob, ...]

    @property
    def token(self) -> Token:
        return NULL_TOKEN if self.x is None else self.x.token

    @property
    def along(self) -> Optional[Refob]:
        return self.x

    def __str__(self) -> str:
        return f"AppMsg({self.x if self.x else 'NULL'}, [{' '.join(map(str, self.refobs))}])"


@dataclass(frozen=True, slots=True)
class InfoMsg:
    """Tells ``y.target`` that ``z`` was created using ``y``; ``z.owner`` is the new owner."""

    y: Refob
    z: Refob

    @property
    def token(self) -> Token:
        return self.y.token

    @property
    def along(self) -> Refob:
        return self.y

    def __str__(self) -> str:
        return f"InfoMsg({self.y}, {self.z})"


@dataclass(frozen=True, slots=True)
class ReleaseMsg:
    x: Refob
    n: int

    @property
    def token(self) -> Token:
        return self.x.token

    @property
    def along(self) -> Refob:
        return self.x

    def __str__(self) -> str:
        return f"ReleaseMsg({self.x}, {self.n})"


Message = Union[AppMsg, InfoMsg, ReleaseMsg]


def sender_of(m: Message) -> Optional[ActorName]:
    along = m.along
    return None if along is None else along.owner


# --------------------------------------------------------------------------
# Configurations
# --------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class ActorState:
    name: ActorName
    busy: bool
    knowledge: KnowledgeSet

    @property
    def status(self) -> str:
        return "busy" if self.busy else "idle"


@dataclass(frozen=True)
class Configuration:
    """Global state.  Mappings are treated as immutable; rules build new ones."""

    actors: Mapping[ActorName, ActorState]
    mailboxes: Mapping[ActorName, tuple[Message, ...]]
    receptionists: frozenset
    externals: frozenset
    clock: int = 0
    seqs: Mapping[str, int] = field(default_factory=dict)
    next_actor: int = 0
    next_external: int = 0
    # refobs handed to external actors by Out; externals never release them
    external_refobs: frozenset = frozenset()

    def mailbox(self, a: ActorName) -> tuple[Message, ...]:
        return self.mailboxes.get(a, ())

    def knowledge(self, a: ActorName) -> KnowledgeSet:
        return self.actors[a].knowledge

    def is_fresh_token(self, t: Token) -> bool:
        return not t.is_null and t.seq >= self.seqs.get(t.origin, 0)

    def next_token(self, origin: str, offset: int = 0) -> Token:
        return Token(origin, self.seqs.get(origin, 0) + offset)

    def internal_names(self) -> list[ActorName]:
        return sorted(self.actors)

    @classmethod
    def build(
        cls,
        actors: Mapping[ActorName, ActorState],
        mailboxes: Mapping[ActorName, Iterable[Message]] = (),
        receptionists: Iterable[ActorName] = (),
        externals: Iterable[ActorName] = (),
        clock: int = 0,
        external_refobs: Iterable[Refob] = (),
    ) -> Configuration:
        """Assemble a configuration by hand, deriving the freshness counters from its contents."""
        mailboxes = dict(mailboxes) if mailboxes else {}
        boxes = {a: tuple(ms) for a, ms in mailboxes.items() if ms}
        externals = frozenset(externals)
        ext_refobs = frozenset(external_refobs)
        seqs: dict[str, int] = {}

        def see(r: Refob) -> None:
            t = r.token
            if not t.is_null:
                seqs[t.origin] = max(seqs.get(t.origin, 0), t.seq + 1)

        for st in actors.values():
            for r in st.knowledge.refobs():
                see(r)
        for ms in boxes.values():
            for m in ms:
                for r in _message_refobs(m):
                    see(r)
        for r in ext_refobs:
            see(r)
        names = list(actors) + list(externals) + list(boxes)
        nxt = max((a.num + 1 for a in names if not a.external), default=0)
        nxe = max((a.num + 1 for a in names if a.external), default=0)
        return cls(
            actors=dict(actors),
            mailboxes=boxes,
            receptionists=frozenset(receptionists),
            externals=externals,
            clock=clock,
            seqs=seqs,
            next_actor=nxt,
            next_external=nxe,
            external_refobs=ext_refobs,
        )


def _message_refobs(m: Message) -> list[Refob]:
    if isinstance(m, AppMsg):
        return ([m.x] if m.x else []) + list(m.refobs)
    if isinstance(m, InfoMsg):
        return [m.y, m.z]
    return [m.x]


def initial_configuration() -> Configuration:
    """One busy actor ``A0`` holding a self-refob and a refob to the external ``E0``."""
    a = ActorName.internal(0)
    e = ActorName.ext(0)
    x = Refob(Token(str(a), 0), a, e)
    y = Refob(Token(str(a), 1), a, a)
    phi = KnowledgeSet([Activated(x), Created(y), Activated(y)])
    return Configuration(
        actors={a: ActorState(a, True, phi)},
        mailboxes={},
        receptionists=frozenset(),
        externals=frozenset([e]),
        clock=0,
        seqs={str(a): 2},
        next_actor=1,
        next_external=1,
    )


# --------------------------------------------------------------------------
# Events
# --------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Spawn:
    """Busy ``x.owner`` spawns ``x.target``; ``y`` is the child's self-refob."""

    x: Refob
    y: Refob

    @property
    def actor(self) -> ActorName:
        return self.x.owner


@dataclass(frozen=True, slots=True)
class Send:
    """``x.owner`` sends along ``x``; ``created[i]`` is made using ``uses[i]``."""

    x: Refob
    uses: tuple[Refob, ...]
    created: tuple[Refob, ...]

    @property
    def actor(self) -> ActorName:
        return self.x.owner


@dataclass(frozen=True, slots=True)
class Receive:
    x: Optional[Refob]
    receiver: ActorName
    refobs: tuple[Refob, ...]

    @property
    def actor(self) -> ActorName:
        return self.receiver


@dataclass(frozen=True, slots=True)
class Idle:
    actor: ActorName


@dataclass(frozen=True, slots=True)
class SendInfo:
    y: Refob
    z: Refob

    @property
    def actor(self) -> ActorName:
        return self.y.owner


@dataclass(frozen=True, slots=True)
class Info:
    y: Refob
    z: Refob

    @property
    def actor(self) -> ActorName:
        return self.y.target


@dataclass(frozen=True, slots=True)
class SendRelease:
    x: Refob

    @property
    def actor(self) -> ActorName:
        return self.x.owner


@dataclass(frozen=True, slots=True)
class Release:
    x: Refob
    n: int

    @property
    def actor(self) -> ActorName:
        return self.x.target


@dataclass(frozen=True, slots=True)
class Compaction:
    x: Refob

    @property
    def actor(self) -> ActorName:
        return self.x.target


@dataclass(frozen=True, slots=True)
class Snapshot:
    """Records the idle actor's knowledge set; the configuration is unchanged."""

    actor: ActorName


@dataclass(frozen=True, slots=True)
class In:
    """An external actor messages receptionist ``receptionist`` with NULL-tagged refobs it owns."""

    receptionist: ActorName
    refobs: tuple[Refob, ...]

    @property
    def actor(self) -> ActorName:
        return self.receptionist


@dataclass(frozen=True, slots=True)
class Out:
    x: Refob
    refobs: tuple[Refob, ...]

    @property
    def actor(self) -> ActorName:
        return self.x.target


@dataclass(frozen=True, slots=True)
class ReleaseOut:
    x: Refob
    n: int

    @property
    def actor(self) -> ActorName:
        return self.x.target


@dataclass(frozen=True, slots=True)
class InfoOut:
    y: Refob
    z: Refob

    @property
    def actor(self) -> ActorName:
        return self.y.target


Event = Union[
    Spawn, Send, Receive, Idle, SendInfo, Info, SendRelease, Release, Compaction, Snapshot, In, Out, ReleaseOut, InfoOut
]

EVENT_TYPES: dict[str, type] = {
    t.__name__: t
    for t in (Spawn, Send, Receive, Idle, SendInfo, Info, SendRelease, Release, Compaction, Snapshot, In, Out, ReleaseOut, InfoOut)
}


def _sorted_refobs(rs: Iterable[Refob]) -> tuple[Refob, ...]:
    return tuple(sorted(rs, key=lambda r: r.token.sort_key()))


# --------------------------------------------------------------------------
# Rule application
# --------------------------------------------------------------------------


def _internal(k: Configuration, a: ActorName, e: Event) -> ActorState:
    st = k.actors.get(a)
    if st is None:
        raise IllegalEvent(f"{e}: {a} is not an internal actor")
    return st


def _busy(k: Configuration, a: ActorName, e: Event) -> ActorState:
    st = _internal(k, a, e)
    if not st.busy:
        raise IllegalEvent(f"{e}: {a} is idle")
    return st


def _idle(k: Configuration, a: ActorName, e: Event) -> ActorState:
    st = _internal(k, a, e)
    if st.busy:
        raise IllegalEvent(f"{e}: {a} is busy")
    return st


def _take(k: Configuration, a: ActorName, m: Message, e: Event) -> dict:
    box = k.mailbox(a)
    try:
        i = box.index(m)
    except ValueError:
        raise IllegalEvent(f"{e}: no {m} queued at {a}") from None
    boxes = dict(k.mailboxes)
    rest = box[:i] + box[i + 1 :]
    if rest:
        boxes[a] = rest
    else:
        del boxes[a]
    return boxes


def _put(boxes: Mapping, a: ActorName, m: Message) -> dict:
    boxes = dict(boxes)
    boxes[a] = boxes.get(a, ()) + (m,)
    return boxes


def _claim_tokens(k: Configuration, tokens: list[Token], e: Event) -> dict:
    if len(set(tokens)) != len(tokens):
        raise IllegalEvent(f"{e}: repeated fresh token")
    seqs = dict(k.seqs)
    for t in tokens:
        if not k.is_fresh_token(t):
            raise IllegalEvent(f"{e}: token {t} is not fresh")
        seqs[t.origin] = max(seqs.get(t.origin, 0), t.seq + 1)
    return seqs


def _with_actor(actors: Mapping, st: ActorState) -> dict:
    actors = dict(actors)
    actors[st.name] = st
    return actors


def apply_event(k: Configuration, e: Event) -> Configuration:
    """Return the configuration reached by ``e``; the clock advances by one."""
    handler = _HANDLERS.get(type(e))
    if handler is None:
        raise IllegalEvent(f"unknown event {e!r}")
    k2 = handler(k, e)
    return replace(k2, clock=k.clock + 1)


def _spawn(k: Configuration, e: Spawn) -> Configuration:
    a, b = e.x.owner, e.x.target
    st = _busy(k, a, e)
    if b.external or b in k.actors or b.num < k.next_actor:
        raise IllegalEvent(f"{e}: {b} is not a fresh internal name")
    if e.y.owner != b or e.y.target != b:
        raise IllegalEvent(f"{e}: self-refob must be {b}->{b}")
    seqs = _claim_tokens(k, [e.x.token, e.y.token], e)
    actors = _with_actor(k.actors, ActorState(a, True, st.knowledge.union([Activated(e.x)])))
    actors[b] = ActorState(b, True, KnowledgeSet([Created(e.x), Created(e.y), Activated(e.y)]))
    return replace(k, actors=actors, seqs=seqs, next_actor=b.num + 1)


def _send(k: Configuration, e: Send) -> Configuration:
    a, b = e.x.owner, e.x.target
    st = _busy(k, a, e)
    phi = st.knowledge
    if Activated(e.x) not in phi:
        raise IllegalEvent(f"{e}: {a} has no active {e.x}")
    if len(e.uses) != len(e.created):
        raise IllegalEvent(f"{e}: uses/created length mismatch")
    for y, z in zip(e.uses, e.created):
        if y.owner != a or Activated(y) not in phi:
            raise IllegalEvent(f"{e}: {a} has no active {y}")
        if z.owner != b or z.target != y.target:
            raise IllegalEvent(f"{e}: {z} must be {b}->{y.target}")
    seqs = _claim_tokens(k, [z.token for z in e.created], e)
    phi2 = inc_sent(e.x, phi).union(CreatedUsing(y, z) for y, z in zip(e.uses, e.created))
    msg = AppMsg(e.x, _sorted_refobs(e.created))
    return replace(
        k,
        actors=_with_actor(k.actors, ActorState(a, True, phi2)),
        mailboxes=_put(k.mailboxes, b, msg),
        seqs=seqs,
    )


def _receive(k: Configuration, e: Receive) -> Configuration:
    b = e.receiver
    st = _idle(k, b, e)
    if e.x is not None and e.x.target != b:
        raise IllegalEvent(f"{e}: {e.x} does not target {b}")
    msg = AppMsg(e.x, _sorted_refobs(e.refobs))
    boxes = _take(k, b, msg, e)
    phi = st.knowledge if e.x is None else inc_recv(e.x, st.knowledge)
    phi = phi.union(Activated(z) for z in e.refobs)
    return replace(k, actors=_with_actor(k.actors, ActorState(b, True, phi)), mailboxes=boxes)


def _idle_rule(k: Configuration, e: Idle) -> Configuration:
    st = _busy(k, e.actor, e)
    return replace(k, actors=_with_actor(k.actors, ActorState(e.actor, False, st.knowledge)))


def _send_info(k: Configuration, e: SendInfo) -> Configuration:
    a = e.y.owner
    st = _busy(k, a, e)
    fact = CreatedUsing(e.y, e.z)
    if fact not in st.knowledge:
        raise IllegalEvent(f"{e}: {a} does not hold {fact}")
    phi = inc_sent(e.y, st.knowledge.replace(remove=[fact]))
    return replace(
        k,
        actors=_with_actor(k.actors, ActorState(a, True, phi)),
        mailboxes=_put(k.mailboxes, e.y.target, InfoMsg(e.y, e.z)),
    )


def _info(k: Configuration, e: Info) -> Configuration:
    c = e.y.target
    st = _idle(k, c, e)
    boxes = _take(k, c, InfoMsg(e.y, e.z), e)
    phi = inc_recv(e.y, st.knowledge).union([Created(e.z)])
    return replace(k, actors=_with_actor(k.actors, ActorState(c, False, phi)), mailboxes=boxes)


def _send_release(k: Configuration, e: SendRelease) -> Configuration:
    a = e.x.owner
    st = _busy(k, a, e)
    phi = st.knowledge
    if Activated(e.x) not in phi:
        raise IllegalEvent(f"{e}: {a} has no active {e.x}")
    if phi.created_using(e.x):
        raise IllegalEvent(f"{e}: {a} still holds CreatedUsing facts for {e.x}")
    n = phi.sent_count(e.x)
    remove = [Activated(e.x)]
    if phi.has_sent_fact(e.x):
        remove.append(SentCount(e.x, n))
    return replace(
        k,
        actors=_with_actor(k.actors, ActorState(a, True, phi.replace(remove=remove))),
        mailboxes=_put(k.mailboxes, e.x.target, ReleaseMsg(e.x, n)),
    )


def _release(k: Configuration, e: Release) -> Configuration:
    b = e.x.target
    st = _idle(k, b, e)
    if st.knowledge.recv_count(e.x) != e.n:
        raise IllegalEvent(f"{e}: receive count is {st.knowledge.recv_count(e.x)}, release says {e.n}")
    boxes = _take(k, b, ReleaseMsg(e.x, e.n), e)
    phi = st.knowledge.union([Released(e.x)])
    return replace(k, actors=_with_actor(k.actors, ActorState(b, False, phi)), mailboxes=boxes)


def _compaction(k: Configuration, e: Compaction) -> Configuration:
    c = e.x.target
    st = _idle(k, c, e)
    phi = st.knowledge
    if Created(e.x) not in phi or Released(e.x) not in phi:
        raise IllegalEvent(f"{e}: {c} lacks Created and Released for {e.x}")
    remove = [Created(e.x), Released(e.x)]
    if phi.has_recv_fact(e.x):
        remove.append(RecvCount(e.x, phi.recv_count(e.x)))
    return replace(k, actors=_with_actor(k.actors, ActorState(c, False, phi.replace(remove=remove))))


def _snapshot(k: Configuration, e: Snapshot) -> Configuration:
    _idle(k, e.actor, e)
    return k


def _in(k: Configuration, e: In) -> Configuration:
    a = e.receptionist
    if a not in k.receptionists:
        raise IllegalEvent(f"{e}: {a} is not a receptionist")
    new_ext = set()
    for r in e.refobs:
        if r.owner != a:
            raise IllegalEvent(f"{e}: {r} is not owned by {a}")
        if r.target in k.actors:
            if r.target not in k.receptionists:
                raise IllegalEvent(f"{e}: {r.target} is internal but not a receptionist")
        elif not r.target.external:
            raise IllegalEvent(f"{e}: {r.target} is neither internal nor external")
        elif r.target not in k.externals:
            new_ext.add(r.target)
    seqs = _claim_tokens(k, [r.token for r in e.refobs], e)
    nxe = max([k.next_external] + [b.num + 1 for b in new_ext])
    for b in new_ext:
        if b.num < k.next_external:
            raise IllegalEvent(f"{e}: {b} is not a fresh external name")
    return replace(
        k,
        mailboxes=_put(k.mailboxes, a, AppMsg(None, _sorted_refobs(e.refobs))),
        externals=k.externals | new_ext,
        seqs=seqs,
        next_external=nxe,
    )


def _out(k: Configuration, e: Out) -> Configuration:
    b = e.x.target
    if b not in k.externals:
        raise IllegalEvent(f"{e}: {b} is not external")
    boxes = _take(k, b, AppMsg(e.x, _sorted_refobs(e.refobs)), e)
    exposed = {r.target for r in e.refobs if r.target in k.actors}
    return replace(
        k,
        mailboxes=boxes,
        receptionists=k.receptionists | exposed,
        external_refobs=k.external_refobs | frozenset(e.refobs),
    )


def _release_out(k: Configuration, e: ReleaseOut) -> Configuration:
    if e.x.target not in k.externals:
        raise IllegalEvent(f"{e}: {e.x.target} is not external")
    return replace(k, mailboxes=_take(k, e.x.target, ReleaseMsg(e.x, e.n), e))


def _info_out(k: Configuration, e: InfoOut) -> Configuration:
    if e.y.target not in k.externals:
        raise IllegalEvent(f"{e}: {e.y.target} is not external")
    return replace(k, mailboxes=_take(k, e.y.target, InfoMsg(e.y, e.z), e))


_HANDLERS = {
    Spawn: _spawn,
    Send: _send,
    Receive: _receive,
    Idle: _idle_rule,
    SendInfo: _send_info,
    Info: _info,
    SendRelease: _send_release,
    Release: _release,
    Compaction: _compaction,
    Snapshot: _snapshot,
    In: _in,
    Out: _out,
    ReleaseOut: _release_out,
    InfoOut: _info_out,
}


# --------------------------------------------------------------------------
# Enumeration
# --------------------------------------------------------------------------


def enabled_events(k: Configuration) -> list[Event]:
    """Every applicable event, with the unbounded families cut down.

    Sends carry at most one refob; ``In`` offers an empty payload, one refob to
    each receptionist, and one refob to a fresh external.  Message deliveries
    name each distinct queued message once.
    """
    out: list[Event] = []
    for a in sorted(k.actors):
        st = k.actors[a]
        phi = st.knowledge
        if st.busy:
            out.append(Idle(a))
            out.append(spawn_event(k, a))
            active = phi.activated()
            origin = str(a)
            for x in active:
                out.append(Send(x, (), ()))
                for y in active:
                    z = Refob(k.next_token(origin), x.target, y.target)
                    out.append(Send(x, (y,), (z,)))
            for f in pending_infos(phi):
                out.append(SendInfo(f.x, f.y))
            for x in active:
                if not phi.created_using(x):
                    out.append(SendRelease(x))
        else:
            out.extend(deliveries(k, a))
            for tok in sorted(phi.index.created, key=Token.sort_key):
                if tok in phi.index.released and Created(phi.index.created[tok]) in phi:
                    out.append(Compaction(phi.index.created[tok]))
            out.append(Snapshot(a))
    for a in sorted(k.receptionists):
        out.append(In(a, ()))
        for b in sorted(k.receptionists):
            out.append(In(a, (Refob(k.next_token(ENV_ORIGIN), a, b),)))
        out.append(In(a, (Refob(k.next_token(ENV_ORIGIN), a, ActorName.ext(k.next_external)),)))
    for b in sorted(k.externals):
        out.extend(deliveries(k, b))
    return out


def pending_infos(phi: KnowledgeSet) -> list[CreatedUsing]:
    """``CreatedUsing`` facts still waiting for their ``SendInfo``, in canonical order."""
    facts = [f for f in phi if type(f) is CreatedUsing]
    return sorted(facts, key=lambda f: (f.x.token.sort_key(), f.y.token.sort_key()))


def spawn_event(k: Configuration, a: ActorName) -> Spawn:
    b = ActorName.internal(k.next_actor)
    return Spawn(Refob(k.next_token(str(a)), a, b), Refob(Token(str(b), k.seqs.get(str(b), 0)), b, b))


def deliveries(k: Configuration, a: ActorName, fifo: bool = False) -> list[Event]:
    """Delivery events for messages queued at ``a`` (internal must be idle).

    With ``fifo`` only the oldest queued message per sender is offered.
    """
    external = a.external
    if not external and k.actors[a].busy:
        return []
    out: list[Event] = []
    seen: set = set()
    senders: set = set()
    phi = None if external else k.actors[a].knowledge
    for m in k.mailbox(a):
        if fifo:
            s = sender_of(m)
            if s in senders:
                continue
            senders.add(s)
        if m in seen:
            continue
        seen.add(m)
        if isinstance(m, AppMsg):
            out.append(Out(m.x, m.refobs) if external else Receive(m.x, a, m.refobs))
        elif isinstance(m, InfoMsg):
            out.append(InfoOut(m.y, m.z) if external else Info(m.y, m.z))
        elif external:
            out.append(ReleaseOut(m.x, m.n))
        elif phi.recv_count(m.x) == m.n:
            out.append(Release(m.x, m.n))
    return out


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------


def render_configuration(k: Configuration) -> str:
    """Canonical text of a configuration; two equal configurations render identically."""
    lines = [f"clock {k.clock}"]
    for a in sorted(k.actors):
        st = k.actors[a]
        lines.append(f"actor {a} {st.status}")
        body = render_facts(st.knowledge)
        if body:
            lines.extend("  " + ln for ln in body.split("\n"))
    for a in sorted(k.mailboxes):
        msgs = sorted(str(m) for m in k.mailboxes[a])
        lines.append(f"mailbox {a}")
        lines.extend("  " + m for m in msgs)
    lines.append("receptionists " + " ".join(str(a) for a in sorted(k.receptionists)))
    lines.append("externals " + " ".join(str(a) for a in sorted(k.externals)))
    lines.append("external-refobs " + " ".join(str(r) for r in _sorted_refobs(k.external_refobs)))
    lines.append("counters " + " ".join(f"{o}={n}" for o, n in sorted(k.seqs.items())))
    lines.append(f"next {k.next_actor} {k.next_external}")
    return "\n".join(lines)


def config_hash(k: Configuration) -> str:
    return hashlib.sha256(render_configuration(k).encode()).hexdigest()
