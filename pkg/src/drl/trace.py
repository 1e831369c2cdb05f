"""Text form of events and trace files.

Trace file layout::

    # drl-trace 1 seed=<seed> policy=<hash>
    # spec <json run spec>
    <step> <Event>(<args>)
    ...
    ORACLE <step> terminated=[A3 A5]
    DETECT <step> <algorithm> finalized=[...] removed=[...]
    QUIESCE <step>
    END <step> <sha256 of terminal configuration>

Event arguments are rendered in field order: refobs as
``<token>:<owner>-><target>``, refob tuples as ``[r1 r2]``, actor names
bare, counts as integers, and the NULL token as ``NULL``.
"""

from __future__ import annotations

import dataclasses
import re

from .engine import EVENT_TYPES, Event
from .errors import CorruptTrace
from .facts import ActorName, Refob

TRACE_VERSION = 1

_LINE = re.compile(r"(\d+) (\w+)\((.*)\)")


def _render_value(v) -> str:
    if v is None:
        return "NULL"
    if isinstance(v, tuple):
        return "[" + " ".join(str(r) for r in v) + "]"
    return str(v)


def render_event(e: Event) -> str:
    args = ", ".join(_render_value(getattr(e, f.name)) for f in dataclasses.fields(e))
    return f"{type(e).__name__}({args})"


def _parse_value(kind: str, text: str):
    if kind == "int":
        return int(text)
    if kind == "ActorName":
        return ActorName.parse(text)
    if kind == "Refob":
        return Refob.parse(text)
    if kind == "Optional[Refob]":
        return None if text == "NULL" else Refob.parse(text)
    if kind.startswith("tuple"):
        if not (text.startswith("[") and text.endswith("]")):
            raise ValueError(f"expected a refob list, got {text!r}")
        inner = text[1:-1].strip()
        return tuple(Refob.parse(t) for t in inner.split()) if inner else ()
    raise ValueError(f"unsupported field type {kind}")


def parse_event(text: str) -> Event:
    m = re.fullmatch(r"(\w+)\((.*)\)", text.strip())
    if m is None or m.group(1) not in EVENT_TYPES:
        raise CorruptTrace(f"unparseable event {text!r}")
    cls = EVENT_TYPES[m.group(1)]
    fields = dataclasses.fields(cls)
    raw = [a.strip() for a in m.group(2).split(",")] if m.group(2).strip() else []
    if len(raw) != len(fields):
        raise CorruptTrace(f"{text!r}: expected {len(fields)} arguments")
    try:
        return cls(*(_parse_value(str(f.type), a) for f, a in zip(fields, raw)))
    except ValueError as exc:
        raise CorruptTrace(f"{text!r}: {exc}") from exc


def render_event_line(step: int, e: Event) -> str:
    return f"{step} {render_event(e)}"


def parse_event_line(line: str) -> tuple[int, Event]:
    m = _LINE.fullmatch(line.strip())
    if m is None:
        raise CorruptTrace(f"unparseable trace line {line!r}")
    return int(m.group(1)), parse_event(f"{m.group(2)}({m.group(3)})")


def render_names(names) -> str:
    return "[" + " ".join(str(a) for a in sorted(names)) + "]"
