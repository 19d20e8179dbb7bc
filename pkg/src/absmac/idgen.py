"""Randomized tiebreaking IDs, and running a protocol on top of them.

Every node starts with the string ``"1"``.  On the ack of its current
string it adopts the string as its ID unless some other node broadcast the
same string before the ack; otherwise it appends a random bit and tries
again.  Two nodes can never adopt the same string.

:class:`Buffered` runs ID generation first and feeds the adopted ID to an
inner protocol, holding back inner-protocol messages that arrive early.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Sequence

from absmac.core import NodeToken, Protocol
from absmac.rng import Tape


@dataclass(frozen=True, slots=True)
class IdBits:
    s: str


@dataclass(frozen=True, slots=True)
class IdGenState:
    bits: str = "1"
    R: frozenset = frozenset()
    adopted: str | None = None

    @property
    def i(self) -> int:
        return len(self.bits)


def id_init() -> tuple[IdGenState, IdBits]:
    return IdGenState(), IdBits("1")


def id_on_recv(state: IdGenState, s: str) -> IdGenState:
    if state.adopted is not None or s in state.R:
        return state
    return replace(state, R=state.R | {s})


def id_on_ack(state: IdGenState, tape: Tape) -> tuple[IdGenState, IdBits | None]:
    """Adopt the current string (returns ``None``) or extend it by one bit."""
    if state.adopted is not None:
        raise RuntimeError("ack delivered after the ID was adopted")
    if state.bits not in state.R:
        return replace(state, adopted=state.bits), None
    bits = state.bits + str(tape.bit())
    return replace(state, bits=bits), IdBits(bits)


def token_for(bits: str) -> NodeToken:
    """IDs order by (length, bits)."""
    return NodeToken(len(bits), bits)


class IdGen(Protocol):
    name = "id-gen"

    def init(self, token, value, tape):
        return id_init()

    def on_recv(self, state, msg):
        return id_on_recv(state, msg.s)

    def on_ack(self, state, msg, tape):
        return id_on_ack(state, tape)

    def halted(self, state) -> bool:
        return state.adopted is not None

    def output(self, state):
        return state.adopted

    def node_done(self, state, outstanding) -> bool:
        return state.adopted is not None

    def encode(self, msg) -> dict:
        return {"t": "idbits", "s": msg.s}


@dataclass(frozen=True, slots=True)
class BufferedState:
    value: Any
    ids: IdGenState
    inner: Any = None
    buffer: tuple = ()


class Buffered(Protocol):
    """Run ID generation, then ``inner`` with the adopted ID as its token.

    Inner-protocol messages received before adoption are queued in arrival
    order and replayed through ``inner.on_recv`` right after ``inner.init``,
    inside the same ack handler.
    """

    def __init__(self, inner: Protocol):
        self.inner = inner
        self.name = f"{inner.name}+idgen"

    def validate_inputs(self, inputs: Sequence[Any]) -> None:
        self.inner.validate_inputs(inputs)

    def init(self, token, value, tape):
        ids, msg = id_init()
        return BufferedState(value, ids), msg

    def on_recv(self, state: BufferedState, msg):
        if isinstance(msg, IdBits):
            ids = id_on_recv(state.ids, msg.s)
            return state if ids is state.ids else replace(state, ids=ids)
        if state.inner is None:
            return replace(state, buffer=state.buffer + (msg,))
        return replace(state, inner=self.inner.on_recv(state.inner, msg))

    def on_ack(self, state: BufferedState, msg, tape):
        if not isinstance(msg, IdBits):
            inner, out = self.inner.on_ack(state.inner, msg, tape)
            return replace(state, inner=inner), out
        ids, out = id_on_ack(state.ids, tape)
        if out is not None:
            return replace(state, ids=ids), out
        inner, first = self.inner.init(token_for(ids.adopted), state.value, tape)
        for m in state.buffer:
            inner = self.inner.on_recv(inner, m)
        return BufferedState(state.value, ids, inner, ()), first

    def halted(self, state) -> bool:
        return state.inner is not None and self.inner.halted(state.inner)

    def output(self, state):
        return None if state.inner is None else self.inner.output(state.inner)

    def node_done(self, state, outstanding) -> bool:
        if state.inner is None:
            return False
        return self.inner.node_done(state.inner, outstanding)

    def encode(self, msg) -> dict:
        if isinstance(msg, IdBits):
            return {"t": "idbits", "s": msg.s}
        return self.inner.encode(msg)


def compose_with_buffering(inner: Protocol) -> Buffered:
    return Buffered(inner)
