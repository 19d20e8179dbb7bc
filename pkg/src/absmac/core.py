"""World state and abstract MAC layer semantics.

A :class:`World` holds every node's protocol state plus the broadcasts in
flight.  Events are applied one at a time with :func:`apply_event`; the
set a scheduler may pick from is :func:`enabled_events`.  The rules are:

* every node's Init comes first;
* a broadcast from ``u`` yields one Recv at each node that was live when it
  was issued (never at ``u`` itself), and the Ack at ``u`` is enabled only
  once each of those nodes has received it or crashed;
* a node has at most one unacknowledged broadcast;
* a crashed node takes no further steps.  Receives of a crashed sender's
  last message stay enabled, so the scheduler may deliver it to some nodes
  and not others.

Schedulers only ever see a :class:`SchedulerView`, which exposes event
metadata and never message contents or node state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple, Sequence

from absmac.rng import TOKEN_STREAM, Tape, make_generator
from absmac.trace import ACK, CRASH, INIT, RECV, MessageSchedule, TraceEvent

logger = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    """Raised for an invalid world or trial configuration."""


class SchedulerContractError(RuntimeError):
    """A scheduler picked an event that is not enabled (a harness bug)."""


class ModelViolation(RuntimeError):
    """A protocol broke the model, e.g. broadcasting twice without an ack."""


@dataclass(frozen=True, order=True)
class NodeToken:
    """Opaque node identifier: supports equality and ordering, nothing else."""

    rank: int
    label: str

    def __str__(self) -> str:
        return self.label

    def __repr__(self) -> str:
        return f"NodeToken({self.label!r})"


class Event(NamedTuple):
    """Handle of an enabled event.  ``msg`` is the message id for Recv/Ack."""

    kind: str
    node: int
    msg: int | None = None


class Protocol:
    """Node algorithm plugged into the world.

    Handlers are pure: they take a node state and return a new one.  A
    returned message (or ``None``) is what the event broadcasts.
    """

    name = "protocol"

    def init(self, token: NodeToken, value: Any, tape: Tape) -> tuple[Any, Any]:
        raise NotImplementedError

    def on_recv(self, state: Any, msg: Any) -> Any:
        raise NotImplementedError

    def on_ack(self, state: Any, msg: Any, tape: Tape) -> tuple[Any, Any]:
        raise NotImplementedError

    def halted(self, state: Any) -> bool:
        raise NotImplementedError

    def output(self, state: Any) -> Any:
        raise NotImplementedError

    def node_done(self, state: Any, outstanding: Any) -> bool:
        """Per-node part of the protocol's termination predicate."""
        raise NotImplementedError

    def encode(self, msg: Any) -> dict:
        raise NotImplementedError

    def validate_inputs(self, inputs: Sequence[Any]) -> None:
        pass


@dataclass(slots=True)
class Broadcast:
    mid: int
    sender: int
    msg: Any
    payload: dict
    undelivered: set[int]

    def copy(self) -> "Broadcast":
        return Broadcast(self.mid, self.sender, self.msg, self.payload, set(self.undelivered))


class IndexedSet:
    """Set with O(1) add, remove and positional pick."""

    __slots__ = ("items", "pos")

    def __init__(self, items: list | None = None):
        self.items: list = []
        self.pos: dict = {}
        for x in items or ():
            self.add(x)

    def add(self, x) -> None:
        if x not in self.pos:
            self.pos[x] = len(self.items)
            self.items.append(x)

    def remove(self, x) -> None:
        i = self.pos.pop(x)
        last = self.items.pop()
        if i < len(self.items):
            self.items[i] = last
            self.pos[last] = i

    def discard(self, x) -> None:
        if x in self.pos:
            self.remove(x)

    def __contains__(self, x) -> bool:
        return x in self.pos

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def copy(self) -> "IndexedSet":
        out = IndexedSet()
        out.items = list(self.items)
        out.pos = dict(self.pos)
        return out


def make_tokens(n: int, seed: int) -> list[NodeToken]:
    gen = make_generator(seed, TOKEN_STREAM)
    labels: list[str] = []
    seen: set[str] = set()
    while len(labels) < n:
        label = f"{int(gen.integers(0, 2**63)):016x}"
        if label not in seen:
            seen.add(label)
            labels.append(label)
    return [NodeToken(0, label) for label in labels]


@dataclass
class World:
    n: int
    protocol: Protocol
    inputs: list
    seed: int
    tokens: list[NodeToken]
    tapes: list[Tape]
    max_crashes: int
    record_trace: bool = True
    content_hook: Callable[[dict], dict] | None = None

    states: list = field(default_factory=list)
    inited: list[bool] = field(default_factory=list)
    n_inited: int = 0
    crashed: list[bool] = field(default_factory=list)
    crashes: int = 0
    outstanding: list = field(default_factory=list)
    messages: dict[int, Broadcast] = field(default_factory=dict)
    inflight: set[int] = field(default_factory=set)
    recvs: IndexedSet = field(default_factory=IndexedSet)
    acks: IndexedSet = field(default_factory=IndexedSet)
    next_mid: int = 0
    seq: int = 0
    ack_count: int = 0
    node_acks: list[int] = field(default_factory=list)
    bcast_counts: list[int] = field(default_factory=list)
    outputs: list = field(default_factory=list)
    not_done: set[int] = field(default_factory=set)
    history: list[tuple] = field(default_factory=list)
    trace: MessageSchedule | None = None

    def __post_init__(self) -> None:
        n = self.n
        self.states = [None] * n
        self.inited = [False] * n
        self.crashed = [False] * n
        self.outstanding = [None] * n
        self.node_acks = [0] * n
        self.bcast_counts = [0] * n
        self.outputs = [None] * n
        self.not_done = set(range(n))
        if self.record_trace and self.trace is None:
            self.trace = MessageSchedule(
                n, {"protocol": self.protocol.name, "inputs": list(self.inputs), "seed": self.seed}
            )

    # -- queries ---------------------------------------------------------

    @property
    def inits_done(self) -> bool:
        return self.n_inited == self.n

    @property
    def crash_budget(self) -> int:
        return self.max_crashes - self.crashes

    @property
    def terminated(self) -> bool:
        return self.inits_done and not self.not_done

    @property
    def quiescent(self) -> bool:
        return self.inits_done and not self.recvs and not self.acks

    def live(self) -> list[int]:
        return [u for u in range(self.n) if not self.crashed[u]]

    def outstanding_msg(self, u: int):
        mid = self.outstanding[u]
        return None if mid is None else self.messages[mid].msg

    def sender_of(self, mid: int) -> int:
        return self.messages[mid].sender

    def clone(self) -> "World":
        w = World.__new__(World)
        w.__dict__.update(self.__dict__)
        w.inputs = self.inputs
        w.states = list(self.states)
        w.inited = list(self.inited)
        w.crashed = list(self.crashed)
        w.outstanding = list(self.outstanding)
        w.messages = {mid: b.copy() for mid, b in self.messages.items()}
        w.inflight = set(self.inflight)
        w.recvs = self.recvs.copy()
        w.acks = self.acks.copy()
        w.node_acks = list(self.node_acks)
        w.bcast_counts = list(self.bcast_counts)
        w.outputs = list(self.outputs)
        w.not_done = set(self.not_done)
        w.history = list(self.history)
        w.tapes = list(self.tapes)
        if self.trace is not None:
            w.trace = MessageSchedule(self.trace.n, self.trace.header, list(self.trace.events))
        return w

    # -- mutation helpers ----------------------------------------------------

    def _broadcast(self, u: int, msg) -> int:
        if self.outstanding[u] is not None:
            raise ModelViolation(f"node {u} broadcast while a message is unacknowledged")
        mid = self.next_mid
        self.next_mid += 1
        payload = self.protocol.encode(msg)
        if self.content_hook is not None:
            payload = self.content_hook(payload)
        undelivered = {v for v in range(self.n) if v != u and not self.crashed[v]}
        self.messages[mid] = Broadcast(mid, u, msg, payload, undelivered)
        self.outstanding[u] = mid
        self.bcast_counts[u] += 1
        if undelivered:
            self.inflight.add(mid)
            for v in sorted(undelivered):
                self.recvs.add((mid, v))
        else:
            self.acks.add(mid)
        return mid

    def _delivered(self, b: Broadcast) -> None:
        self.inflight.discard(b.mid)
        if self.crashed[b.sender]:
            del self.messages[b.mid]
        else:
            self.acks.add(b.mid)

    def _touch(self, u: int) -> Any:
        state = self.states[u]
        out = None
        if self.outputs[u] is None:
            out = self.protocol.output(state)
            if out is not None:
                self.outputs[u] = out
        if u in self.not_done and self.protocol.node_done(state, self.outstanding_msg(u)):
            self.not_done.discard(u)
        return out


def create_world(
    n: int,
    inputs: Sequence[Any],
    protocol: Protocol | str,
    seed: int,
    *,
    max_crashes: int | None = None,
    record_trace: bool = True,
    content_hook: Callable[[dict], dict] | None = None,
    tokens: list[NodeToken] | None = None,
    **protocol_params,
) -> World:
    if n < 1:
        raise ConfigurationError(f"need at least one node, got n={n}")
    if len(inputs) != n:
        raise ConfigurationError(f"got {len(inputs)} inputs for {n} nodes")
    if isinstance(protocol, str):
        from absmac.registry import make_protocol

        protocol = make_protocol(protocol, **protocol_params)
    protocol.validate_inputs(inputs)
    if max_crashes is None:
        max_crashes = n - 1
    if not 0 <= max_crashes <= n:
        raise ConfigurationError(f"max_crashes must be in [0, n], got {max_crashes}")
    return World(
        n=n,
        protocol=protocol,
        inputs=list(inputs),
        seed=seed,
        tokens=tokens if tokens is not None else make_tokens(n, seed),
        tapes=[Tape.for_node(seed, u) for u in range(n)],
        max_crashes=max_crashes,
        record_trace=record_trace,
        content_hook=content_hook,
    )


def enabled_events(world: World) -> list[Event]:
    """All events the scheduler may pick next, in a canonical order."""
    if not world.inits_done:
        return [Event(INIT, u) for u in range(world.n) if not world.inited[u]]
    out = [Event(RECV, v, mid) for mid, v in sorted(world.recvs.items)]
    out += [Event(ACK, world.messages[mid].sender, mid) for mid in sorted(world.acks.items)]
    if world.crash_budget > 0:
        out += [Event(CRASH, u) for u in range(world.n) if not world.crashed[u]]
    return out


def is_enabled(world: World, ev: Event) -> bool:
    kind = ev.kind
    if kind == INIT:
        return 0 <= ev.node < world.n and not world.inited[ev.node]
    if not world.inits_done:
        return False
    if kind == RECV:
        return (ev.msg, ev.node) in world.recvs
    if kind == ACK:
        return ev.msg in world.acks and world.messages[ev.msg].sender == ev.node
    if kind == CRASH:
        return world.crash_budget > 0 and 0 <= ev.node < world.n and not world.crashed[ev.node]
    return False


def apply_event(world: World, ev: Event) -> World:
    """Apply one enabled event in place, handler and broadcast atomically."""
    if not is_enabled(world, ev):
        raise SchedulerContractError(f"event {ev} is not enabled")
    kind, u = ev.kind, ev.node
    proto = world.protocol
    payload = sender = bcast_mid = bcast_payload = out = None
    msg_id = ev.msg

    if kind == INIT:
        state, msg = proto.init(world.tokens[u], world.inputs[u], world.tapes[u])
        world.states[u] = state
        world.inited[u] = True
        world.n_inited += 1
        if msg is not None:
            bcast_mid = world._broadcast(u, msg)
        out = world._touch(u)
    elif kind == RECV:
        b = world.messages[msg_id]
        b.undelivered.discard(u)
        world.recvs.remove((msg_id, u))
        payload, sender = b.payload, b.sender
        world.states[u] = proto.on_recv(world.states[u], b.msg)
        if not b.undelivered:
            world._delivered(b)
        out = world._touch(u)
    elif kind == ACK:
        b = world.messages.pop(msg_id)
        world.acks.remove(msg_id)
        world.outstanding[u] = None
        payload = b.payload
        world.ack_count += 1
        world.node_acks[u] += 1
        state, msg = proto.on_ack(world.states[u], b.msg, world.tapes[u])
        world.states[u] = state
        if msg is not None:
            bcast_mid = world._broadcast(u, msg)
        out = world._touch(u)
    else:  # CRASH
        world.crashed[u] = True
        world.crashes += 1
        world.not_done.discard(u)
        for mid in list(world.inflight):
            b = world.messages[mid]
            if u in b.undelivered:
                b.undelivered.discard(u)
                world.recvs.remove((mid, u))
                if not b.undelivered:
                    world._delivered(b)
        mid = world.outstanding[u]
        if mid is not None:
            world.outstanding[u] = None
            world.acks.discard(mid)
            if mid not in world.inflight:
                world.messages.pop(mid, None)

    combined = bcast_mid is not None
    world.history.append((kind, u, msg_id, combined))
    if world.trace is not None:
        if combined:
            bcast_payload = world.messages[bcast_mid].payload
        world.trace.events.append(
            TraceEvent(
                seq=world.seq,
                kind=kind,
                node=u,
                combined=combined,
                ack_count_after=world.ack_count,
                payload=payload,
                msg=msg_id,
                sender=sender,
                bcast_msg=bcast_mid,
                bcast=bcast_payload,
                output=out,
            )
        )
    world.seq += 1
    return world


class SchedulerView:
    """What a scheduler may see: event metadata, never contents or state.

    The view is a read-only window onto a live world; it exposes the input
    assignment, the redacted event history ``(kind, node, msg_id, combined)``,
    the enabled events, per-node ack counts and which nodes crashed.
    """

    __slots__ = ("_w",)

    def __init__(self, world: World):
        self._w = world

    @property
    def n(self) -> int:
        return self._w.n

    @property
    def inputs(self) -> list:
        return list(self._w.inputs)

    @property
    def history(self) -> list[tuple]:
        return self._w.history

    @property
    def inits_done(self) -> bool:
        return self._w.inits_done

    @property
    def pending_inits(self) -> list[int]:
        return [u for u in range(self._w.n) if not self._w.inited[u]]

    @property
    def recvs(self) -> IndexedSet:
        """Enabled receives as ``(msg_id, receiver)`` pairs."""
        return self._w.recvs

    @property
    def acks(self) -> IndexedSet:
        """Message ids whose Ack is enabled."""
        return self._w.acks

    def sender_of(self, mid: int) -> int:
        return self._w.messages[mid].sender

    @property
    def crash_budget(self) -> int:
        return self._w.crash_budget

    def crashed(self, u: int) -> bool:
        return self._w.crashed[u]

    @property
    def node_acks(self) -> list[int]:
        return self._w.node_acks

    def enabled(self) -> list[Event]:
        return enabled_events(self._w)

    def num_enabled(self) -> int:
        w = self._w
        if not w.inits_done:
            return w.n - w.n_inited
        crash = (w.n - w.crashes) if w.crash_budget > 0 else 0
        return len(w.recvs) + len(w.acks) + crash

    def snapshot(self) -> tuple:
        """Hashable summary used to compare views across runs."""
        return (tuple(self._w.inputs), tuple(self.history), tuple(self.enabled()))


def scheduler_view(world: World) -> SchedulerView:
    return SchedulerView(world)
