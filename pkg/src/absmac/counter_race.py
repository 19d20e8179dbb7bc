"""Counter race consensus.

Each node races a counter for its current proposal, broadcasting
``Counter(id, c, v, n_est)`` after every ack.  A value whose largest
counter leads the other value's by ``k`` becomes a decision.  At the start
of every group of ``k + 3`` phases a node stays active with probability
``1 / n_est``; inactive nodes broadcast ``Nop`` placeholders, which look
identical to the scheduler.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Sequence

from absmac.core import ConfigurationError, NodeToken, Protocol
from absmac.rng import Tape

K = 3


@dataclass(frozen=True, slots=True)
class Counter:
    id: NodeToken
    c: int
    v: int
    n: int


@dataclass(frozen=True, slots=True)
class Nop:
    id: NodeToken
    n: int


@dataclass(frozen=True, slots=True)
class Decide:
    v: int


CrMessage = Counter | Nop | Decide


@dataclass(frozen=True, slots=True)
class CounterRaceState:
    """Per-node state.

    ``records`` holds the latest ``(counter, value)`` per id, sorted by id.
    ``decide`` is the latch set by a received Decide; ``decision`` is the
    final irrevocable output.
    """

    id: NodeToken
    v: int
    c: int
    n_est: int
    peers: frozenset
    records: tuple
    phase: int = 0
    active: bool = True
    decide: int | None = None
    decision: int | None = None
    halted: bool = False
    k: int = K

    @property
    def group_len(self) -> int:
        return self.k + 3

    def record_of(self, token: NodeToken) -> tuple[int, int] | None:
        for tok, c, v in self.records:
            if tok == token:
                return c, v
        return None


@dataclass(frozen=True, slots=True)
class RaceMaxima:
    hat_c0: int = 0
    hat_c1: int = 0

    def of(self, b: int) -> int:
        return self.hat_c1 if b else self.hat_c0


def _put_record(records: tuple, token: NodeToken, c: int, v: int) -> tuple:
    kept = [r for r in records if r[0] != token]
    kept.append((token, c, v))
    kept.sort(key=lambda r: r[0])
    return tuple(kept)


def race_maxima(state: CounterRaceState) -> RaceMaxima:
    m0 = m1 = 0
    for _, c, v in state.records:
        if v:
            if c > m1:
                m1 = c
        elif c > m0:
            m0 = c
    return RaceMaxima(m0, m1)


def cr_init(token: NodeToken, value: int, k: int = K) -> tuple[CounterRaceState, Nop]:
    if value not in (0, 1):
        raise ConfigurationError(f"counter race inputs are bits, got {value!r}")
    state = CounterRaceState(
        id=token,
        v=value,
        c=0,
        n_est=2,
        peers=frozenset([token]),
        records=((token, 0, value),),
        k=k,
    )
    return state, Nop(token, 2)


def update_estimate(state: CounterRaceState, m: CrMessage) -> CounterRaceState:
    if isinstance(m, Decide):
        return state
    peers = state.peers | {m.id}
    n_est = max(state.n_est, len(peers), m.n)
    if peers == state.peers and n_est == state.n_est:
        return state
    return replace(state, peers=peers, n_est=n_est)


def cr_on_recv(state: CounterRaceState, m: CrMessage) -> CounterRaceState:
    if state.halted:
        return state
    state = update_estimate(state, m)
    if isinstance(m, Decide):
        return replace(state, decide=m.v)
    if isinstance(m, Counter):
        return replace(state, records=_put_record(state.records, m.id, m.c, m.v))
    return state


def cr_on_ack(state: CounterRaceState, m: CrMessage, tape: Tape) -> tuple[CounterRaceState, CrMessage | None]:
    """Handle the ack of ``m``; returns the new state and the next broadcast.

    ``None`` as the message means the node decided and halted.
    """
    if state.halted:
        raise RuntimeError("ack delivered to a halted node")
    phase = state.phase + 1
    if isinstance(m, Decide):
        return replace(state, phase=phase, decision=m.v, halted=True), None

    mx = race_maxima(state)
    v, c, records, k = state.v, state.c, state.records, state.k
    if mx.hat_c0 > mx.hat_c1:
        v = 0
    elif mx.hat_c1 > mx.hat_c0:
        v = 1

    newm: CrMessage | None = None
    if mx.hat_c0 >= mx.hat_c1 + k or state.decide == 0:
        newm = Decide(0)
    elif mx.hat_c1 >= mx.hat_c0 + k or state.decide == 1:
        newm = Decide(1)

    if newm is None:
        top = max(mx.hat_c0, mx.hat_c1)
        if top <= c and not isinstance(m, Nop):
            c += 1
        elif top > c:
            c = top
        records = _put_record(records, state.id, c, v)
        newm = Counter(state.id, c, v, state.n_est)

    active = state.active
    if phase % state.group_len == 1:
        active = tape.coin(1.0 / state.n_est)

    if not (isinstance(newm, Decide) or active):
        newm = Nop(state.id, state.n_est)
    return replace(state, phase=phase, v=v, c=c, records=records, active=active), newm


class CounterRace(Protocol):
    name = "counter-race"

    def __init__(self, k: int = K):
        if k < 1:
            raise ConfigurationError(f"k must be positive, got {k}")
        self.k = k

    def validate_inputs(self, inputs: Sequence[Any]) -> None:
        bad = [x for x in inputs if x not in (0, 1)]
        if bad:
            raise ConfigurationError(f"counter race inputs must be 0 or 1, got {bad[:3]}")

    def init(self, token, value, tape):
        return cr_init(token, value, self.k)

    def on_recv(self, state, msg):
        return cr_on_recv(state, msg)

    def on_ack(self, state, msg, tape):
        return cr_on_ack(state, msg, tape)

    def halted(self, state) -> bool:
        return state.halted

    def output(self, state):
        return state.decision

    def node_done(self, state, outstanding) -> bool:
        return state.decision is not None or state.decide is not None or isinstance(outstanding, Decide)

    def encode(self, msg) -> dict:
        return encode_cr(msg)


def encode_cr(msg: CrMessage) -> dict:
    if isinstance(msg, Counter):
        return {"t": "counter", "id": str(msg.id), "c": msg.c, "v": msg.v, "n": msg.n}
    if isinstance(msg, Nop):
        return {"t": "nop", "id": str(msg.id), "n": msg.n}
    return {"t": "decide", "v": msg.v}


def decode_cr(d: dict) -> CrMessage:
    t = d["t"]
    if t == "counter":
        return Counter(NodeToken(0, d["id"]), d["c"], d["v"], d["n"])
    if t == "nop":
        return Nop(NodeToken(0, d["id"]), d["n"])
    if t == "decide":
        return Decide(d["v"])
    raise ValueError(f"not a counter-race payload: {d!r}")
