"""Almost-everywhere agreement.

Phase 1: each node draws ``X ~ Geometric(1/2)`` on {0, 1, ...}, broadcasts
it once and keeps the largest value seen before its ack; ``N = 2**X``.

Phase 2: ``T = compute_T(N)`` asynchronous rounds.  At the start of round
``i`` a node is active with probability ``1/N`` and then draws a rank in
``[1, max(1, X**4)]``; inactive nodes carry an infinite rank.  At the ack
of its round-``i`` broadcast a node adopts the value of the smallest-ranked
round-``i`` message it holds, if that rank beats its own.  Messages tagged
with a later round wait for that round; earlier ones are dropped.  After
round ``T`` the node decides.

Every round start consumes exactly two tape draws (activity coin, then a
rank draw or a skipped draw), so :func:`run_layered` can reproduce the
event-driven run with bulk draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from absmac.core import Protocol
from absmac.rng import Tape

ONE, TWO, DECIDED = "one", "two", "decided"


@dataclass(frozen=True, slots=True)
class Phase1:
    x: int


@dataclass(frozen=True, slots=True)
class Round:
    i: int
    rho: int | None  # None is the infinite rank
    val: Any


AeMessage = Phase1 | Round


@dataclass(frozen=True, slots=True)
class AeState:
    val: Any
    X: int
    N: int = 1
    T: int = 0
    i: int = 0
    rho: int | None = None
    R: tuple = ()  # ((round, (Round, ...)), ...) sorted by round
    R1: tuple = ()
    phase: str = ONE
    decision: Any = None
    c_T: float = 1.0

    def buffered(self, i: int) -> tuple:
        for r, msgs in self.R:
            if r == i:
                return msgs
        return ()


def compute_T(N: int, c_T: float = 1.0) -> int:
    """Round budget: ``max(1, ceil(c_T * N * log2(Nh)**3 * log2(log2(Nh))))`` with ``Nh = max(N, 4)``."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    nh = max(N, 4)
    lg = math.log2(nh)
    return max(1, math.ceil(c_T * N * lg**3 * math.log2(lg)))


def rank_range(X: int) -> int:
    return max(1, X**4)


def ae_phase1_init(value: Any, tape: Tape, c_T: float = 1.0) -> tuple[AeState, Phase1]:
    x = tape.geometric()
    return AeState(val=value, X=x, c_T=c_T), Phase1(x)


def _buffer(R: tuple, m: Round) -> tuple:
    out = []
    placed = False
    for r, msgs in R:
        if r == m.i:
            out.append((r, msgs + (m,)))
            placed = True
        else:
            out.append((r, msgs))
    if not placed:
        out.append((m.i, (m,)))
        out.sort(key=lambda e: e[0])
    return tuple(out)


def ae_on_recv(state: AeState, m: AeMessage) -> AeState:
    if state.phase == DECIDED:
        return state
    if isinstance(m, Phase1):
        if state.phase == ONE:
            return replace(state, R1=state.R1 + (m.x,))
        return state
    # Round messages that arrive during Phase 1 wait for their round as well.
    if state.phase == TWO and m.i < state.i:
        return state
    return replace(state, R=_buffer(state.R, m))


def ae_round_start(state: AeState, tape: Tape) -> tuple[AeState, Round]:
    active = tape.coin(1.0 / state.N)
    if active:
        rho = tape.randint(1, rank_range(state.X))
    else:
        tape.skip()
        rho = None
    return replace(state, rho=rho), Round(state.i, rho, state.val)


def ae_phase1_on_ack(state: AeState) -> AeState:
    X = max(state.R1 + (state.X,))
    N = 2**X
    return replace(state, X=X, N=N, T=compute_T(N, state.c_T), i=1, R1=(), phase=TWO)


def _beats(rank: int | None, own: int | None) -> bool:
    if rank is None:
        return False
    return own is None or rank < own


def ae_round_end_on_ack(state: AeState, tape: Tape) -> tuple[AeState, Round | None]:
    """Close round ``i``; returns the next round's broadcast or ``None`` on decision.

    Among round-``i`` messages whose rank beats the node's own, the smallest
    rank wins, earliest arrival first on ties.
    """
    i = state.i
    best = None
    for m in state.buffered(i):
        if _beats(m.rho, state.rho) and (best is None or m.rho < best.rho):
            best = m
    val = state.val if best is None else best.val
    R = tuple((r, msgs) for r, msgs in state.R if r > i)
    if i >= state.T:
        return replace(state, val=val, R=R, phase=DECIDED, decision=val, rho=None), None
    nxt = replace(state, val=val, R=R, i=i + 1)
    return ae_round_start(nxt, tape)


class AeAgreement(Protocol):
    name = "ae-agreement"

    def __init__(self, c_T: float = 1.0):
        if c_T <= 0:
            raise ValueError(f"c_T must be positive, got {c_T}")
        self.c_T = c_T

    def init(self, token, value, tape):
        return ae_phase1_init(value, tape, self.c_T)

    def on_recv(self, state, msg):
        return ae_on_recv(state, msg)

    def on_ack(self, state: AeState, msg, tape):
        if state.phase == ONE:
            return ae_round_start(ae_phase1_on_ack(state), tape)
        if state.phase == TWO:
            return ae_round_end_on_ack(state, tape)
        raise RuntimeError("ack delivered to a decided node")

    def halted(self, state) -> bool:
        return state.phase == DECIDED

    def output(self, state):
        return state.decision

    def node_done(self, state, outstanding) -> bool:
        return state.phase == DECIDED

    def encode(self, msg) -> dict:
        if isinstance(msg, Phase1):
            return {"t": "p1", "x": msg.x}
        return {"t": "rd", "i": msg.i, "rho": 0 if msg.rho is None else msg.rho, "inf": msg.rho is None, "val": msg.val}


@dataclass
class LayeredOutcome:
    """Result of :func:`run_layered`."""

    decisions: list
    X: list[int]
    N: list[int]
    T: int
    acks: int
    active_counts: np.ndarray
    rounds_sampled: int
    converged_round: int | None
    vals_by_round: list = field(default_factory=list)


def run_layered(
    inputs: list,
    seed: int,
    c_T: float = 1.0,
    *,
    metric_rounds: int = 1 << 16,
    chunk: int = 4096,
    keep_vals: bool = False,
) -> LayeredOutcome:
    """Almost-everywhere agreement under synchronous layers without crashes.

    Equivalent to driving the event simulator with the SynchronousLayers
    policy: every node sees every Phase-1 value before its ack, and every
    round-``i`` message before its round-``i`` ack, so all nodes share
    ``X``, ``N`` and ``T`` and apply the same adoption rule each round.
    Draws come from the same per-node tapes as the event engine.

    Once every value is equal no later round can change a value, so rounds
    past that point are only sampled (for active counts) up to
    ``metric_rounds`` and then counted without being drawn.
    """
    n = len(inputs)
    tapes = [Tape.for_node(seed, u) for u in range(n)]
    xs = [t.geometric() for t in tapes]
    X = max(xs)
    N = 2**X
    T = compute_T(N, c_T)
    R = rank_range(X)
    p = 1.0 / N
    vals = list(inputs)
    codes, uniq = _encode_vals(vals)
    converged = None if len(uniq) > 1 else 0
    counts: list[np.ndarray] = []
    history = []
    done = 0
    while done < T:
        if converged is not None and done >= metric_rounds:
            break
        b = min(chunk, T - done)
        draws = np.stack([t.generator.random(2 * b).reshape(b, 2) for t in tapes])
        active = draws[:, :, 0] < p
        ranks = np.where(active, 1 + np.minimum((draws[:, :, 1] * R).astype(np.int64), R - 1), np.iinfo(np.int64).max)
        cnt = active.sum(axis=0)
        counts.append(cnt)
        if converged is None:
            for j in np.nonzero(cnt)[0]:
                col = ranks[:, j]
                lo = col.min()
                winner = int(np.argmax(col == lo))
                codes = np.where(col == lo, codes, codes[winner])
                if keep_vals:
                    history.append((done + int(j) + 1, codes.copy()))
                if np.all(codes == codes[0]):
                    converged = done + int(j) + 1
                    break
        done += b
    decisions = [uniq[c] for c in codes]
    active_counts = np.concatenate(counts) if counts else np.zeros(0, dtype=np.int64)
    return LayeredOutcome(
        decisions=decisions,
        X=[X] * n,
        N=[N] * n,
        T=T,
        acks=n * (T + 1),
        active_counts=active_counts,
        rounds_sampled=int(active_counts.size),
        converged_round=converged,
        vals_by_round=[(r, [uniq[c] for c in cs]) for r, cs in history],
    )


def _encode_vals(vals: list) -> tuple[np.ndarray, list]:
    uniq: list = []
    index: dict = {}
    codes = []
    for v in vals:
        if v not in index:
            index[v] = len(uniq)
            uniq.append(v)
        codes.append(index[v])
    return np.asarray(codes, dtype=np.int64), uniq
