"""Trace oracles.

Every oracle consumes a trace one :class:`~absmac.trace.TraceEvent` at a
time and only looks at payload snapshots, so the same checks run live
during a trial, inside the exhaustive explorer, and on a trace read back
from disk.  Violations are collected as short strings naming the broken
property.

Counter-race terms used below: a node's maxima ``hat[u][b]`` are the
largest counter it has sent or received together with value ``b``
(default 0); a message is in transit while some node that was live when it
was broadcast has neither received it nor crashed.  The set of ``c`` for
which the execution is ``(b, c)``-dominated is the half-open interval
``[lo_b, hi_b)`` computed by :meth:`RaceOracle.interval`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from absmac.trace import ACK, CRASH, INIT, RECV, MessageSchedule, TraceEvent

INF = math.inf


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    @property
    def empty(self) -> bool:
        return self.lo >= self.hi

    def __contains__(self, c: int) -> bool:
        return self.lo <= c < self.hi

    def within(self, other: "Interval") -> bool:
        return other.lo <= self.lo and self.hi <= other.hi


def _kind(payload: Any) -> str | None:
    return payload.get("t") if isinstance(payload, dict) else None


class Oracle:
    name = "oracle"

    def __init__(self) -> None:
        self.violations: list[str] = []

    def step(self, ev: TraceEvent) -> None:
        raise NotImplementedError

    def finish(self) -> None:
        pass

    def key(self) -> tuple:
        return ()

    def copy(self) -> "Oracle":
        raise NotImplementedError

    def flag(self, what: str, ev: TraceEvent | None = None) -> None:
        where = "" if ev is None else f" at seq {ev.seq}"
        self.violations.append(f"{what}{where}")


class LegalityOracle(Oracle):
    """Model rules: one outstanding broadcast per node, Ack only after delivery."""

    name = "legality"

    def __init__(self, n: int):
        super().__init__()
        self.n = n
        self.crashed = [False] * n
        self.inited = [False] * n
        self.pending: dict[int, tuple[int, set[int]]] = {}  # mid -> (sender, undelivered)
        self.outstanding: list[int | None] = [None] * n

    def copy(self) -> "LegalityOracle":
        o = LegalityOracle.__new__(LegalityOracle)
        o.violations = list(self.violations)
        o.n = self.n
        o.crashed = list(self.crashed)
        o.inited = list(self.inited)
        o.pending = {m: (s, set(r)) for m, (s, r) in self.pending.items()}
        o.outstanding = list(self.outstanding)
        return o

    def _bcast(self, u: int, mid: int, ev: TraceEvent) -> None:
        if self.outstanding[u] is not None:
            self.flag(f"node {u} broadcast with message {self.outstanding[u]} unacknowledged", ev)
        self.outstanding[u] = mid
        self.pending[mid] = (u, {v for v in range(self.n) if v != u and not self.crashed[v]})

    def step(self, ev: TraceEvent) -> None:
        u = ev.node
        if self.crashed[u]:
            self.flag(f"event at crashed node {u}", ev)
        if ev.kind == INIT:
            if self.inited[u]:
                self.flag(f"second init at node {u}", ev)
            self.inited[u] = True
        elif not all(self.inited):
            self.flag("event before every init", ev)
        if ev.kind == RECV:
            entry = self.pending.get(ev.msg)
            if entry is None or u not in entry[1]:
                self.flag(f"node {u} received message {ev.msg} it was not owed", ev)
            else:
                entry[1].discard(u)
        elif ev.kind == ACK:
            entry = self.pending.get(ev.msg)
            if entry is None or entry[0] != u:
                self.flag(f"node {u} acked message {ev.msg} it did not send", ev)
            elif entry[1]:
                self.flag(f"ack of message {ev.msg} before delivery to {sorted(entry[1])}", ev)
            else:
                del self.pending[ev.msg]
                self.outstanding[u] = None
        elif ev.kind == CRASH:
            self.crashed[u] = True
            for _, rest in self.pending.values():
                rest.discard(u)
        if ev.bcast_msg is not None:
            self._bcast(u, ev.bcast_msg, ev)
        if ev.combined != (ev.bcast_msg is not None):
            self.flag("combined flag does not match the broadcast", ev)


class DecisionOracle(Oracle):
    """Validity and agreement over the outputs recorded in the trace."""

    name = "decisions"

    def __init__(self, inputs: Sequence[Any], agreement: bool = True):
        super().__init__()
        self.inputs = list(inputs)
        self.agreement = agreement
        self.decided: dict[int, Any] = {}

    def copy(self) -> "DecisionOracle":
        o = DecisionOracle(self.inputs, self.agreement)
        o.violations = list(self.violations)
        o.decided = dict(self.decided)
        return o

    def step(self, ev: TraceEvent) -> None:
        if ev.output is None:
            return
        if ev.output not in self.inputs:
            self.flag(f"validity: node {ev.node} decided {ev.output!r}, not an input", ev)
        if self.agreement and self.decided and ev.output not in self.decided.values():
            self.flag(f"agreement: node {ev.node} decided {ev.output!r} after {set(self.decided.values())}", ev)
        self.decided[ev.node] = ev.output


class DistinctIdOracle(Oracle):
    name = "distinct-ids"

    def __init__(self) -> None:
        super().__init__()
        self.adopted: dict[str, int] = {}

    def copy(self) -> "DistinctIdOracle":
        o = DistinctIdOracle()
        o.violations = list(self.violations)
        o.adopted = dict(self.adopted)
        return o

    def observe(self, u: int, ident: str, ev: TraceEvent) -> None:
        if ident in self.adopted and self.adopted[ident] != u:
            self.flag(f"id {ident!r} adopted by nodes {self.adopted[ident]} and {u}", ev)
        self.adopted[ident] = u

    def step(self, ev: TraceEvent) -> None:
        # The adoption ack is the one whose acked string is not extended by a new idbits broadcast.
        if ev.kind == ACK and _kind(ev.payload) == "idbits" and _kind(ev.bcast) != "idbits":
            self.observe(ev.node, ev.payload["s"], ev)


class RaceOracle(Oracle):
    """Counter-race safety oracles, plus the clean-group check.

    Checks, on every event: the increment property at each counter
    broadcast, that the dominated interval for each value only ever grows
    once it is non-empty, estimate soundness, and, at the first Decide
    broadcast, that the execution is dominated by the decided value.
    With ``groups`` set it also checks that a clean group ends in the
    termination state (this needs every ack to be a counter-race ack, so
    it is off for the ID-generation composition).  ``predecision`` turns
    the first-Decide check off.
    """

    name = "counter-race"

    def __init__(self, n: int, k: int = 3, groups: bool = True, predecision: bool = True):
        super().__init__()
        self.n = n
        self.k = k
        self.groups = groups
        self.predecision = predecision
        self.crashed = [False] * n
        # seen sets and transit entries are immutable so copies can share them
        self.seen: list[frozenset[tuple[int, int]]] = [frozenset()] * n
        self.hat = [(0, 0)] * n
        self.transit: dict[int, tuple[int, int, frozenset[int]]] = {}  # mid -> (c, v, still owed)
        self.has_decide = [False] * n
        self.first_decide: tuple | None = None
        self.acks = [0] * n
        self.window: list[bool | None] = [None] * n  # None: no group open; else "still clean"
        self.clean_groups = 0
        self.iv = (self.interval(0), self.interval(1))

    def copy(self) -> "RaceOracle":
        o = RaceOracle.__new__(RaceOracle)
        o.violations = list(self.violations)
        o.n, o.k, o.groups, o.predecision = self.n, self.k, self.groups, self.predecision
        o.crashed = list(self.crashed)
        o.seen = list(self.seen)
        o.hat = list(self.hat)
        o.transit = dict(self.transit)
        o.has_decide = list(self.has_decide)
        o.first_decide = self.first_decide
        o.acks = list(self.acks)
        o.window = list(self.window)
        o.clean_groups = self.clean_groups
        o.iv = self.iv
        return o

    def key(self) -> tuple:
        seen = tuple(frozenset() if self.crashed[u] else s for u, s in enumerate(self.seen))
        return (seen, self.predecision and self.first_decide is not None)

    # -- definitions -----------------------------------------------------

    def interval(self, b: int) -> Interval:
        """Values of ``c`` for which the execution is currently ``(b, c)``-dominated."""
        lo = 0
        hi = INF
        for u in range(self.n):
            if self.crashed[u]:
                continue
            lo = max(lo, self.hat[u][1 - b])
            hi = min(hi, self.hat[u][b])
        for c, v, _ in self.transit.values():
            if v != b:
                lo = max(lo, c)
        return Interval(lo, hi)

    def dominated(self, b: int, c: int) -> bool:
        return c in self.interval(b)

    def termination_state(self) -> bool:
        return all(self.crashed[u] or self.has_decide[u] for u in range(self.n))

    # -- replay ------------------------------------------------------------

    def _see(self, u: int, c: int, v: int) -> None:
        if (c, v) not in self.seen[u]:
            self.seen[u] = self.seen[u] | {(c, v)}
            h = self.hat[u]
            if c > h[v]:
                self.hat[u] = (c, h[1]) if v == 0 else (h[0], c)

    def _deliver(self, mid: int, u: int) -> None:
        entry = self.transit.get(mid)
        if entry is not None and u in entry[2]:
            rest = entry[2] - {u}
            if rest:
                self.transit[mid] = (entry[0], entry[1], rest)
            else:
                del self.transit[mid]

    def _bcast(self, u: int, mid: int, p: dict, ev: TraceEvent) -> None:
        t = _kind(p)
        # estimates start at 2, so a lone node is allowed that much
        if t in ("counter", "nop") and p["n"] > max(self.n, 2):
            self.flag(f"estimate soundness: node {u} advertised n={p['n']} > {self.n}", ev)
        if t == "counter":
            c, v = p["c"], p["v"]
            if c > 0:
                missing = [w for w in range(self.n) if not self.crashed[w] and (c - 1, v) not in self.seen[w]]
                if missing:
                    self.flag(f"increment: Counter(c={c}, v={v}) from {u} before nodes {missing} saw (c={c - 1}, v={v})", ev)
            self._see(u, c, v)
            owed = frozenset(w for w in range(self.n) if w != u and not self.crashed[w])
            if owed:
                self.transit[mid] = (c, v, owed)
        elif t == "decide":
            self.has_decide[u] = True
            if self.first_decide is None:
                self.first_decide = (u, p["v"], self.hat[u][1 - p["v"]])

    def step(self, ev: TraceEvent) -> None:
        u, kind = ev.node, ev.kind
        check_pre = self.predecision and self.first_decide is None
        if kind == RECV:
            p = ev.payload
            t = _kind(p)
            self._deliver(ev.msg, u)
            if t == "counter":
                self._see(u, p["c"], p["v"])
            elif t == "decide":
                self.has_decide[u] = True
            if self.groups and self.window[u] is not None and t != "nop":
                self.window[u] = False
        elif kind == CRASH:
            self.crashed[u] = True
            self.window[u] = None
            for mid in list(self.transit):
                self._deliver(mid, u)
        if ev.bcast_msg is not None:
            self._bcast(u, ev.bcast_msg, ev.bcast, ev)
        if kind == ACK and _kind(ev.payload) in ("counter", "nop", "decide"):
            self._ack_groups(u, ev)

        new = (self.interval(0), self.interval(1))
        for b in (0, 1):
            old = self.iv[b]
            if not old.empty and not old.within(new[b]):
                self.flag(f"monotonicity: ({b}, c)-dominated range went from [{old.lo}, {old.hi}) to [{new[b].lo}, {new[b].hi})", ev)
        self.iv = new

        if check_pre and self.first_decide is not None:
            w, b, x = self.first_decide
            if not self.dominated(b, x + 1):
                iv = self.iv[b]
                self.flag(f"pre-decision: node {w} broadcast Decide({b}) with opposing max {x}, "
                          f"but the ({b}, c)-dominated range is [{iv.lo}, {iv.hi})", ev)

    def _ack_groups(self, u: int, ev: TraceEvent) -> None:
        if not self.groups:
            return
        self.acks[u] += 1
        j = self.acks[u]
        g = self.k + 3
        halting = _kind(ev.payload) == "decide"
        if self.window[u] is not None and (j % g == 0 or halting):
            if self.window[u]:
                self.clean_groups += 1
                if not self.termination_state():
                    self.flag(f"clean group: node {u} finished a clean group outside the termination state", ev)
            self.window[u] = None
        if j % g == 1 and not halting and _kind(ev.bcast) in ("counter", "decide"):
            self.window[u] = True


class AeOracle(Oracle):
    """Almost-everywhere agreement: round isolation and minimum-rank spread.

    Round isolation is checked by recomputing every round-``i`` adoption
    from the round-``i`` messages the node had received, then comparing
    with the value it actually carried into round ``i + 1`` (or decided).
    """

    name = "ae-agreement"

    def __init__(self, n: int):
        super().__init__()
        self.n = n
        self.got: list[dict[int, list[tuple]]] = [{} for _ in range(n)]
        self.mine: list[tuple | None] = [None] * n  # (round, rho, val) of the outstanding Round
        self.first_ack: dict[int, tuple] = {}  # round -> (node, rho, val)
        self.ranks: dict[int, list[int]] = {}  # round -> finite ranks broadcast
        self.after: dict[int, list[tuple[int, Any]]] = {}  # round -> [(node, val after ack)]

    def copy(self) -> "AeOracle":
        o = AeOracle(self.n)
        o.violations = list(self.violations)
        o.got = [{r: list(m) for r, m in g.items()} for g in self.got]
        o.mine = list(self.mine)
        o.first_ack = dict(self.first_ack)
        o.ranks = {r: list(x) for r, x in self.ranks.items()}
        o.after = {r: list(x) for r, x in self.after.items()}
        return o

    @staticmethod
    def _rho(p: dict) -> int | None:
        return None if p["inf"] else p["rho"]

    def step(self, ev: TraceEvent) -> None:
        u = ev.node
        if ev.kind == RECV and _kind(ev.payload) == "rd":
            p = ev.payload
            self.got[u].setdefault(p["i"], []).append((self._rho(p), p["val"]))
        if ev.kind == ACK and _kind(ev.payload) == "rd":
            self._round_end(u, ev)
        if _kind(ev.bcast) == "rd":
            p = ev.bcast
            rho = self._rho(p)
            self.mine[u] = (p["i"], rho, p["val"])
            if rho is not None:
                self.ranks.setdefault(p["i"], []).append(rho)

    def _round_end(self, u: int, ev: TraceEvent) -> None:
        i, rho, val = self.mine[u]
        best = None
        for r, v in self.got[u].get(i, ()):
            if r is not None and (rho is None or r < rho) and (best is None or r < best[0]):
                best = (r, v)
        expected = val if best is None else best[1]
        actual = ev.output if ev.bcast is None else ev.bcast["val"]
        if actual != expected:
            self.flag(f"round isolation: node {u} left round {i} with {actual!r}, expected {expected!r}", ev)
        for r in [r for r in self.got[u] if r <= i]:
            del self.got[u][r]
        if i not in self.first_ack:
            self.first_ack[i] = (u, rho, val)
        if self.first_ack[i][1] is not None:
            self.after.setdefault(i, []).append((u, actual))

    def finish(self) -> None:
        for i, (w, rho, val) in self.first_ack.items():
            if rho is None or self.ranks.get(i, []).count(rho) != 1 or min(self.ranks[i]) != rho:
                continue
            for u, got in self.after.get(i, []):
                if got != val:
                    self.flag(f"minimum rank: round {i} leader {w} (rank {rho}) but node {u} holds {got!r}")


class OracleSet:
    """Runs several oracles side by side."""

    def __init__(self, oracles: Iterable[Oracle]):
        self.oracles = list(oracles)

    def step(self, ev: TraceEvent) -> None:
        for o in self.oracles:
            o.step(ev)

    def finish(self) -> None:
        for o in self.oracles:
            o.finish()

    @property
    def violations(self) -> list[str]:
        return [f"{o.name}: {v}" for o in self.oracles for v in o.violations]

    def key(self) -> tuple:
        return tuple(o.key() for o in self.oracles)

    def copy(self) -> "OracleSet":
        return OracleSet(o.copy() for o in self.oracles)

    def get(self, cls: type) -> Oracle | None:
        for o in self.oracles:
            if isinstance(o, cls):
                return o
        return None


def oracles_for(
    protocol: str,
    n: int,
    inputs: Sequence[Any],
    *,
    k: int = 3,
    groups: bool = True,
    predecision: bool = True,
    legality: bool = True,
) -> OracleSet:
    out: list[Oracle] = [LegalityOracle(n)] if legality else []
    if protocol == "counter-race":
        out += [DecisionOracle(inputs), RaceOracle(n, k, groups=groups, predecision=predecision)]
    elif protocol == "counter-race+idgen":
        out += [DecisionOracle(inputs), RaceOracle(n, k, groups=False, predecision=predecision), DistinctIdOracle()]
    elif protocol == "id-gen":
        out += [DistinctIdOracle()]
    elif protocol == "ae-agreement":
        out += [DecisionOracle(inputs, agreement=False), AeOracle(n)]
    else:
        raise ValueError(f"no oracles for protocol {protocol!r}")
    return OracleSet(out)


def replay(schedule: MessageSchedule, oracles: OracleSet) -> list[str]:
    for ev in schedule.events:
        oracles.step(ev)
    oracles.finish()
    return oracles.violations


def replay_schedule(schedule: MessageSchedule, *, groups: bool = True) -> list[str]:
    """Re-run every oracle that applies to the schedule's protocol."""
    h = schedule.header
    return replay(schedule, oracles_for(h["protocol"], schedule.n, h["inputs"], k=h.get("k", 3), groups=groups))


# -- single-question helpers ----------------------------------------------------


def is_dominated(prefix: MessageSchedule, b: int, c: int) -> bool:
    """Whether the execution is ``(b, c)``-dominated after the last event of ``prefix``."""
    o = RaceOracle(prefix.n, groups=False)
    for ev in prefix.events:
        o.step(ev)
    return o.dominated(b, c)


def check_increment_property(schedule: MessageSchedule) -> bool:
    o = RaceOracle(schedule.n, groups=False)
    for ev in schedule.events:
        o.step(ev)
    return not any(v.startswith("increment") for v in o.violations)


def termination_state(world) -> bool:
    """Every live node has decided, holds a Decide latch, or is broadcasting Decide."""
    return world.terminated
