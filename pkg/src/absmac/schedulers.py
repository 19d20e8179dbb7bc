"""Message-oblivious scheduling policies.

A policy sees nothing but a :class:`~absmac.core.SchedulerView` and its own
random stream, so every decision is a function of the redacted history and
the policy seed.  Base policies never schedule crashes; wrap them in
:class:`CrashInjector` for that.
"""

from __future__ import annotations

from typing import Sequence

from absmac.core import ConfigurationError, Event, SchedulerContractError, SchedulerView
from absmac.rng import POLICY_STREAM, make_generator
from absmac.trace import ACK, CRASH, INIT, RECV


class Policy:
    kind = "policy"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = make_generator(seed, POLICY_STREAM)

    def choose(self, view: SchedulerView) -> Event:
        raise NotImplementedError

    def describe(self) -> str:
        return self.kind


def _no_choice(view: SchedulerView) -> SchedulerContractError:
    return SchedulerContractError("policy asked to choose with no enabled receive or ack")


class UniformRandom(Policy):
    """Uniform over enabled Init, Recv and Ack events."""

    kind = "uniform"

    def choose(self, view: SchedulerView) -> Event:
        if not view.inits_done:
            pending = view.pending_inits
            return Event(INIT, pending[int(self.rng.integers(len(pending)))])
        recvs, acks = view.recvs, view.acks
        total = len(recvs) + len(acks)
        if total == 0:
            raise _no_choice(view)
        j = int(self.rng.integers(total))
        if j < len(recvs):
            mid, v = recvs[j]
            return Event(RECV, v, mid)
        mid = acks[j - len(recvs)]
        return Event(ACK, view.sender_of(mid), mid)


class SynchronousLayers(Policy):
    """Layered schedule: deliver every enabled receive, then ack every node.

    Inits go first in node order.  A layer delivers all enabled receives
    (oldest message first, receivers in node order), then schedules the
    acks enabled at that point in sender order.  Messages broadcast during
    the ack half wait for the next layer.
    """

    kind = "layers"

    def __init__(self, seed: int = 0):
        super().__init__(seed)
        self._mode = RECV
        self._queue: list = []

    def choose(self, view: SchedulerView) -> Event:
        if not view.inits_done:
            return Event(INIT, view.pending_inits[0])
        for _ in range(3):
            while self._queue:
                item = self._queue.pop()
                if self._mode == RECV:
                    if item in view.recvs:
                        mid, v = item
                        return Event(RECV, v, mid)
                elif item in view.acks:
                    return Event(ACK, view.sender_of(item), item)
            if self._mode == RECV and len(view.recvs):
                self._queue = sorted(view.recvs, reverse=True)
                continue
            if self._mode == RECV:
                self._mode = ACK
                self._queue = sorted(view.acks, key=view.sender_of, reverse=True)
            else:
                self._mode = RECV
                self._queue = sorted(view.recvs, reverse=True)
        raise _no_choice(view)


class AdversarialDelay(Policy):
    """Skews progress: the node with the fewest acks is starved of its ack.

    The poorest live node's Ack is withheld unless nothing else is enabled.
    Among the rest, a receive has weight 1 and an ack at ``u`` has weight
    ``1 + acks(u)``, so nodes that are ahead tend to pull further ahead.
    """

    kind = "adversarial"

    def choose(self, view: SchedulerView) -> Event:
        if not view.inits_done:
            return Event(INIT, view.pending_inits[0])
        recvs, acks = view.recvs, view.acks
        if not len(recvs) and not len(acks):
            raise _no_choice(view)
        counts = view.node_acks
        poorest = min((u for u in range(view.n) if not view.crashed(u)), key=lambda u: (counts[u], u))
        weighted = [(mid, 1 + counts[s]) for mid in acks if (s := view.sender_of(mid)) != poorest]
        total = len(recvs) + sum(w for _, w in weighted)
        if total == 0:
            mid = acks[0]
            return Event(ACK, view.sender_of(mid), mid)
        r = float(self.rng.random()) * total
        if r < len(recvs):
            mid, v = recvs[min(int(r), len(recvs) - 1)]
            return Event(RECV, v, mid)
        r -= len(recvs)
        for mid, w in weighted:
            if r < w:
                break
            r -= w
        return Event(ACK, view.sender_of(mid), mid)


class CrashInjector(Policy):
    """With probability ``p`` per step, crash a uniformly chosen live node.

    Spends at most ``budget`` crashes (and never more than the world
    allows); otherwise defers to ``inner``.
    """

    kind = "crash"

    def __init__(self, inner: Policy, p: float, budget: int, seed: int = 0):
        super().__init__(seed ^ 0x5EED)
        if not 0.0 <= p <= 1.0:
            raise ConfigurationError(f"crash probability must be in [0, 1], got {p}")
        self.inner = inner
        self.p = p
        self.budget = budget
        self.spent = 0

    def describe(self) -> str:
        return f"{self.inner.describe()}+crash(p={self.p},budget={self.budget})"

    def choose(self, view: SchedulerView) -> Event:
        if view.inits_done and self.spent < self.budget and view.crash_budget > 0 and self.p > 0:
            if float(self.rng.random()) < self.p:
                live = [u for u in range(view.n) if not view.crashed(u)]
                if live:
                    self.spent += 1
                    return Event(CRASH, live[int(self.rng.integers(len(live)))])
        return self.inner.choose(view)


class Replay(Policy):
    """Replays a fixed event list, e.g. a counterexample found by the explorer."""

    kind = "replay"

    def __init__(self, events: Sequence[Event]):
        super().__init__(0)
        self.events = list(events)
        self.pos = 0

    def choose(self, view: SchedulerView) -> Event:
        if self.pos >= len(self.events):
            raise SchedulerContractError("replay script exhausted")
        ev = self.events[self.pos]
        self.pos += 1
        return ev


POLICIES = {"uniform": UniformRandom, "layers": SynchronousLayers, "adversarial": AdversarialDelay}


def make_policy(kind: str, seed: int = 0, crash_p: float = 0.0, crash_budget: int = 0) -> Policy:
    try:
        base = POLICIES[kind](seed)
    except KeyError:
        raise ConfigurationError(
            f"unknown scheduler {kind!r}; expected one of {', '.join(POLICIES)} "
            "(exhaustive enumeration lives in absmac.explore)"
        ) from None
    if crash_p > 0 and crash_budget > 0:
        return CrashInjector(base, crash_p, crash_budget, seed)
    return base


def choose(policy: Policy, view: SchedulerView) -> Event:
    if view.num_enabled() == 0:
        raise SchedulerContractError("no enabled events")
    return policy.choose(view)
