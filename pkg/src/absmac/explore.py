"""Bounded exhaustive exploration of small worlds.

Starting from the initial world, every enabled event (including crashes,
up to the crash budget) is tried, and every draw a handler makes from its
node's tape is branched over: a coin splits into heads and tails, a
``randint(lo, hi)`` into ``hi - lo + 1`` outcomes.  A node may make at most
``tape_bound`` draws; transitions that need more are pruned.

The search goes breadth first, one depth layer at a time, and
deduplicates states by hashing node states, messages in flight (by
content, not id), crash and init flags, tape positions and the oracles'
own history state.  A crashed node is reduced to its output, since nothing
else about it can affect the future.  Only the 64-bit hash of each state
is kept.  Each state is expanded once, at the shallowest depth it is
reachable, so the first violation found comes with a shortest trace.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence

from absmac.core import ConfigurationError, Event, World, apply_event, create_world, enabled_events
from absmac.oracles import OracleSet, oracles_for
from absmac.rng import NeedBranch, ScriptedTape, TapeExhausted
from absmac.trace import MessageSchedule

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 1_500_000


class WorkBudgetExceeded(RuntimeError):
    """The search would visit more states than the work budget allows."""

    def __init__(self, visited: int, estimated: int, budget: int, depth: int):
        super().__init__(
            f"refusing to continue: visited {visited} states by depth {depth}, "
            f"estimated total about {estimated}, budget {budget}"
        )
        self.visited = visited
        self.estimated = estimated
        self.budget = budget


@dataclass
class ExploreConfig:
    n: int
    inputs: Sequence[Any]
    protocol: str = "counter-race"
    seed: int = 0
    max_crashes: int | None = None
    k: int = 3
    c_T: float = 1.0
    predecision: bool = False

    def __post_init__(self) -> None:
        if len(self.inputs) != self.n:
            raise ConfigurationError(f"got {len(self.inputs)} inputs for {self.n} nodes")


@dataclass
class Verdict:
    passed: bool
    traces: int
    states: int
    transitions: int
    pruned: int
    depth_reached: int
    seconds: float
    violations: list[str] = field(default_factory=list)
    counterexample: MessageSchedule | None = None
    choices: list[Event] = field(default_factory=list)
    tapes: list[list[int]] = field(default_factory=list)

    def describe(self) -> str:
        status = "pass" if self.passed else "FAIL"
        s = (f"{status}: {self.traces} complete traces, {self.states} states, "
             f"{self.transitions} transitions, {self.pruned} pruned by the tape bound, "
             f"{self.seconds:.1f}s")
        if not self.passed:
            s += f"\n  first violation (trace of {len(self.counterexample)} events): {self.violations[0]}"
        return s


@dataclass
class _Node:
    world: World
    oracles: OracleSet
    choices: tuple
    scripts: tuple  # per node, every draw outcome so far
    state_hashes: tuple = ()  # hash of each node's state, updated only for the node that moved


def _world_key(w: World, state_hashes: tuple | None = None) -> tuple:
    msgs = frozenset(
        (b.sender, b.msg, frozenset(b.undelivered)) for b in w.messages.values()
    )
    if state_hashes is None:
        state_hashes = tuple(hash(s) for s in w.states)
    crashed = w.crashed
    if any(crashed):
        # A crashed node never acts again: only its output (decision or id) still matters.
        state_hashes = tuple(hash(("crashed", w.outputs[u])) if crashed[u] else h for u, h in enumerate(state_hashes))
        draws = tuple(0 if crashed[u] else t.draws for u, t in enumerate(w.tapes))
    else:
        draws = tuple(t.draws for t in w.tapes)
    return (state_hashes, tuple(w.inited), tuple(crashed), msgs, draws)


def _initial(config: ExploreConfig, keep_traces: bool) -> _Node:
    world = create_world(
        config.n,
        list(config.inputs),
        config.protocol,
        config.seed,
        max_crashes=config.max_crashes,
        record_trace=True,
        k=config.k,
        c_T=config.c_T,
    )
    world.trace.header.update({"k": config.k, "explored": True})
    world.tapes = [ScriptedTape([], 0, None) for _ in range(config.n)]
    oracles = oracles_for(
        config.protocol, config.n, config.inputs, k=config.k, groups=False,
        predecision=config.predecision, legality=keep_traces,
    )
    return _Node(world, oracles, (), tuple(() for _ in range(config.n)), tuple(hash(None) for _ in range(config.n)))


def _successors(node: _Node, tape_bound: int | None, stats: dict, keep_traces: bool) -> Iterator[_Node]:
    w = node.world
    for ev in enabled_events(w):
        u = ev.node
        pending = [[]]
        while pending:
            script = pending.pop()
            child = w.clone()
            child.tapes[u] = ScriptedTape(script, w.tapes[u].draws, tape_bound)
            try:
                apply_event(child, ev)
            except NeedBranch as nb:
                pending.extend(script + [j] for j in reversed(range(nb.arity)))
                continue
            except TapeExhausted:
                stats["pruned"] += 1
                continue
            oracles = node.oracles.copy()
            oracles.step(child.trace.events[-1])
            if not keep_traces:
                # Counterexamples are rebuilt by replay, so only the last event is needed.
                child.trace.events.clear()
                child.history.clear()
            scripts = node.scripts
            if script:
                scripts = scripts[:u] + (scripts[u] + tuple(script),) + scripts[u + 1:]
            hashes = node.state_hashes
            if child.states[u] is not w.states[u]:
                hashes = hashes[:u] + (hash(child.states[u]),) + hashes[u + 1:]
            yield _Node(child, oracles, node.choices + (ev,), scripts, hashes)


def _search(config: ExploreConfig, depth: int, tape_bound: int | None, budget: int, stop_on_violation: bool, keep_traces: bool):
    """Yields ``("leaf", node, stats)`` for complete traces and ``("bad", node, stats)`` for violations."""
    if depth < 0:
        raise ConfigurationError(f"depth must be non-negative, got {depth}")
    stats = {"pruned": 0, "transitions": 0, "states": 1, "depth": 0}
    root = _initial(config, keep_traces)
    seen = {_hash(root)}
    layer = [root]
    sizes = [1]
    for d in range(depth + 1):
        stats["depth"] = d
        nxt: list[_Node] = []
        for i, node in enumerate(layer):
            layer[i] = None  # let expanded nodes go while the next layer grows
            if node.world.quiescent or d == depth:
                yield "leaf", node, stats
                continue
            for child in _successors(node, tape_bound, stats, keep_traces):
                stats["transitions"] += 1
                if child.oracles.violations:
                    yield "bad", child, stats
                    if stop_on_violation:
                        return
                    continue
                h = _hash(child)
                if h in seen:
                    continue
                seen.add(h)
                stats["states"] += 1
                if stats["states"] > budget:
                    raise WorkBudgetExceeded(stats["states"], _estimate(sizes + [len(nxt) * len(layer) // (i + 1)], depth), budget, d + 1)
                nxt.append(child)
        layer = nxt
        sizes.append(len(nxt))
        if not layer:
            break


def _hash(node: _Node) -> int:
    return hash((_world_key(node.world, node.state_hashes), node.oracles.key()))


def _estimate(sizes: list[int], depth: int) -> int:
    """Extrapolate the total state count assuming the latest layer growth rate persists."""
    total = sum(sizes)
    prev, last = sizes[-2], sizes[-1]
    rate = max(last / max(prev, 1), 1.0)
    for _ in range(depth - len(sizes) + 1):
        last *= rate
        total += last
    return int(total)


def enumerate_schedules(
    config: ExploreConfig, depth: int, tape_bound: int | None = None, *, budget: int = DEFAULT_BUDGET
) -> Iterator[MessageSchedule]:
    """Every distinct complete trace within ``depth`` events and ``tape_bound`` draws per node."""
    for kind, node, _ in _search(config, depth, tape_bound, budget, stop_on_violation=False, keep_traces=True):
        if kind == "leaf":
            yield node.world.trace


def explore(
    config: ExploreConfig,
    depth: int,
    tape_bound: int | None = None,
    *,
    budget: int = DEFAULT_BUDGET,
) -> Verdict:
    """Check every oracle on every state within the bounds; stop at the first violation."""
    t0 = time.perf_counter()
    leaves = 0
    stats: dict = {"pruned": 0, "transitions": 0, "states": 1, "depth": 0}
    bad = None
    for kind, node, stats in _search(config, depth, tape_bound, budget, stop_on_violation=True, keep_traces=False):
        if kind == "leaf":
            leaves += 1
        else:
            bad = node
    v = Verdict(
        passed=bad is None,
        traces=leaves,
        states=stats["states"],
        transitions=stats["transitions"],
        pruned=stats["pruned"],
        depth_reached=stats["depth"],
        seconds=time.perf_counter() - t0,
    )
    if bad is not None:
        v.choices = list(bad.choices)
        v.tapes = [list(s) for s in bad.scripts]
        world, oracles = replay_counterexample(config, v.choices, v.tapes)
        v.violations = oracles.violations
        v.counterexample = world.trace
    return v


def replay_counterexample(
    config: ExploreConfig, choices: Sequence[Event], tapes: Sequence[Sequence[int]]
) -> tuple[World, OracleSet]:
    """Re-run a counterexample's choices and tape outcomes with full tracing."""
    node = _initial(config, keep_traces=True)
    w = node.world
    w.tapes = [ScriptedTape(list(t), 0, None) for t in tapes]
    for ev in choices:
        apply_event(w, ev)
        node.oracles.step(w.trace.events[-1])
    return w, node.oracles
