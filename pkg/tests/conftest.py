from __future__ import annotations

import pytest

from absmac.core import Event, World, apply_event, create_world, enabled_events
from absmac.trace import ACK, INIT, RECV


def init_all(world: World) -> World:
    for u in range(world.n):
        apply_event(world, Event(INIT, u))
    return world


def deliver_all(world: World, mid: int) -> None:
    for m, v in sorted(world.recvs.items):
        if m == mid:
            apply_event(world, Event(RECV, v, m))


def ack(world: World, mid: int) -> None:
    apply_event(world, Event(ACK, world.messages[mid].sender, mid))


def kinds(events) -> list[str]:
    return [e.kind for e in events]


@pytest.fixture
def two_node_race() -> World:
    return init_all(create_world(2, [0, 1], "counter-race", seed=5))


@pytest.fixture
def first_enabled():
    def pick(world: World, kind: str) -> Event:
        return next(e for e in enabled_events(world) if e.kind == kind)
    return pick


# -- acceptance report ---------------------------------------------------------

CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record (and print) the one-line verdict of an acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[number])
