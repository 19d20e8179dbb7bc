from __future__ import annotations

import pytest

from absmac.core import (
    ConfigurationError,
    Event,
    IndexedSet,
    SchedulerContractError,
    apply_event,
    create_world,
    enabled_events,
    is_enabled,
    make_tokens,
    scheduler_view,
)
from absmac.trace import ACK, CRASH, INIT, RECV

from conftest import ack, deliver_all, init_all


def test_fresh_single_node_world_offers_only_its_init():
    w = create_world(1, [0], "counter-race", seed=7)
    assert enabled_events(w) == [Event(INIT, 0)]


def test_fresh_ae_world_has_every_init_enabled_and_nothing_applied():
    w = create_world(2, [0, 1], "ae-agreement", seed=1)
    assert enabled_events(w) == [Event(INIT, 0), Event(INIT, 1)]
    assert w.seq == 0 and not any(w.inited)


def test_after_both_inits_each_peer_can_receive_and_each_node_can_crash(two_node_race):
    w = two_node_race
    ev = enabled_events(w)
    recvs = {(e.msg, e.node) for e in ev if e.kind == RECV}
    assert recvs == {(0, 1), (1, 0)}
    assert {e.node for e in ev if e.kind == CRASH} == {0, 1}
    assert not [e for e in ev if e.kind == ACK]


def test_ack_becomes_enabled_once_every_peer_received(two_node_race):
    w = two_node_race
    assert Event(ACK, 0, 0) not in enabled_events(w)
    deliver_all(w, 0)
    assert Event(ACK, 0, 0) in enabled_events(w)


def test_no_recv_or_init_offered_before_init_phase_ends():
    w = create_world(3, [0, 1, 1], "counter-race", seed=2)
    apply_event(w, Event(INIT, 1))
    assert all(e.kind == INIT for e in enabled_events(w))
    with pytest.raises(SchedulerContractError):
        apply_event(w, Event(CRASH, 0))


def test_everyone_crashed_leaves_nothing_enabled():
    w = init_all(create_world(3, [0, 1, 0], "counter-race", seed=3, max_crashes=3))
    for u in range(3):
        apply_event(w, Event(CRASH, u))
    assert enabled_events(w) == []
    assert w.quiescent


def test_crashed_node_gets_no_further_events(two_node_race):
    w = two_node_race
    apply_event(w, Event(CRASH, 1))
    assert all(e.node != 1 for e in enabled_events(w))
    # node 0's message needs no further delivery; node 1's may still reach node 0
    assert enabled_events(w) == [Event(RECV, 0, 1), Event(ACK, 0, 0)]


def test_crash_budget_defaults_to_n_minus_one(two_node_race):
    w = two_node_race
    apply_event(w, Event(CRASH, 1))
    assert w.crash_budget == 0
    assert not is_enabled(w, Event(CRASH, 0))


def test_one_message_at_a_time_then_broadcast_again(two_node_race):
    w = two_node_race
    assert w.outstanding[0] == 0
    deliver_all(w, 0)
    ack(w, 0)
    assert w.outstanding[0] is not None and w.outstanding[0] != 0
    last = w.trace.events[-1]
    assert last.kind == ACK and last.combined and last.bcast["t"] in ("counter", "nop")


def test_counter_race_init_is_combined_with_a_nop_broadcast():
    w = create_world(2, [1, 0], "counter-race", seed=9)
    apply_event(w, Event(INIT, 0))
    ev = w.trace.events[0]
    assert ev.combined
    assert ev.bcast == {"t": "nop", "id": str(w.tokens[0]), "n": 2}


def test_recv_never_reaches_the_sender(two_node_race):
    assert all(v != w_sender for (m, v), w_sender in
               ((item, two_node_race.messages[item[0]].sender) for item in two_node_race.recvs))


def test_applying_a_disabled_event_is_rejected(two_node_race):
    with pytest.raises(SchedulerContractError):
        apply_event(two_node_race, Event(ACK, 0, 0))
    with pytest.raises(SchedulerContractError):
        apply_event(two_node_race, Event(RECV, 0, 0))


def test_views_ignore_message_contents():
    def scramble(payload: dict) -> dict:
        return {key: "x" for key in payload}

    a = create_world(3, [0, 1, 1], "counter-race", seed=4)
    b = create_world(3, [0, 1, 1], "counter-race", seed=4, content_hook=scramble)
    for w in (a, b):
        init_all(w)
        deliver_all(w, 0)
        ack(w, 0)
    assert scheduler_view(a).snapshot() == scheduler_view(b).snapshot()
    assert a.trace.events[-1].bcast != b.trace.events[-1].bcast


def test_view_marks_init_with_broadcast_as_combined():
    w = create_world(2, [0, 0], "counter-race", seed=0)
    apply_event(w, Event(INIT, 1))
    assert scheduler_view(w).history == [(INIT, 1, None, True)]


def test_empty_view_has_inputs_and_no_history():
    v = scheduler_view(create_world(2, [1, 0], "id-gen", seed=0))
    assert v.inputs == [1, 0]
    assert v.history == []
    assert v.pending_inits == [0, 1]


def test_view_exposes_no_payloads_or_states():
    v = scheduler_view(create_world(2, [0, 1], "counter-race", seed=0))
    public = {name for name in dir(v) if not name.startswith("_")}
    assert not public & {"messages", "states", "payload", "trace", "tapes", "tokens"}


@pytest.mark.parametrize("n, inputs", [(0, []), (2, [0])])
def test_bad_world_shapes_are_rejected(n, inputs):
    with pytest.raises(ConfigurationError):
        create_world(n, inputs, "counter-race", seed=0)


def test_non_bit_inputs_rejected_for_counter_race():
    with pytest.raises(ConfigurationError):
        create_world(2, [0, 2], "counter-race", seed=0)


def test_tokens_are_distinct_and_seeded():
    assert make_tokens(5, 1) == make_tokens(5, 1)
    assert len(set(make_tokens(50, 1))) == 50


def test_indexed_set_positional_pick_survives_removal():
    s = IndexedSet([3, 1, 2])
    s.remove(3)
    assert sorted(s) == [1, 2] and len(s) == 2
    assert {s[0], s[1]} == {1, 2}
    s.discard(99)
    assert 2 in s and 3 not in s


def test_clone_is_independent(two_node_race):
    w = two_node_race
    c = w.clone()
    deliver_all(c, 0)
    assert (0, 1) in w.recvs and (0, 1) not in c.recvs
    assert w.messages[0].undelivered == {1}
