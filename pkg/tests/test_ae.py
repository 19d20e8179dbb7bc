from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from absmac.ae import (
    DECIDED,
    TWO,
    AeAgreement,
    AeState,
    Phase1,
    Round,
    ae_on_recv,
    ae_phase1_init,
    ae_phase1_on_ack,
    ae_round_end_on_ack,
    ae_round_start,
    compute_T,
    rank_range,
    run_layered,
)
from absmac.harness import TrialConfig, run_trial
from absmac.rng import ScriptedTape, Tape


def tape(*outcomes: int) -> ScriptedTape:
    return ScriptedTape(list(outcomes), 0, None)


def round_state(i=3, rho=7, val="own", T=10, R=(), N=64, X=6) -> AeState:
    return AeState(val=val, X=X, N=N, T=T, i=i, rho=rho, R=R, phase=TWO)


def test_phase1_counts_continues_before_the_stop():
    s, m = ae_phase1_init("v", tape(0, 0, 1))
    assert s.X == 2 and m == Phase1(2)


def test_phase1_immediate_stop_gives_zero():
    s, m = ae_phase1_init("v", tape(1))
    assert s.X == 0 and m == Phase1(0)


def test_phase1_tail_matches_geometric_half():
    rng_tape = Tape.for_node(123, 0)
    xs = np.array([rng_tape.geometric() for _ in range(50_000)])
    for k in range(1, 6):
        assert abs((xs >= k).mean() - 2.0**-k) < 0.01


def test_phase1_ack_takes_the_max_and_sets_N():
    s, _ = ae_phase1_init("v", tape(0, 0, 1))
    s = ae_on_recv(s, Phase1(3))
    s = ae_on_recv(s, Phase1(1))
    s2 = ae_phase1_on_ack(s)
    assert (s2.X, s2.N, s2.i, s2.phase) == (3, 8, 1, TWO)
    assert s2.T == compute_T(8)


def test_phase1_ack_without_receipts_keeps_X():
    s, _ = ae_phase1_init("v", tape(0, 1))
    assert ae_phase1_on_ack(s).X == 1


def test_rank_range_is_X_to_the_fourth():
    assert 2**6 == 64 and rank_range(6) == 1296
    assert rank_range(0) == 1


@pytest.mark.parametrize("N, expected", [(8, 343), (16, 2048), (2**10, math.ceil(2**10 * 1000 * math.log2(10)))])
def test_round_count_formula(N, expected):
    assert compute_T(N) == expected


def test_round_count_small_estimates_use_the_clamped_logs():
    # log2 terms use max(N, 4), the leading factor uses N itself
    assert compute_T(1) == 8
    assert compute_T(2) == 16
    assert compute_T(4) == 32


def test_round_count_scales_with_constant():
    assert compute_T(16, 2.0) == 2 * compute_T(16)


def test_single_estimate_is_always_active():
    s = round_state(N=1, X=0)
    s2, m = ae_round_start(s, tape())
    assert m.rho == 1 and s2.rho == 1


def test_inactive_draw_sends_infinite_rank():
    s2, m = ae_round_start(round_state(), tape(1))
    assert m == Round(3, None, "own") and s2.rho is None


def test_active_draw_takes_rank_from_range():
    s2, m = ae_round_start(round_state(), tape(0, 1295))
    assert m.rho == 1296
    s3, m3 = ae_round_start(round_state(), tape(0, 0))
    assert m3.rho == 1


def test_active_rank_is_uniform_on_the_range():
    ranks = []
    for seed in range(3000):
        s, m = ae_round_start(round_state(N=1, X=2), Tape.for_node(seed, 1))
        ranks.append(m.rho)
    assert min(ranks) == 1 and max(ranks) == 16
    assert abs(np.mean(ranks) - 8.5) < 0.3


def test_phase1_value_is_collected_in_phase_one():
    s, _ = ae_phase1_init("v", tape(1))
    assert ae_on_recv(s, Phase1(5)).R1 == (5,)


def test_round_messages_are_stored_by_their_round():
    s = ae_on_recv(round_state(i=3), Round(5, 2, "x"))
    assert s.buffered(5) == (Round(5, 2, "x"),)
    assert s.buffered(3) == ()


def test_stale_round_messages_are_dropped():
    s = round_state(i=3)
    assert ae_on_recv(s, Round(2, 1, "old")) is s


def test_decided_node_ignores_everything():
    s = replace(round_state(), phase=DECIDED, decision="own")
    assert ae_on_recv(s, Round(9, 1, "x")) is s
    assert ae_on_recv(s, Phase1(4)) is s


def test_smallest_beating_rank_is_adopted():
    s = round_state(i=3, rho=7, R=((3, (Round(3, 3, "A"), Round(3, 9, "B"))),))
    s2, m = ae_round_end_on_ack(s, tape(1))
    assert s2.val == "A" and m.val == "A" and m.i == 4


def test_any_finite_rank_beats_an_inactive_node():
    s = round_state(i=3, rho=None, R=((3, (Round(3, 12, "C"),)),))
    s2, _ = ae_round_end_on_ack(s, tape(1))
    assert s2.val == "C"


def test_inactive_messages_never_win():
    s = round_state(i=3, rho=None, R=((3, (Round(3, None, "D"),)),))
    s2, _ = ae_round_end_on_ack(s, tape(1))
    assert s2.val == "own"


def test_higher_rank_does_not_displace_own_value():
    s = round_state(i=3, rho=2, R=((3, (Round(3, 5, "E"),)),))
    assert ae_round_end_on_ack(s, tape(1))[0].val == "own"


def test_earlier_round_leftovers_are_discarded():
    s = round_state(i=3, rho=7, R=((2, (Round(2, 1, "D"),)), (4, (Round(4, 1, "F"),))))
    s2, _ = ae_round_end_on_ack(s, tape(1))
    assert s2.val == "own"
    assert [r for r, _ in s2.R] == [4]


def test_equal_ranks_keep_the_earliest_arrival():
    s = round_state(i=3, rho=None, R=((3, (Round(3, 4, "first"), Round(3, 4, "second"))),))
    assert ae_round_end_on_ack(s, tape(1))[0].val == "first"


def test_last_round_decides():
    s = round_state(i=10, T=10, R=((10, (Round(10, 1, "W"),)),))
    s2, m = ae_round_end_on_ack(s, tape())
    assert m is None and s2.phase == DECIDED and s2.decision == "W"


def test_wire_format_encodes_infinity_as_flag():
    p = AeAgreement()
    assert p.encode(Round(2, None, 5)) == {"t": "rd", "i": 2, "rho": 0, "inf": True, "val": 5}
    assert p.encode(Round(2, 9, 5)) == {"t": "rd", "i": 2, "rho": 9, "inf": False, "val": 5}
    assert p.encode(Phase1(3)) == {"t": "p1", "x": 3}


@pytest.mark.parametrize("n, seed", [(2, 0), (4, 1), (5, 2), (8, 3)])
def test_layered_engine_matches_the_event_engine(n, seed):
    base = TrialConfig(n=n, protocol="ae-agreement", scheduler="layers", seed=seed)
    ev = run_trial(base)
    lay = run_trial(replace(base, engine="layered"))
    assert ev.decisions == lay.decisions
    assert ev.total_acks == lay.total_acks
    assert ev.estimates == lay.estimates
    assert ev.active_counts == lay.active_counts
    assert not ev.violations


def test_layered_engine_rejects_other_schedules():
    from absmac.core import ConfigurationError
    with pytest.raises(ConfigurationError):
        TrialConfig(n=4, protocol="ae-agreement", scheduler="uniform", engine="layered")


def test_event_engine_validity_under_random_schedules_with_crashes():
    for seed in range(5):
        r = run_trial(TrialConfig(n=6, protocol="ae-agreement", seed=seed, crash_p=0.001, crash_budget=5))
        assert not r.violations
        assert all(d is None or d in r.inputs for d in r.decisions)


def test_layered_convergence_is_reported():
    out = run_layered(list(range(16)), seed=4, keep_vals=True)
    assert out.converged_round is not None
    assert len(set(out.decisions)) == 1
    assert out.vals_by_round[-1][0] == out.converged_round
