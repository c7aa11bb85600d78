import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pbecc.cellmac import (HARQ_RTT_SUBFRAMES, BackgroundProfile, CaController, Cell, CellConfig, Grant,
                           ReorderBuffer, SubframeAllocation, Timeline, TransportBlock, UserQueue,
                           allocations_from_rows, deliver_with_reordering, tb_error_probability, transmit_tb)
from pbecc.simcore import Packet
from oracles import tb_error_oracle


class ScriptedRng:
    """Stands in for a Generator: fails the draws whose index is listed."""

    def __init__(self, fail_draws=()):
        self.fail = set(fail_draws)
        self.n = 0

    def random(self):
        i = self.n
        self.n += 1
        return 0.0 if i in self.fail else 1.0 - 1e-12


def saturate(cell, user, n_pkts, size=12000):
    for i in range(n_pkts):
        cell.enqueue(user, Packet(user, i, size))


def make_cell(n_prb=100, rw=1000.0, ber=0.0, overhead=0.0, rng=None, **kw):
    cfg = CellConfig("c0", n_prb, Timeline.const(rw), ber, overhead=overhead, **kw)
    delivered = []
    cell = Cell(cfg, rng if rng is not None else np.random.default_rng(0),
                deliver=lambda p, t: delivered.append((p, t)))
    return cell, delivered


def test_equal_split_between_two_saturated_users():
    cell, _ = make_cell()
    saturate(cell, "A", 100)
    saturate(cell, "B", 100)
    a = cell.schedule_subframe(0)
    assert a.prbs_by_user() == {"A": 50, "B": 50} and a.idle == 0


def test_water_filling_gives_leftover_to_heavy_user():
    cell, _ = make_cell()
    cell.enqueue("A", Packet("A", 0, 20_000))  # exactly 20 PRBs at 1000 bits/PRB
    saturate(cell, "B", 100)
    a = cell.schedule_subframe(0)
    assert a.prbs_by_user() == {"A": 20, "B": 80} and a.idle == 0


def test_demand_limited_single_user_leaves_idle():
    cell, _ = make_cell()
    cell.enqueue("A", Packet("A", 0, 30_000))
    a = cell.schedule_subframe(0)
    assert a.prbs_by_user() == {"A": 30} and a.idle == 70


@pytest.mark.parametrize("p,bits,expected", [(1e-6, 10_000, 0.00995), (3e-6, 30_000, 0.0861)])
def test_tb_error_probability_examples(p, bits, expected):
    got = tb_error_probability(p, bits)
    assert got == pytest.approx(tb_error_oracle(p, bits), rel=1e-12)
    assert got == pytest.approx(expected, rel=2e-3)


def test_zero_ber_never_fails_and_draws_nothing():
    rng = ScriptedRng(fail_draws=range(10**6))
    assert all(transmit_tb(rng, 10**6, 0.0) for _ in range(100))
    assert rng.n == 0


def test_reorder_single_failure_matches_fig3():
    outcomes = [[True]] * 20
    outcomes[4] = [False, True]
    res = deliver_with_reordering(outcomes)
    delays = [d for _, d, _ in res]
    assert delays[4:13] == [8, 7, 6, 5, 4, 3, 2, 1, 0]
    assert delays[:4] == [0] * 4 and delays[13:] == [0] * 7


def test_reorder_no_failures():
    assert all(d == 0 for _, d, _ in deliver_with_reordering([[True]] * 10))


def test_reorder_double_failure_blocks_two_windows():
    outcomes = [[True]] * 30
    outcomes[2] = [False, False, True]
    res = deliver_with_reordering(outcomes)
    delays = [d for _, d, _ in res]
    assert delays[2] == 16
    assert delays[3:19] == list(range(15, -1, -1))
    assert delays[19:] == [0] * 11


def test_reorder_four_failures_drop():
    res = deliver_with_reordering([[False] * 4, [True]])
    assert res[0] == (24, 24, True)
    assert res[1] == (24, 23, False)


@given(st.lists(st.lists(st.booleans(), min_size=1, max_size=4), min_size=1, max_size=40))
def test_reorder_releases_in_subframe_order(outcomes):
    res = deliver_with_reordering(outcomes)
    rel = [r for r, _, _ in res]
    assert rel == sorted(rel)
    for i, (r, d, _) in enumerate(res):
        assert d == r - i and d >= 0


def test_reorder_buffer_rejects_out_of_order():
    rb = ReorderBuffer()
    rb.add(TransportBlock("u", 5, 1, 1.0, [], 1))
    with pytest.raises(ValueError):
        rb.add(TransportBlock("u", 4, 1, 1.0, [], 1))


def test_retransmission_is_eight_subframes_later_in_cell():
    cell, delivered = make_cell(n_prb=12, rw=1000.0, ber=1e-9, rng=ScriptedRng({3}))
    saturate(cell, "A", 40)
    allocs = [cell.schedule_subframe(sf) for sf in range(20)]
    retx = [(a.subframe, g) for a in allocs for g in a.grants if not g.ndi]
    assert [sf for sf, _ in retx] == [3 + HARQ_RTT_SUBFRAMES]
    assert retx[0][1].prbs == 12


def test_background_single_subframe_profile():
    cell, _ = make_cell()
    cell.inject_background_user(BackgroundProfile("ctl", 5, 1, 4))
    seen = [sf for sf in range(20) if "ctl" in cell.schedule_subframe(sf).prbs_by_user()]
    assert seen == [5]


def test_overlapping_background_profiles_truncate():
    cell, _ = make_cell()
    cell.inject_background_user(BackgroundProfile("b1", 0, 100, 70))
    cell.inject_background_user(BackgroundProfile("b2", 0, 100, 50))
    a = cell.schedule_subframe(0)
    assert a.prbs_by_user() == {"b1": 70, "b2": 30} and a.idle == 0


def test_background_preempts_data_users():
    cell, _ = make_cell()
    cell.inject_background_user(BackgroundProfile("bg", 0, 100, 20))
    saturate(cell, "A", 100)
    a = cell.schedule_subframe(0)
    assert a.prbs_by_user() == {"bg": 20, "A": 80}


def test_oversized_background_rejected():
    cell, _ = make_cell(n_prb=50)
    with pytest.raises(ValueError):
        cell.inject_background_user(BackgroundProfile("x", 0, 1, 51))


@given(st.lists(st.integers(0, 60_000), min_size=1, max_size=6), st.integers(1, 110))
def test_allocated_plus_idle_is_cell_size(backlogs, n_prb):
    cell, _ = make_cell(n_prb=n_prb)
    for i, b in enumerate(backlogs):
        if b:
            cell.enqueue(f"u{i}", Packet(f"u{i}", 0, b))
    for sf in range(3):
        a = cell.schedule_subframe(sf)
        assert a.allocated + a.idle == n_prb
        assert a.idle >= 0


@pytest.mark.parametrize("overhead", [0.0, 0.068])
def test_saturated_goodput_at_zero_ber(overhead):
    cell, delivered = make_cell(n_prb=50, rw=1200.0, overhead=overhead)
    saturate(cell, "A", 2000, size=6000)
    n_sf = 200
    for sf in range(n_sf):
        cell.schedule_subframe(sf)
    bits = sum(p.size_bits for p, _ in delivered)
    assert bits == pytest.approx(1200 * 50 * (1 - overhead) * n_sf, rel=0.01)


def test_separate_buffers_isolate_harq():
    # A's failure must not hold up B's release
    cell, delivered = make_cell(n_prb=20, rw=1000.0, ber=1e-9, rng=ScriptedRng({0}))
    cell.enqueue("A", Packet("A", 0, 10_000))
    cell.enqueue("B", Packet("B", 0, 10_000))
    cell.schedule_subframe(0)
    assert [p.flow_id for p, _ in delivered] == ["B"]
    assert delivered[0][0].harq_delay_ms == 0


def test_user_buffer_overflow_drops():
    cfg = CellConfig("c", 10, Timeline.const(1000.0), user_buffer_bytes=3000)
    dropped = []
    cell = Cell(cfg, np.random.default_rng(0), drop=dropped.append)
    ok = [cell.enqueue("A", Packet("A", i, 12000)) for i in range(3)]
    assert ok == [True, True, False]
    assert len(dropped) == 1 and cell.queues["A"].drops == 1


def test_user_queue_fragments():
    q = UserQueue("u")
    q.push(Packet("u", 0, 1000))
    q.push(Packet("u", 1, 1000))
    frags = q.pull(1500)
    assert [(p.seq, b) for p, b in frags] == [(0, 1000), (1, 500)]
    assert q.backlog_bits == 500


def test_config_validation():
    with pytest.raises(ValueError):
        CellConfig("c", 0)
    with pytest.raises(ValueError):
        CellConfig("c", 10, ber=1.0)
    with pytest.raises(ValueError):
        CellConfig("c", 10, Timeline.const(0.0))
    cfg = CellConfig("c", 10, ber=Timeline([(0, 1e-6), (1, 2e-6)]))
    assert cfg.ber_for("u", 1_500_000) == 2e-6


def test_timeline_modes():
    step = Timeline([(0, 10), (1, 20)])
    lin = Timeline([(0, 10), (1, 20)], mode="linear")
    assert step.at(500_000) == 10 and lin.at(500_000) == 15
    assert lin.at(5_000_000) == 20


def test_allocation_rows_round_trip():
    a = SubframeAllocation("c", 7, 100, [Grant("A", 40, 700.0), Grant("B", 30, 650.0, ndi=False)])
    header = ("time", "cell", "user", "prbs", "rw_bits_per_prb", "ndi", "idle_prbs")
    rows = [{k: str(v) for k, v in zip(header, r)} for r in a.rows()]
    (back,) = allocations_from_rows(rows, {"c": 100})
    assert back.subframe == 7 and back.prbs_by_user() == {"A": 40, "B": 30} and back.idle == 30
    assert back.grants[1].ndi is False


def _two_cells():
    rng = np.random.default_rng(1)
    return [Cell(CellConfig(c, 50, Timeline.const(720.0)), rng) for c in ("p", "s")]


def test_ca_never_triggers_below_threshold():
    cells = _two_cells()
    ca = CaController("u", cells)
    for sf in range(2000):
        a = SubframeAllocation("p", sf, 50, [Grant("u", 25, 720.0)])
        assert ca.ca_update(sf, {"p": a}) is None
    assert ca.active == [True, False] and ca.events == []


def test_ca_activates_after_window_of_high_share():
    cells = _two_cells()
    ca = CaController("u", cells, activate_window_ms=100)
    ev = None
    for sf in range(200):
        ev = ca.ca_update(sf, {"p": SubframeAllocation("p", sf, 50, [Grant("u", 50, 720.0)])}) or ev
        if ev:
            break
    assert ev == (99, "s", "activate") and ca.n_active == 2


def test_ca_pick_cell_prefers_shorter_drain():
    cells = _two_cells()
    ca = CaController("u", cells)
    ca.active = [True, True]
    cells[0].enqueue("u", Packet("u", 0, 12000))
    assert ca.pick_cell(12000, 0) is cells[1]
