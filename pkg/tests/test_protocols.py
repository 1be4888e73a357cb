"""Split, AM and TR Move, Switch and replay behaviour on small scripted clusters."""

import itertools

import pytest
from helpers import drive, keys, make_cluster, oracle_sequence, replay_in_order

from distlist.atomics import run
from distlist.core import Busy
from distlist.sim import Sleep
from distlist.verify import check_counter_invariant, snapshot_sequence


def _wait_for(cluster, cond):
    def gen():
        while not cond():
            yield Sleep(1)

    return gen()


def _sublists(c):
    return [[k for k, _, _, d in c.servers[sh.sid].sequence(sh) if not d] for sh in c.sublist_heads()]


# Split


def test_split_example():
    c, _, _ = make_cluster(layout=[(0, list("ABCDEF"))])
    c.schedule(1, "split", 0, 2)
    c.run()
    assert _sublists(c) == [list("ABC"), list("DEF")]
    assert c.split_offsets == [(0, 0, 0)]
    assert keys(c) == list("ABCDEF")


def test_split_under_load_keeps_offsets_and_identity():
    from dataclasses import replace

    from distlist.scenarios import load_scenario, run_config

    o = run_config(replace(load_scenario("split-storm"), linTrials=0))
    c = o.cluster
    assert c.split_offsets and all(a1 + a2 == old for old, a1, a2 in c.split_offsets)
    assert c.checks["counter_violations"] == 0
    assert all(check_counter_invariant(s).ok for s in c.servers)


# AM Move


def test_quiescent_am_move():
    c, cl, refs = make_cluster(layout=[(0, ["A", "B"]), (0, ["C"])])
    before = keys(c)
    c.schedule(1, "move", 0, 1)
    c.run()
    (m,) = c.moves
    assert (m.attempts, m.aborts, m.match) == (1, 0, True)
    assert keys(c) == before
    found = drive(c, cl, cl.lookup("A"))
    assert [r.sid for r in found] == [1]


def test_move_of_empty_sublist():
    c, _, _ = make_cluster(layout=[(0, []), (0, ["X"])])
    c.schedule(1, "move", 0, 1)
    c.run()
    (m,) = c.moves
    assert m.attempts == 1 and m.size == 0 and m.match
    assert c.sublist_heads()[0].sid == 1


@pytest.mark.parametrize("protocol", ["am", "tr"])
def test_update_at_moved_node_is_delegated(protocol):
    c, cl, refs = make_cluster(protocol, layout=[(0, ["A", "B"]), (0, ["C"])])
    a = refs[0][0]
    c.schedule(1, "move", 0, 1)

    def after_switch():
        yield from _wait_for(c, lambda: c.moves and c.moves[0].switch_req is not None)
        return (yield from cl.insert_after(a, "N"))

    new = drive(c, cl, after_switch())
    assert new.sid == 1
    assert c.stats()["delegations"] >= 1
    assert keys(c) == ["A", "N", "B", "C"]


def test_double_delete_across_delegation():
    c, cl, refs = make_cluster(layout=[(0, ["A", "B"]), (0, ["C"])])
    old_b = refs[0][1]
    c.schedule(1, "move", 0, 1)
    results = []

    def racer(ref_fn):
        yield from _wait_for(c, lambda: c.moves and c.moves[0].switch_req is not None)
        ref = ref_fn()
        results.append((yield from cl.delete(ref)))

    def new_ref():
        (r,) = [x for x in c.servers[1].arena.live_refs() if c.servers[1].node(x).key == "B"]
        return c.servers[1].issue(r)

    c.sim.spawn(racer(lambda: old_b), owner="t")
    c.sim.spawn(racer(new_ref), owner="t")
    c.run()
    assert sorted(results) == [False, True]
    assert keys(c) == ["A", "C"]


def test_hot_am_move_aborts_and_cleans_up():
    from dataclasses import replace

    from distlist.scenarios import load_scenario, run_config

    o = run_config(replace(load_scenario("hot-move"), linTrials=0))
    (m,) = o.cluster.moves
    assert m.aborts >= 1 and m.attempts == m.aborts + 1
    assert m.residue_clean and all(m.residue_clean)
    assert m.match and m.oracle_match
    target = o.cluster.servers[m.target]
    assert not target.sessions


def test_switch_repoints_moved_predecessor_subtail():
    c, cl, _ = make_cluster(servers=3, layout=[(0, ["A"]), (0, ["B"]), (0, ["C"])])
    c.schedule(1, "move", 0, 1)  # the SubTail preceding sublist 1 now lives on server 1
    c.schedule(5, "move", 1, 2)
    c.run()
    assert [sh.sid for sh in c.sublist_heads()] == [1, 2, 0]
    assert keys(c) == ["A", "B", "C"]
    assert [r.sid for r in drive(c, cl, cl.lookup("B"))] == [2]


def test_reclaim_exactly_theta_after_switch():
    c, _, _ = make_cluster(layout=[(0, ["A", "B"]), (0, ["C"])])
    c.schedule(1, "move", 0, 1)
    c.run()
    (m,) = c.moves
    assert m.reclaimed - m.switch_req == c.theta


def test_delink_refused_during_transformation():
    c, _, _ = make_cluster()
    assert c.token.try_acquire("someone")
    with pytest.raises(Busy):
        run(c.servers[0].delink_pass())


def test_snapshot_and_counter_checks_on_fresh_sublist():
    c, _, _ = make_cluster(layout=[(0, [])])
    sh = c.sublist_heads()[0]
    assert snapshot_sequence(c.servers[0], sh) == []
    v = check_counter_invariant(c.servers[0])
    assert v.ok and v.checked == 1


def test_counter_check_skips_retired_sublists():
    c, _, _ = make_cluster(layout=[(0, ["A"]), (0, ["B"])])
    c.schedule(1, "move", 0, 1)
    c.run(until=50)  # sealed and switched, still inside the lease wait
    assert c.moves[0].sealed is not None and c.moves[0].reclaimed is None
    v = check_counter_invariant(c.servers[0])
    assert v.ok and v.checked == 1


# TR


def test_tr_move_never_aborts_under_writes():
    from dataclasses import replace

    from distlist.scenarios import load_scenario, run_config

    o = run_config(replace(load_scenario("reorder-adversary"), linTrials=0))
    stats = o.cluster.stats()
    assert stats["move_aborts"] == 0 and stats["replicates"] > 0
    assert stats["replays_acked"] + stats.get("late_replays", 0) >= 1
    assert o.cluster.checks["latency_violations"] == 0
    (m,) = o.cluster.moves
    assert m.match and m.oracle_match


SIBLINGS = [("ins", None, "A", 1), ("ins", "A", "B", 3), ("ins", "A", "C", 5)]


@pytest.mark.parametrize("order", [(0, 2, 1), (0, 1, 2)])
def test_sibling_replays_land_in_timestamp_order(order):
    seq, _ = replay_in_order(SIBLINGS, order)
    assert [k for k, *_ in seq] == ["A", "C", "B"]


def test_delete_replayed_before_its_insert():
    events = SIBLINGS + [("del", "B")]
    seq, target = replay_in_order(events, (3, 2, 1, 0))
    assert seq == oracle_sequence(events)
    assert ("B", 3, 0, True) in seq
    assert target.stats["replay_rescans"] >= 1


def test_duplicate_replicate_delete_is_idempotent():
    events = SIBLINGS + [("del", "B"), ("del", "B")]
    for order in itertools.permutations(range(len(events))):
        seq, target = replay_in_order(events, order)
        assert seq == oracle_sequence(SIBLINGS + [("del", "B")])
        assert target.stats["replayed_deletes"] == 2


def test_replay_under_sentinel_prev():
    events = [("ins", None, "A", 2), ("ins", None, "B", 4)]
    for order in itertools.permutations(range(2)):
        seq, _ = replay_in_order(events, order)
        assert [k for k, *_ in seq] == ["B", "A"]
