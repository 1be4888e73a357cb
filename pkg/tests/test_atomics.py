import itertools

import pytest

from distlist.atomics import NEG_INF, AtomicWord, SharedCounter, rdcss, run
from distlist.interleave import explore


def _cas_prog(cell, expected, new):
    yield
    return cell.cas(expected, new)


def test_cas_success_and_failure():
    cell = AtomicWord(0)
    assert cell.cas(0, 1) and cell.load() == 1
    assert not cell.cas(0, 2) and cell.load() == 1


def test_two_racing_cas_exactly_one_wins():
    outcomes = set()

    def setup():
        cell = AtomicWord(0)
        return [_cas_prog(cell, 0, 1), _cas_prog(cell, 0, 2)], cell

    def check(cell, results):
        assert sorted(results) == [False, True]
        assert cell.load() == (1 if results[0] else 2)
        outcomes.add(tuple(results))

    assert explore(setup, check) >= 2
    assert outcomes == {(True, False), (False, True)}


def test_rdcss_both_comparisons_hold():
    ctl, data = AtomicWord(False), AtomicWord("X")
    assert run(rdcss(ctl, False, data, "X", "Y")) is True
    assert data.load() == "Y"


def test_rdcss_control_mismatch_restores_data():
    ctl, data = AtomicWord(True), AtomicWord("X")
    assert run(rdcss(ctl, False, data, "X", "Y")) is False
    assert data.load() == "X"


def test_rdcss_data_mismatch():
    ctl, data = AtomicWord(False), AtomicWord("W")
    assert run(rdcss(ctl, False, data, "X", "Y")) is False
    assert data.load() == "W"


def test_rdcss_rejects_aliased_cells():
    cell = AtomicWord(0)
    with pytest.raises(ValueError):
        run(rdcss(cell, 0, cell, 0, 1))


def test_descriptor_cannot_be_stored_by_cas():
    from distlist.atomics import _Descriptor

    cell = AtomicWord(0)
    d = _Descriptor(AtomicWord(0), 0, cell, 0, 1, None)
    with pytest.raises(TypeError):
        cell.cas(0, d)


def _reader(cell, seen):
    for _ in range(3):
        seen.append(cell.load())
        yield


@pytest.mark.parametrize("racer", ["data", "control"])
def test_rdcss_racing_plain_cas_is_linearizable(racer):
    """Every interleaving ends in the state of one of the two sequential orders."""
    observed = set()

    def setup():
        ctl, data = AtomicWord(False), AtomicWord("X")
        seen = []
        if racer == "data":
            other = _cas_prog(data, "X", "Z")
        else:
            other = _cas_prog(ctl, False, True)
        gens = [rdcss(ctl, False, data, "X", "Y"), other, _reader(data, seen)]
        return gens, (ctl, data, seen)

    def check(ctx, results):
        ctl, data, seen = ctx
        r_ok, c_ok = results[0], results[1]
        if racer == "data":
            # rdcss first: (True, False, Y); cas first: (False, True, Z)
            assert (r_ok, c_ok, data.load()) in {(True, False, "Y"), (False, True, "Z")}
            allowed = {"X", "Y", "Z"}
        else:
            # rdcss first: (True, True, Y); flip first: (False, True, X)
            assert c_ok
            assert (r_ok, data.load()) in {(True, "Y"), (False, "X")}
            allowed = {"X", "Y"}
        assert set(seen) <= allowed, "a descriptor leaked through load()"
        observed.add((r_ok, c_ok))

    runs = explore(setup, check)
    assert runs > 10
    assert len(observed) == 2  # both sequential orders are reachable


def test_counter_basics():
    c = SharedCounter()
    assert c.increment() == 1 and c.get() == 1
    n = SharedCounter(NEG_INF)
    assert n.increment() == NEG_INF + 1 < 0
    s = SharedCounter(7)
    assert s.cas(7, NEG_INF) and s.get() == NEG_INF
    assert not s.cas(7, 0)


def test_neg_inf_headroom():
    assert NEG_INF == -(2**62)
    assert NEG_INF + 2**61 < 0


def _inc_prog(counter):
    yield
    return counter.increment()


def test_three_concurrent_increments():
    def setup():
        c = SharedCounter()
        return [_inc_prog(c) for _ in range(3)], c

    orders = set()

    def check(c, results):
        assert sorted(results) == [1, 2, 3]
        assert c.get() == 3
        orders.add(tuple(results))

    explore(setup, check)
    assert len(orders) == len(list(itertools.permutations(range(3))))
