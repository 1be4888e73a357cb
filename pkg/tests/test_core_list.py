import pytest

from distlist.atomics import run
from distlist.core import (
    DUMMY,
    HEAD,
    SUBHEAD,
    SUBTAIL,
    TAIL,
    Arena,
    ItemRef,
    LockFreeList,
    LogicalClock,
    Node,
    NodeNotFound,
    NodeStatus,
    SentinelTarget,
    UnknownRef,
    insert_after_steps,
)
from distlist.interleave import explore


def _by_key(lst, key):
    (ref,) = lst.lookup(key)
    return ref


def test_sentinels_are_not_application_keys():
    keys = {HEAD, TAIL, SUBHEAD, SUBTAIL, DUMMY}
    assert len(keys) == 5
    assert all(k != v for k in keys for v in (0, "Head", None))


def test_fresh_list_head_reaches_tail():
    lst = LockFreeList()
    assert lst.arena.get(lst.head()).next.load() == lst.tail()
    assert lst.head() == lst.head()
    assert lst.keys() == []


def test_insert_after_middle():
    lst = LockFreeList.from_keys([1, 5, 2])
    lst.insert_after(_by_key(lst, 5), 4)
    assert lst.keys() == [1, 5, 4, 2]


def test_insert_after_deleted_prev_fails():
    lst = LockFreeList.from_keys([1, 5, 2])
    r5 = _by_key(lst, 5)
    assert lst.delete(r5)
    with pytest.raises(NodeNotFound):
        lst.insert_after(r5, 4)


def test_insert_after_tail_is_rejected():
    lst = LockFreeList()
    with pytest.raises(SentinelTarget):
        lst.insert_after(lst.tail(), 1)


def test_sentinel_key_is_rejected():
    lst = LockFreeList()
    with pytest.raises(ValueError):
        lst.insert_after(lst.head(), SUBHEAD)


def test_delete_once():
    lst = LockFreeList.from_keys([1, 2])
    r = _by_key(lst, 1)
    assert lst.delete(r) is True
    assert lst.delete(r) is False
    assert lst.keys() == [2]


@pytest.mark.parametrize("which", ["head", "tail"])
def test_delete_sentinel(which):
    lst = LockFreeList()
    with pytest.raises(SentinelTarget):
        lst.delete(getattr(lst, which)())


def test_lookup_examples():
    lst = LockFreeList.from_keys([1, 5, 2])
    assert lst.lookup(5) == [_by_key(lst, 5)]
    assert lst.lookup(9) == []


def test_lookup_returns_every_duplicate():
    lst = LockFreeList.from_keys([3, 1, 3])
    assert len(lst.lookup(3)) == 2


def test_next_examples():
    lst = LockFreeList.from_keys([5, 2, 7, 9])
    assert lst.next(_by_key(lst, 2)) == _by_key(lst, 7)
    assert lst.next(_by_key(lst, 9)) == lst.tail()
    with pytest.raises(SentinelTarget):
        lst.next(lst.tail())


def test_next_skips_tombstones():
    lst = LockFreeList.from_keys(["A", "B", "C"])
    lst.delete(_by_key(lst, "B"))
    assert lst.next(_by_key(lst, "A")) == _by_key(lst, "C")


def test_get_item_and_stale_generation():
    lst = LockFreeList.from_keys([1])
    r = _by_key(lst, 1)
    ref, item = lst.get_item(r)
    assert ref == r and item.key == 1 and not item.deleted
    lst.delete(r)
    lst.delink_pass()
    lst.reclaim()
    with pytest.raises(UnknownRef):
        lst.get_item(r)
    assert lst.arena.stale_hits == 1


def test_arena_generation_changes_on_reuse():
    arena = Arena(0)
    r1 = arena.alloc(Node(1, None, NodeStatus(), 1, 0))
    arena.free(r1)
    r2 = arena.alloc(Node(2, None, NodeStatus(), 2, 0))
    assert r2.slot == r1.slot and r2.gen == r1.gen + 1 and r2 != r1
    assert not arena.contains(r1)
    with pytest.raises(UnknownRef):
        arena.get(ItemRef(1, r2.slot, r2.gen))


def test_item_ref_equality_ignores_lease():
    r = ItemRef(0, 3, 1)
    assert r.with_lease(50) == r and hash(r.with_lease(50)) == hash(r)
    assert r.with_lease(50).bare().lease_deadline is None


def test_timestamps():
    lst = LockFreeList.from_keys([1, 2, 3])
    ts = [lst.arena.get(r).ts for r in lst.refs()]
    assert all(t >= 1 for t in ts) and len(set(ts)) == 3
    assert lst.arena.get(lst.head()).ts == 0 and lst.arena.get(lst.tail()).ts == 0
    clock = LogicalClock()
    clock.join(10)
    assert clock.tick() == 11


def test_delink_pass_example():
    lst = LockFreeList.from_keys(["A", "B", "C"])
    lst.delete(_by_key(lst, "B"))
    assert lst.delink_pass() == 1
    assert len(lst.refs(include_deleted=True)) == 2
    assert lst.keys() == ["A", "C"]


# exhaustive interleavings


@pytest.mark.parametrize("k, bound", [(2, None), (3, 4)])
def test_concurrent_inserts_at_same_prev(k, bound):
    """All succeed; local order is the reverse of RDCSS success order.

    k=2 is fully exhaustive; k=3 covers every schedule with at most four
    preemptions (retries make the unbounded space explode).
    """

    def setup():
        lst = LockFreeList.from_keys(["P", "Q"])
        prev = _by_key(lst, "P")
        commits = []
        gens = [
            insert_after_steps(lst.arena, lst.clock, prev, f"n{i}", on_commit=lambda ref, node: commits.append(ref))
            for i in range(k)
        ]
        return gens, (lst, commits)

    def check(ctx, results):
        lst, commits = ctx
        refs = [r for r, _ in results]
        assert sorted(commits, key=str) == sorted(refs, key=str)
        order = lst.refs()
        assert order[0] == _by_key(lst, "P") and order[-1] == _by_key(lst, "Q")
        assert order[1:-1] == list(reversed(commits))

    assert explore(setup, check, preemptions=bound) > k


def _delete_prog(lst, ref):
    ok = yield from lst.delete_steps(ref)
    return ok


def test_two_concurrent_deletes_one_success():
    def setup():
        lst = LockFreeList.from_keys([1, 2])
        r = _by_key(lst, 1)
        return [_delete_prog(lst, r), _delete_prog(lst, r)], lst

    def check(lst, results):
        assert sorted(results) == [False, True]
        assert lst.keys() == [2]

    explore(setup, check)


def _insert_prog(lst, prev, key):
    try:
        ref = yield from lst.insert_after_steps(prev, key)
    except NodeNotFound:
        return None
    return ref


def test_insert_racing_delete_of_prev():
    """Either the insert lands before the delete, or it fails; never lost silently."""

    def setup():
        lst = LockFreeList.from_keys(["A", "B"])
        a = _by_key(lst, "A")
        return [_insert_prog(lst, a, "X"), _delete_prog(lst, a)], lst

    seen = set()

    def check(lst, results):
        new_ref, deleted = results
        assert deleted is True
        if new_ref is None:
            assert lst.keys() == ["B"]
        else:
            assert lst.keys() == ["X", "B"]
        seen.add(new_ref is None)

    explore(setup, check)
    assert seen == {True, False}


def test_delete_concurrent_with_delink_is_gone_after_second_pass():
    survived = []

    def setup():
        lst = LockFreeList.from_keys(["A", "B", "C", "D"])
        b, c = _by_key(lst, "B"), _by_key(lst, "C")
        run(lst.delete_steps(b))
        return [lst.delink_steps(), _delete_prog(lst, c)], lst

    def check(lst, results):
        assert results[1] is True
        leftover = len(lst.refs(include_deleted=True)) - len(lst.refs())
        survived.append(leftover)
        lst.delink_pass()
        assert len(lst.refs(include_deleted=True)) == len(lst.refs()) == 2
        assert lst.keys() == ["A", "D"]

    explore(setup, check)
    assert 0 in survived and max(survived) >= 1  # both outcomes of the first pass occur


def test_delink_keeps_parked_traversers_on_track():
    """A Next parked on an unlinked node still reaches a live successor."""

    def setup():
        lst = LockFreeList.from_keys(["A", "B", "C"])
        b = _by_key(lst, "B")
        run(lst.delete_steps(b))
        return [lst.next_steps(b), lst.delink_steps()], lst

    def check(lst, results):
        nxt = results[0]
        assert lst.arena.get(nxt).key == "C"

    explore(setup, check)
