"""Lock-free unordered list: node storage and the base algorithms.

Nodes live in a per-server slab :class:`Arena` and are addressed by
:class:`ItemRef` (server, slot, generation). A node keeps its mutable
state in two atomic words: ``next`` and ``status``. The status word
bundles the tombstone flag with the forwarding reference and the counter
handles so that one RDCSS control comparison covers all of them.
"""

from __future__ import annotations

import dataclasses
import enum
import threading
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterator, NamedTuple

from .atomics import AtomicWord, SharedCounter, Steps, rdcss, run


class Sentinel(enum.Enum):
    HEAD = "Head"
    TAIL = "Tail"
    SUBHEAD = "SubHead"
    SUBTAIL = "SubTail"
    DUMMY = "DummyNode"

    def __repr__(self) -> str:
        return self.value


HEAD, TAIL, SUBHEAD, SUBTAIL, DUMMY = Sentinel

Key = Hashable


class ListError(Exception):
    """Base class for list operation failures."""


class NodeNotFound(ListError):
    """The referenced node is logically deleted."""


class SentinelTarget(ListError):
    """The operation is not allowed on a sentinel node."""


class UnknownRef(ListError):
    """The reference points at a reclaimed (or never allocated) slot."""


class Busy(ListError):
    """A transformation operation is active on the sublist or server."""


@dataclass(frozen=True)
class ItemRef:
    """Globally unique node locator.

    Equality and hashing use only (sid, slot, gen); the lease deadline and
    the origin identity travel along as metadata.
    """

    sid: int
    slot: int
    gen: int
    lease_deadline: int | None = field(default=None, compare=False)
    ident: tuple[int, int] | None = field(default=None, compare=False)

    def with_lease(self, deadline: int | None) -> "ItemRef":
        return dataclasses.replace(self, lease_deadline=deadline)

    def bare(self) -> "ItemRef":
        return ItemRef(self.sid, self.slot, self.gen)

    def __repr__(self) -> str:
        return f"Ref({self.sid}:{self.slot}.{self.gen})"


class Counters(NamedTuple):
    start: SharedCounter
    end: SharedCounter


class NodeStatus(NamedTuple):
    deleted: bool = False
    new_location: ItemRef | None = None
    counters: Counters | None = None

    def moved_away(self, sid: int) -> bool:
        return self.new_location is not None and self.new_location.sid != sid


@dataclass(frozen=True)
class Item:
    """Snapshot of a node, as handed to clients or shipped between servers."""

    key: Any
    ts: int
    sid: int
    deleted: bool
    next: ItemRef | None = None
    new_location: ItemRef | None = None
    key_range: tuple[Any, Any] | None = None

    @property
    def ident(self) -> tuple[int, int]:
        return (self.sid, self.ts)


class Node:
    __slots__ = ("key", "next", "status", "ts", "sid", "key_range")

    def __init__(self, key, next_ref, status: NodeStatus, ts: int, sid: int) -> None:
        self.key = key
        self.next = AtomicWord(next_ref)
        self.status = AtomicWord(status)
        self.ts = ts
        self.sid = sid
        self.key_range = None

    @property
    def is_sentinel(self) -> bool:
        return isinstance(self.key, Sentinel)

    def snapshot(self) -> Item:
        st = self.status.load()
        return Item(
            self.key, self.ts, self.sid, st.deleted, self.next.load(), st.new_location, self.key_range
        )

    def __repr__(self) -> str:
        st = self.status.load()
        flag = "x" if st.deleted else ""
        return f"<{self.key!r}{flag} ts={self.ts}>"


class Arena:
    """Slab of node slots for one server with generation-checked refs."""

    def __init__(self, sid: int) -> None:
        self.sid = sid
        self._nodes: list[Node | None] = []
        self._gens: list[int] = []
        self._free: list[int] = []
        self._lock = threading.Lock()
        self.stale_hits = 0

    def alloc(self, node: Node) -> ItemRef:
        with self._lock:
            if self._free:
                slot = self._free.pop()
            else:
                slot = len(self._nodes)
                self._nodes.append(None)
                self._gens.append(0)
            self._nodes[slot] = node
            return ItemRef(self.sid, slot, self._gens[slot])

    def free(self, ref: ItemRef) -> None:
        with self._lock:
            if self._gens[ref.slot] != ref.gen or self._nodes[ref.slot] is None:
                raise UnknownRef(ref)
            self._nodes[ref.slot] = None
            self._gens[ref.slot] += 1
            # LIFO reuse makes stale refs collide with fresh nodes quickly
            self._free.append(ref.slot)

    def get(self, ref: ItemRef) -> Node:
        if ref.sid != self.sid:
            raise UnknownRef(f"{ref!r} is not on server {self.sid}")
        try:
            node = self._nodes[ref.slot]
            gen = self._gens[ref.slot]
        except IndexError:
            raise UnknownRef(ref) from None
        if node is None or gen != ref.gen:
            self.stale_hits += 1
            raise UnknownRef(ref)
        return node

    def contains(self, ref: ItemRef) -> bool:
        return (
            ref.sid == self.sid
            and ref.slot < len(self._nodes)
            and self._nodes[ref.slot] is not None
            and self._gens[ref.slot] == ref.gen
        )

    def live_refs(self) -> Iterator[ItemRef]:
        for slot, node in enumerate(self._nodes):
            if node is not None:
                yield ItemRef(self.sid, slot, self._gens[slot])

    def __len__(self) -> int:
        return sum(1 for n in self._nodes if n is not None)


class LogicalClock:
    """Per-server insertion timestamps; sentinels keep ts 0."""

    def __init__(self) -> None:
        self._counter = SharedCounter(0)

    def tick(self) -> int:
        return self._counter.increment()

    def join(self, ts: int) -> None:
        while True:
            cur = self._counter.get()
            if cur >= ts or self._counter.cas(cur, ts):
                return

    @property
    def value(self) -> int:
        return self._counter.get()


def check_insert_target(node: Node) -> None:
    if node.key in (TAIL, SUBTAIL, DUMMY):
        raise SentinelTarget(f"cannot insert after {node.key!r}")


def insert_after_steps(
    arena: Arena,
    clock: LogicalClock,
    prev_ref: ItemRef,
    key: Key,
    on_commit=None,
) -> Steps:
    """InsertAfter as a step generator.

    Returns ``(new_ref, status)`` where ``status`` is the prev status the
    successful RDCSS was gated on. Raises :class:`NodeNotFound` when prev
    is observed deleted.
    """
    prev = arena.get(prev_ref)
    check_insert_target(prev)
    while True:
        st = prev.status.load()
        yield
        if st.deleted:
            raise NodeNotFound(prev_ref)
        temp = prev.next.load()
        yield
        node = Node(key, temp, NodeStatus(False, st.new_location, st.counters), clock.tick(), arena.sid)
        new_ref = arena.alloc(node)
        commit = None if on_commit is None else (lambda r=new_ref, n=node: on_commit(r, n))
        ok = yield from rdcss(prev.status, st, prev.next, temp, new_ref, commit)
        if ok:
            return new_ref, st
        arena.free(new_ref)


def delete_steps(arena: Arena, ref: ItemRef) -> Steps:
    """Delete as a step generator; returns the pre-CAS status on success."""
    node = arena.get(ref)
    if node.is_sentinel:
        raise SentinelTarget(f"cannot delete {node.key!r}")
    while True:
        st = node.status.load()
        yield
        if st.deleted:
            raise NodeNotFound(ref)
        if node.status.cas(st, st._replace(deleted=True)):
            return st


def next_steps(arena: Arena, prev_ref: ItemRef) -> Steps:
    """First undeleted successor of prev (Tail at the end)."""
    curr = arena.get(prev_ref)
    if curr.key is TAIL:
        raise SentinelTarget("Tail has no successor")
    while True:
        curr_ref = curr.next.load()
        yield
        curr = arena.get(curr_ref)
        if curr.key is TAIL or not curr.status.load().deleted:
            return curr_ref


def lookup_steps(arena: Arena, head_ref: ItemRef, key: Key) -> Steps:
    result: list[ItemRef] = []
    curr_ref = arena.get(head_ref).next.load()
    while True:
        yield
        curr = arena.get(curr_ref)
        if curr.key in (TAIL, SUBTAIL):
            return result
        if curr.key == key and not curr.status.load().deleted:
            if curr_ref not in result:
                result.append(curr_ref)
        curr_ref = curr.next.load()


def delink_steps(arena: Arena, head_ref: ItemRef, on_unlink=None) -> Steps:
    """One delinking pass over a single sublist (or the whole base list)."""
    count = 0
    prev_ref = head_ref
    prev = arena.get(prev_ref)
    curr_ref = prev.next.load()
    while True:
        yield
        curr = arena.get(curr_ref)
        if curr.key in (TAIL, SUBTAIL):
            return count
        if curr.status.load().deleted:
            after = curr.next.load()
            if prev.next.cas(curr_ref, after):
                # traversers parked on curr rejoin through prev's successor
                curr.next.swap_in(prev.next.load())
                count += 1
                if on_unlink is not None:
                    on_unlink(curr_ref)
            curr_ref = prev.next.load()
        else:
            prev_ref, prev = curr_ref, curr
            curr_ref = curr.next.load()


class LockFreeList:
    """Shared-memory list with immutable Head/Tail endpoints.

    The ``*_steps`` methods return generators for interleaving under a
    scheduler; the plain methods run them to completion.
    """

    def __init__(self, sid: int = 0) -> None:
        self.arena = Arena(sid)
        self.clock = LogicalClock()
        self._tail = self.arena.alloc(Node(TAIL, None, NodeStatus(), 0, sid))
        self._head = self.arena.alloc(Node(HEAD, self._tail, NodeStatus(), 0, sid))
        self.quarantine: list[ItemRef] = []

    def head(self) -> ItemRef:
        return self._head

    def tail(self) -> ItemRef:
        return self._tail

    def get_item(self, ref: ItemRef) -> tuple[ItemRef, Item]:
        return ref, self.arena.get(ref).snapshot()

    def insert_after_steps(self, prev: ItemRef, key: Key) -> Steps:
        if isinstance(key, Sentinel):
            raise ValueError("sentinel keys are reserved")
        new_ref, _ = yield from insert_after_steps(self.arena, self.clock, prev, key)
        return new_ref

    def delete_steps(self, ref: ItemRef) -> Steps:
        try:
            yield from delete_steps(self.arena, ref)
        except NodeNotFound:
            return False
        return True

    def next_steps(self, prev: ItemRef) -> Steps:
        return next_steps(self.arena, prev)

    def lookup_steps(self, key: Key) -> Steps:
        return lookup_steps(self.arena, self._head, key)

    def delink_steps(self) -> Steps:
        return delink_steps(self.arena, self._head, self.quarantine.append)

    def insert_after(self, prev: ItemRef, key: Key) -> ItemRef:
        return run(self.insert_after_steps(prev, key))

    def delete(self, ref: ItemRef) -> bool:
        return run(self.delete_steps(ref))

    def next(self, prev: ItemRef) -> ItemRef:
        return run(self.next_steps(prev))

    def lookup(self, key: Key) -> list[ItemRef]:
        return run(self.lookup_steps(key))

    def delink_pass(self) -> int:
        return run(self.delink_steps())

    def reclaim(self) -> int:
        """Free quarantined nodes (caller guarantees the grace period)."""
        n = len(self.quarantine)
        for ref in self.quarantine:
            self.arena.free(ref)
        self.quarantine.clear()
        return n

    def refs(self, include_deleted: bool = False) -> list[ItemRef]:
        out = []
        ref = self.arena.get(self._head).next.load()
        while True:
            node = self.arena.get(ref)
            if node.key is TAIL:
                return out
            if include_deleted or not node.status.load().deleted:
                out.append(ref)
            ref = node.next.load()

    def keys(self) -> list[Key]:
        return [self.arena.get(r).key for r in self.refs()]

    @classmethod
    def from_keys(cls, keys, sid: int = 0) -> "LockFreeList":
        lst = cls(sid)
        prev = lst.head()
        for k in keys:
            prev = lst.insert_after(prev, k)
        return lst
