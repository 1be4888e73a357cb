"""Client stub: broadcast Lookup, routed updates, leases and workloads."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any

from .core import ItemRef, ListError, NodeNotFound, SentinelTarget, UnknownRef
from .messages import (
    ClientDelete,
    ClientGetItem,
    ClientInsertAfter,
    ClientLookup,
    ClientNext,
    ClientSortedOp,
)
from .sim import Call, CallMany, Sleep


class LeaseExpired(ListError):
    """The ref's lease no longer leaves room for a request round trip."""


class DuplicateKey(ListError):
    """Sorted insert of a key that is already present."""


class KeyNotFound(ListError):
    """Sorted search or delete of an absent key."""


_ERRORS = {"unknown_ref": UnknownRef, "sentinel": SentinelTarget, "not_found": NodeNotFound}


@dataclass
class Workload:
    steps: int = 20
    mix: dict[str, float] = field(
        default_factory=lambda: {"insert": 0.4, "delete": 0.2, "lookup": 0.2, "next": 0.2}
    )
    think: tuple[int, int] = (1, 4)
    key_space: int = 1000
    start: int = 0
    sorted: bool = False


class Client:
    def __init__(self, name: str, cluster, seed: int) -> None:
        self.name = name
        self.cluster = cluster
        self.sim = cluster.sim
        self.rng = random.Random(seed)
        self.pool: list[ItemRef] = []
        self.keys: list[Any] = []
        self.stats: dict[str, int] = {}
        self._ops = 0
        self.done = False
        self.last_write_tick = -1

    def on_message(self, env):
        return None  # clients only receive responses

    def _bump(self, name: str) -> None:
        self.stats[name] = self.stats.get(name, 0) + 1

    # canonical forms for the history

    def canon(self, ref: ItemRef | None) -> Any:
        if ref is None:
            return None
        if ref == self.cluster.head_ref:
            return "Head"
        if ref == self.cluster.tail_ref:
            return "Tail"
        return ref.ident

    def check_lease(self, ref: ItemRef) -> None:
        if ref.lease_deadline is not None and self.sim.now >= ref.lease_deadline - self.cluster.request_timeout:
            raise LeaseExpired(ref)

    def _record(self, op: str, args: Any):
        return self.cluster.history.invoke(self.sim.now, self.name, op, args)

    def _done(self, op_id: int, result: Any) -> None:
        self.cluster.history.respond(op_id, self.sim.now, result)

    # API (generators, to be driven by the simulator)

    def insert_after(self, prev: ItemRef, key):
        self.check_lease(prev)
        op = self._record("insert_after", (self.canon(prev), key))
        resp = yield Call(prev.sid, ClientInsertAfter(prev, key))
        if resp.ok:
            self._done(op, ("ok", self.canon(resp.value)))
            return resp.value
        self._done(op, (resp.status,))
        raise _ERRORS.get(resp.status, ListError)(resp.value)

    def delete(self, ref: ItemRef):
        self.check_lease(ref)
        op = self._record("delete", (self.canon(ref),))
        resp = yield Call(ref.sid, ClientDelete(ref))
        if resp.ok or resp.status == "not_found":
            self._done(op, resp.ok)
            return resp.ok
        self._done(op, resp.status)
        raise _ERRORS.get(resp.status, ListError)(resp.value)

    def next(self, prev: ItemRef):
        self.check_lease(prev)
        op = self._record("next", (self.canon(prev),))
        resp = yield Call(prev.sid, ClientNext(prev))
        if resp.ok:
            self._done(op, self.canon(resp.value))
            return resp.value
        self._done(op, resp.status)
        raise _ERRORS.get(resp.status, ListError)(resp.value)

    def get_item(self, ref: ItemRef):
        self.check_lease(ref)
        resp = yield Call(ref.sid, ClientGetItem(ref))
        if resp.ok:
            return resp.value
        raise _ERRORS.get(resp.status, ListError)(resp.value)

    def lookup(self, key):
        op = self._record("lookup", (key,))
        resps = yield CallMany(tuple((s, ClientLookup(key)) for s in self.cluster.server_ids))
        refs: list[ItemRef] = []
        for r in resps:
            if not r.ok:
                self._bump("lookup_errors")
                continue
            for ref in r.value:
                if ref not in refs:
                    refs.append(ref)
        idents = tuple(sorted({self.canon(r) for r in refs}, key=repr))
        self._done(op, idents)
        if len(idents) < len(refs):
            self._bump("lookup_duplicate_refs")
        return refs

    def sorted_op(self, op: str, key):
        self._ops += 1
        op_id = f"{self.name}:{self._ops}"
        hid = self._record("sorted_" + op, (key,))
        while True:
            resps = yield CallMany(
                tuple((s, ClientSortedOp(op, key, op_id)) for s in self.cluster.server_ids)
            )
            owners = [r for r in resps if r.status != "not_owner"]
            if owners:
                break
            self._bump("sorted_unrouted")
            yield Sleep(1)
        first = owners[0]
        views = {(r.status, self.canon(r.value) if isinstance(r.value, ItemRef) else r.value) for r in owners}
        if len(views) > 1:
            # two copies may each serve a search during the lease wait; both answers are valid
            self._bump("sorted_disagreements" if op == "search" else "sorted_update_disagreements")
        result = (first.status, self.canon(first.value) if isinstance(first.value, ItemRef) else first.value)
        self._done(hid, result)
        self.cluster.note_sorted_visits(first.visits)
        return first

    # workload

    def _fresh_pool(self) -> list[ItemRef]:
        keep = []
        for r in self.pool:
            if r.lease_deadline is None or self.sim.now < r.lease_deadline - self.cluster.request_timeout:
                keep.append(r)
            else:
                self._bump("lease_dropped")
        self.pool = keep[-64:]
        return self.pool

    def _remember(self, ref: ItemRef | None, key=None) -> None:
        if ref is None or ref == self.cluster.tail_ref or ref == self.cluster.head_ref:
            return
        if ref not in self.pool:
            self.pool.append(ref)
        if key is not None and key not in self.keys:
            self.keys.append(key)

    def _forget(self, ref: ItemRef) -> None:
        if ref in self.pool:
            self.pool.remove(ref)

    def run(self, wl: Workload):
        if wl.start:
            yield Sleep(wl.start)
        names = sorted(wl.mix)
        weights = [wl.mix[n] for n in names]
        for _ in range(wl.steps):
            op = self.rng.choices(names, weights)[0]
            try:
                if wl.sorted:
                    yield from self._sorted_step(op, wl)
                else:
                    yield from self._step(op, wl)
            except LeaseExpired:
                self._bump("lease_expired")
            except ListError as exc:
                self._bump("error_" + type(exc).__name__)
            lo, hi = wl.think
            yield Sleep(self.rng.randint(lo, hi))
        self.done = True

    def _pick(self) -> ItemRef | None:
        pool = self._fresh_pool()
        return self.rng.choice(pool) if pool else None

    def _step(self, op: str, wl: Workload):
        if op == "insert":
            prev = self._pick()
            if prev is None or self.rng.random() < 0.1:
                prev = self.cluster.head_ref
            key = self.rng.randrange(wl.key_space)
            try:
                ref = yield from self.insert_after(prev, key)
            except NodeNotFound:
                self._forget(prev)
                self._bump("insert_failed")
            else:
                self._remember(ref, key)
            self.last_write_tick = self.sim.now
        elif op == "delete":
            ref = self._pick()
            if ref is None:
                return
            ok = yield from self.delete(ref)
            self._forget(ref)
            self._bump("delete_ok" if ok else "delete_failed")
            self.last_write_tick = self.sim.now
        elif op == "next":
            prev = self._pick() or self.cluster.head_ref
            try:
                ref = yield from self.next(prev)
            except SentinelTarget:
                return
            self._remember(ref)
        elif op == "lookup":
            if self.keys and self.rng.random() < 0.8:
                key = self.rng.choice(self.keys)
            else:
                key = self.rng.randrange(wl.key_space)
            refs = yield from self.lookup(key)
            for r in refs:
                self._remember(r, key)
        else:
            raise ValueError(f"unknown op {op!r}")

    def _sorted_step(self, op: str, wl: Workload):
        if op == "insert":
            key = self.rng.randrange(wl.key_space)
            resp = yield from self.sorted_op("insert", key)
            if resp.ok:
                self.keys.append(key)
            self.last_write_tick = self.sim.now
        elif op == "delete":
            key = self.rng.choice(self.keys) if self.keys and self.rng.random() < 0.7 else self.rng.randrange(wl.key_space)
            resp = yield from self.sorted_op("delete", key)
            if key in self.keys and resp.ok:
                self.keys.remove(key)
            self.last_write_tick = self.sim.now
        else:
            key = self.rng.choice(self.keys) if self.keys and self.rng.random() < 0.7 else self.rng.randrange(wl.key_space)
            yield from self.sorted_op("search", key)
