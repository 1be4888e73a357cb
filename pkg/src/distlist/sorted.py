"""Distributed sorted list: unique keys routed by per-sublist key ranges.

Each Registry entry owns the half-open range ``(key_min, key_max]``
(``None`` stands for an open end). A client broadcasts its request; the
server whose first covering entry matches runs the operation inside that
sublist only. Both copies of a sublist may answer while a Switch is in
its lease wait, so executions are deduplicated by operation id.
"""

from __future__ import annotations

from typing import Any

from .atomics import rdcss
from .core import DUMMY, SUBHEAD, SUBTAIL, ItemRef, Node, NodeNotFound, NodeStatus, delete_steps
from .messages import ClientInfo, ClientSortedOp, DelegateSortedOp
from .sim import Sleep


REROUTE = object()


def in_range(key: Any, key_range: tuple[Any, Any] | None) -> bool:
    if key_range is None:
        return True
    lo, hi = key_range
    return (lo is None or key > lo) and (hi is None or key <= hi)


class SortedOps:
    """Mixin for :class:`~distlist.server.Server` implementing the sorted variant."""

    def route(self, key):
        """First active Registry entry covering ``key`` (else a retired one) and entries scanned."""
        fallback = None
        for i, entry in enumerate(self.registry.values(), 1):
            if in_range(key, entry.key_range):
                if not entry.retired:
                    return entry, i
                # a retired copy only forwards; prefer a live owner if one exists
                fallback = fallback or (entry, i)
        return fallback or (None, len(self.registry))

    def on_ClientSortedOp(self, env):
        b: ClientSortedOp = env.body
        client = ClientInfo(env.src, env.mid)
        entry, scanned = self.route(b.key)
        if entry is None:
            self.respond(client, "not_owner", None, scanned)
            return
        yield from self.sorted_dispatch(entry.subhead, b.op, b.key, b.op_id, client, scanned)

    def on_DelegateSortedOp(self, env):
        b: DelegateSortedOp = env.body
        self.stats["delegated_in"] += 1
        yield from self.sorted_dispatch(b.subhead, b.op, b.key, b.op_id, b.client, 0)

    def sorted_dispatch(self, sh_ref: ItemRef, op: str, key, op_id: str, client: ClientInfo, scanned: int):
        if op not in ("insert", "search", "delete"):
            self.respond(client, "protocol_error", op)
            return
        cache = self.sorted_results
        while op_id in cache:
            state = cache[op_id]
            if state[0] == "done":
                self.respond(client, *state[1])
                return
            yield Sleep(1)
        cache[op_id] = ("running",)

        def finish(status: str, value: Any = None, visits: int = 0) -> None:
            cache[op_id] = ("done", (status, value, visits))
            self.respond(client, status, value, visits)

        while True:
            fwd = yield from getattr(self, "sorted_" + op)(sh_ref, key, scanned, finish, client)
            if fwd is not REROUTE:
                break
            # a Split shrank this sublist's range while we were traversing it
            self.stats["sorted_reroutes"] += 1
            entry, more = self.route(key)
            if entry is None or entry.retired:
                # a retired range may be stale (split after it moved); the live owner answers its own copy
                del cache[op_id]
                self.respond(client, "not_owner", None, scanned)
                return
            # cost is measured for the routing pass that found the owner; reroutes are counted apart
            sh_ref, scanned = entry.subhead, more
        if fwd is not None:
            # only completed results are cached, so a forward chain cannot loop back on itself
            del cache[op_id]
            self._delegate_sorted(fwd, op, key, op_id, client)

    def _delegate_sorted(self, fwd: ItemRef, op, key, op_id, client) -> None:
        self.stats["delegated_updates"] += 1
        self.delegate(fwd, DelegateSortedOp(fwd, op, key, op_id, client))

    def _sorted_find(self, sh_ref: ItemRef, key):
        """Last live node with key < ``key`` (or a SubHead), its raw successor, duplicate flag."""
        prev_ref = sh_ref
        prev = self.node(sh_ref)
        while True:
            raw = prev.next.load()
            c_ref = raw
            yield
            while True:
                c = self.node(c_ref)
                if c.key is SUBHEAD:
                    # a split in progress: only keys above the split key belong behind the new SubHead
                    if c.key_range is not None and c.key_range[0] is not None and not key > c.key_range[0]:
                        return prev_ref, raw, False
                    prev_ref, prev = c_ref, c
                    raw = c_ref = c.next.load()
                    continue
                if c.key is DUMMY or (not c.is_sentinel and c.status.load().deleted):
                    c_ref = c.next.load()
                    continue
                break
            if c.key is SUBTAIL or c.key > key:
                return prev_ref, raw, False
            if c.key == key:
                return prev_ref, raw, True
            prev_ref, prev = c_ref, c

    def sorted_insert(self, sh_ref: ItemRef, key, scanned: int, finish, client):
        sh = self.node(sh_ref)
        while True:
            sh_st = sh.status.load()
            if sh_st.counters.start.get() < 0:
                return sh_st.new_location
            prev_ref, expected, dup = yield from self._sorted_find(sh_ref, key)
            if not in_range(key, sh.key_range):
                return REROUTE
            if dup:
                finish("duplicate")
                return None
            prev = self.node(prev_ref)
            st = self.gate(prev)
            if st is None:
                return sh.status.load().new_location
            if st.deleted:
                self.finish_failed(prev)
                continue
            yield
            node = Node(key, expected, NodeStatus(False, st.new_location, st.counters), self.clock.tick(), self.sid)
            ref = self.arena.alloc(node)
            logger = self._insert_logger(prev_ref, prev)
            commit = None if logger is None else (lambda: logger(ref, node))
            ok = yield from rdcss(prev.status, st, prev.next, expected, ref, commit)
            if ok:
                self.stats["inserts"] += 1
                finish("ok", self.issue(ref))
                self.complete_insert(prev_ref, ref, st, client)
                return None
            self.arena.free(ref)
            self.finish_failed(prev)
            self.stats["sorted_retries"] += 1

    def _sorted_scan(self, sh_ref: ItemRef, key):
        """Live refs with ``key`` in one local sublist, or None if it has retired."""
        sh = self.node(sh_ref)
        if sh.status.load().counters.start.get() < 0:
            return None, 0
        out: list[ItemRef] = []
        visits = 0
        curr_ref = sh.next.load()
        while True:
            yield
            c = self.node(curr_ref)
            if c.key is SUBTAIL:
                if sh.status.load().counters.start.get() < 0:
                    return None, visits
                return out, visits
            if not c.is_sentinel:
                visits += 1
                if c.key == key and not c.status.load().deleted:
                    out.append(curr_ref)
            curr_ref = c.next.load()

    def sorted_search(self, sh_ref: ItemRef, key, scanned: int, finish, client):
        length_before = len(self.sublist_refs(sh_ref))  # instrumentation only, not counted as visits
        refs, visits = yield from self._sorted_scan(sh_ref, key)
        if refs is None:
            return self.node(sh_ref).status.load().new_location
        if not refs and not in_range(key, self.node(sh_ref).key_range):
            return REROUTE
        self.cluster.note_search(self, sh_ref, scanned + visits, length_before)
        if refs:
            finish("ok", self.issue(refs[0]), scanned + visits)
        else:
            finish("not_found", None, scanned + visits)
        return None

    def sorted_delete(self, sh_ref: ItemRef, key, scanned: int, finish, client):
        sh = self.node(sh_ref)
        refs, _ = yield from self._sorted_scan(sh_ref, key)
        if refs is None:
            return sh.status.load().new_location
        if not refs and not in_range(key, sh.key_range):
            return REROUTE
        if not refs:
            finish("not_found")
            return None
        ref = refs[0]
        node = self.node(ref)
        st = self.gate(node)
        if st is None:
            return sh.status.load().new_location
        yield
        try:
            pre = yield from delete_steps(self.arena, ref)
        except NodeNotFound:
            finish("not_found")
            self.finish_failed(node)
            return None
        self.cluster.log_commit(("delete", (node.sid, node.ts)))
        self.stats["deletes"] += 1
        finish("ok", True)
        self.complete_delete(ref, pre, client)
        return None
