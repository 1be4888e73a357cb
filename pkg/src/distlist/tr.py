"""Temporary Replication: Move never aborts.

Updates that land on nodes already copied to the target are applied
locally, answered, and then shipped as Replicate messages. The target
replays them by (sid, ts) identity and timestamp order, which rebuilds
the source structure regardless of arrival order. The source's endCount
only advances when the replay is acknowledged, so the sealing CAS
succeeds exactly when the copy has caught up.
"""

from __future__ import annotations

from dataclasses import replace

from .atomics import NEG_INF
from .core import SUBHEAD, SUBTAIL, Item, ItemRef, Node, NodeStatus, UnknownRef
from .messages import (
    DeleteReplay,
    InsertReplay,
    Move,
    ReplicateDelete,
    ReplicateInsertAfter,
    Response,
)
from .server import RegistryEntry, Server
from .sim import Call, Sleep


class TRServer(Server):
    protocol = "tr"

    def __init__(self, sid: int, cluster) -> None:
        super().__init__(sid, cluster)
        self.active_session = ""

    # source side: updates

    def complete_insert(self, prev_ref, new_ref, used: NodeStatus, client) -> None:
        if not used.moved_away(self.sid):
            self.finish_update(self.node(prev_ref))
            return
        prev = self.node(prev_ref)
        prev_item = Item(prev.key, prev.ts, prev.sid, used.deleted)
        item = self.snapshot(new_ref)
        if not prev_item.ts < item.ts:
            self.stats["ts_order_violations"] += 1
        self.cluster.replicate_sent(client)
        self.stats["replicates"] += 1
        hint = used.new_location
        self.sim.send(
            self.sid,
            hint.sid,
            ReplicateInsertAfter(self.active_session, prev_item, item, hint, new_ref, client),
        )

    def complete_delete(self, ref, pre: NodeStatus, client) -> None:
        if not pre.moved_away(self.sid):
            self.finish_update(self.node(ref))
            return
        self.cluster.replicate_sent(client)
        self.stats["replicates"] += 1
        hint = pre.new_location
        item = self.snapshot(ref)
        self.sim.send(
            self.sid, hint.sid, ReplicateDelete(self.active_session, item, hint, ref, False, client)
        )

    def on_InsertReplay(self, env):
        b: InsertReplay = env.body
        if not self.arena.contains(b.local_ref):
            self.stats["late_replays"] += 1
            return
        self.set_new_location(b.local_ref, b.remote_ref)
        self.finish_update(self.node(b.local_ref))
        self.stats["replays_acked"] += 1
        if False:
            yield

    def on_DeleteReplay(self, env):
        b: DeleteReplay = env.body
        if b.compensation:
            self.pending_compensations.discard(b.local_ref)
            self.stats["compensations_acked"] += 1
            return
        if not self.arena.contains(b.local_ref):
            self.stats["late_replays"] += 1
            return
        self.finish_update(self.node(b.local_ref))
        self.stats["replays_acked"] += 1
        if False:
            yield

    # source side: Move

    def move(self, entry: RegistryEntry, target: int):
        session = self.new_session_id()
        self.active_session = session
        self.stats["move_attempts"] += 1
        self.sim.event("move_attempt", self.sid, (session, 1))
        remote_sh: ItemRef | None = None
        prev_remote: ItemRef | None = None
        ref = entry.subhead
        while True:
            n = self.node(ref)
            st = n.status.load()
            if not n.is_sentinel and st.moved_away(self.sid):
                # inserted behind an already copied node; its replica arrives by replay
                self.stats["move_skipped"] += 1
            else:
                item = self.snapshot(ref, st)
                if item.key is SUBHEAD:
                    item = replace(item, key_range=entry.key_range)
                resp = yield Call(target, Move(session, prev_remote, (item,)), fifo=session)
                if not resp.ok:
                    raise RuntimeError(f"move rejected: {resp}")
                remote = resp.value[0]
                before = self.set_new_location(ref, remote)
                if before.deleted != item.deleted:
                    # deleted between snapshot and forwarding: that delete did not replicate
                    self.pending_compensations.add(ref)
                    self.stats["compensations"] += 1
                    self.sim.send(
                        self.sid,
                        target,
                        ReplicateDelete(session, self.snapshot(ref), remote, ref, True, None),
                    )
                if remote_sh is None:
                    remote_sh = remote
                prev_remote = remote
            if n.key is SUBTAIL:
                break
            ref = n.next.load()
            yield
        while True:
            if not self.pending_compensations:
                counter_temp = entry.counters.end.get() + entry.offset
                if entry.counters.start.cas(counter_temp, NEG_INF):
                    self.cluster.move_sealed(self, entry, target, remote_sh, session)
                    return remote_sh, session
            self.stats["seal_waits"] += 1
            yield Sleep(1)

    # target side

    def on_Move(self, env):
        b: Move = env.body
        out = []
        prev_remote = b.prev_remote
        for item in b.items:
            if item.key is SUBHEAD:
                ref = self.start_session(b.session, item)
            else:
                session = self.session_for(b.session)
                if item.key is SUBTAIL:
                    self.node(session.subtail).next.swap_in(item.next)
                    ref = session.subtail
                else:
                    ref, node = self.copy_node(session, item)
                    yield from self._splice(prev_remote, node, ref, self.node(prev_remote).ts)
            out.append(ref)
            prev_remote = ref
        self.stats["move_received"] += len(b.items)
        self.sim.reply(self.sid, env, Response("ok", tuple(out)))

    def _splice(self, start: ItemRef, node: Node, ref: ItemRef, bound: int):
        """Link ``node`` after the run of nodes with ts >= ``bound`` following ``start``."""
        while True:
            p_ref = start
            while True:
                p = self.node(p_ref)
                c_ref = p.next.load()
                c = self.node(c_ref)
                if c.key is SUBTAIL or c.ts < bound:
                    break
                p_ref = c_ref
                yield
            node.next.swap_in(c_ref)
            if p.next.cas(c_ref, ref):
                return
            self.stats["splice_retries"] += 1
            yield

    def find_replica(self, item: Item, hint: ItemRef):
        """Locate the local copy of ``item`` by (sid, ts), rescanning until it appears."""
        if item.key is SUBHEAD:
            return hint
        while True:
            ref = hint
            while True:
                n = self.node(ref)
                if n.ts == item.ts and n.sid == item.sid and not n.is_sentinel:
                    return ref
                if n.key is SUBTAIL:
                    break
                ref = n.next.load()
                yield
            self.stats["replay_rescans"] += 1
            yield Sleep(1)

    def on_ReplicateInsertAfter(self, env):
        b: ReplicateInsertAfter = env.body
        self.clock.join(b.item.ts)
        prev_ref = yield from self.find_replica(b.prev_item, b.hint)
        counters = self.node(prev_ref).status.load().counters
        node = Node(b.item.key, None, NodeStatus(b.item.deleted, None, counters), b.item.ts, b.item.sid)
        ref = self.arena.alloc(node)
        session = self.sessions.get(b.session)
        if session is not None:
            session.nodes.append(ref)
        yield from self._splice(prev_ref, node, ref, b.item.ts)
        self.stats["replayed_inserts"] += 1
        self.sim.send(self.sid, env.src, InsertReplay(b.local_ref, ref))

    def on_ReplicateDelete(self, env):
        b: ReplicateDelete = env.body
        self.clock.join(b.item.ts)
        ref = yield from self.find_replica(b.item, b.hint)
        node = self.node(ref)
        while True:
            st = node.status.load()
            if st.deleted or node.status.cas(st, st._replace(deleted=True)):
                break
        self.stats["replayed_deletes"] += 1
        self.sim.send(self.sid, env.src, DeleteReplay(b.local_ref, b.compensation))
