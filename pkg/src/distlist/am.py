"""Aborting Move: copy a sublist, then seal it with a single counter CAS.

Updates bracket themselves with startCount/endCount increments. Move
records ``counterTemp = endCount + offset`` before copying; if any update
started since, ``cas(startCount, counterTemp, NEG_INF)`` fails, the
target discards its partial copy and the whole Move starts over. Since
startCount only grows, a copy is abandoned as soon as it moves past
counterTemp instead of running to the SubTail first.
"""

from __future__ import annotations

from dataclasses import replace

from .atomics import NEG_INF
from .core import SUBHEAD, SUBTAIL, ItemRef, NodeStatus
from .messages import DeleteMovedSublist, Move, Response
from .server import RegistryEntry, Server
from .sim import Call


class AMServer(Server):
    protocol = "am"

    def complete_insert(self, prev_ref, new_ref, used: NodeStatus, client) -> None:
        self.finish_update(self.node(prev_ref))

    def complete_delete(self, ref, pre: NodeStatus, client) -> None:
        self.finish_update(self.node(ref))

    def move(self, entry: RegistryEntry, target: int):
        """Copy-and-seal loop; returns (remote subhead, session id)."""
        batch_size = max(1, self.cluster.move_batch)
        attempt = 0
        while True:
            attempt += 1
            session = self.new_session_id()
            self.stats["move_attempts"] += 1
            self.sim.event("move_attempt", self.sid, (session, attempt))
            counter_temp = entry.counters.end.get() + entry.offset
            remote_sh: ItemRef | None = None
            prev_remote: ItemRef | None = None
            items, refs = [], []
            ref = entry.subhead
            while True:
                item = self.snapshot(ref)
                if item.key is SUBHEAD:
                    item = replace(item, key_range=entry.key_range)
                items.append(item)
                refs.append(ref)
                last = item.key is SUBTAIL
                if len(items) >= batch_size or last:
                    resp = yield Call(target, Move(session, prev_remote, tuple(items)), fifo=session)
                    if not resp.ok:
                        raise RuntimeError(f"move rejected: {resp}")
                    for local, remote in zip(refs, resp.value):
                        self.set_new_location(local, remote)
                    if remote_sh is None:
                        remote_sh = resp.value[0]
                    prev_remote = resp.value[-1]
                    items, refs = [], []
                    if entry.counters.start.get() != counter_temp:
                        break  # an update started since the snapshot; the seal CAS cannot succeed
                if last:
                    break
                ref = self.node(ref).next.load()
                yield
            if entry.counters.start.cas(counter_temp, NEG_INF):
                self.cluster.move_sealed(self, entry, target, remote_sh, session)
                return remote_sh, session
            self.stats["move_aborts"] += 1
            self.sim.event("move_abort", self.sid, session)
            resp = yield Call(target, DeleteMovedSublist(session, remote_sh))
            self.cluster.move_aborted(self, entry, target, session)

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
                    prev = self.node(prev_remote)
                    # nobody else knows the skeleton yet, so plain linking is safe
                    node.next.swap_in(prev.next.load())
                    prev.next.swap_in(ref)
            out.append(ref)
            prev_remote = ref
        self.stats["move_received"] += len(b.items)
        self.sim.reply(self.sid, env, Response("ok", tuple(out)))
        if False:
            yield
