"""Server-side machinery shared by both migration protocols.

A :class:`Server` owns an arena slice of the global list, a Registry of
the sublists it serves, and the message handlers for client-visible
operations (which never wait on transformation state), Split, Switch,
delinking and reclamation. Protocol subclasses supply the Move itself
and what happens after a local update completes.
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, replace
from typing import Any

from .atomics import NEG_INF, SharedCounter, rdcss
from .core import (
    DUMMY,
    HEAD,
    SUBHEAD,
    SUBTAIL,
    TAIL,
    Arena,
    Busy,
    Counters,
    Item,
    ItemRef,
    ListError,
    LogicalClock,
    Node,
    NodeNotFound,
    NodeStatus,
    Sentinel,
    SentinelTarget,
    UnknownRef,
    check_insert_target,
    delete_steps,
    delink_steps,
    insert_after_steps,
)
from .messages import (
    ClientDelete,
    ClientGetItem,
    ClientInfo,
    ClientInsertAfter,
    ClientLookup,
    ClientNext,
    DelegateDelete,
    DelegateGetItem,
    DelegateInsertAfter,
    DelegateLookup,
    DelegateNext,
    DeleteMovedSublist,
    RepointSubtail,
    Response,
    Switch,
)
from .sim import Call, Envelope, Sleep
from .sorted import SortedOps


@dataclass
class RegistryEntry:
    subhead: ItemRef
    counters: Counters
    offset: int
    prev_subtail: ItemRef
    key_range: tuple[Any, Any] | None = None
    parent: ItemRef | None = None  # sublist this one was split from

    @property
    def retired(self) -> bool:
        return self.counters.start.get() < 0


@dataclass
class MoveSession:
    """Target-side state of an incoming sublist copy."""

    sid: str
    subhead: ItemRef
    subtail: ItemRef
    counters: Counters
    nodes: list[ItemRef]


def new_counters() -> Counters:
    return Counters(SharedCounter(0, "start"), SharedCounter(0, "end"))


def retired(st: NodeStatus) -> bool:
    return st.counters is not None and st.counters.start.get() < 0


class Server(SortedOps):
    protocol = "base"

    def __init__(self, sid: int, cluster) -> None:
        self.sid = sid
        self.cluster = cluster
        self.sim = cluster.sim
        self.arena = Arena(sid)
        self.clock = LogicalClock()
        self.registry: dict[ItemRef, RegistryEntry] = {}
        self.forward: dict[ItemRef, ItemRef] = {}
        self.quarantine: deque[tuple[ItemRef, int]] = deque()
        self.sessions: dict[str, MoveSession] = {}
        self.pending_compensations: set[ItemRef] = set()
        self.stats: Counter = Counter()
        self.sorted_results: dict[str, tuple] = {}
        self.freed_sessions: dict[str, list[ItemRef]] = {}

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.sid})"

    # helpers

    @property
    def theta(self) -> int:
        return self.cluster.theta

    def node(self, ref: ItemRef) -> Node:
        return self.arena.get(ref)

    def issue(self, ref: ItemRef) -> ItemRef:
        """A client-facing ref carrying a fresh lease and the origin identity."""
        n = self.arena.get(ref)
        return ItemRef(ref.sid, ref.slot, ref.gen, self.sim.now + self.theta, (n.sid, n.ts))

    def respond(self, client: ClientInfo, status: str, value: Any = None, visits: int = 0) -> None:
        self.cluster.note_response(client)
        self.sim.send(self.sid, client.endpoint, Response(status, value, visits), reply_to=client.req)

    def delegate(self, dst: ItemRef, body: Any) -> None:
        self.stats["delegations"] += 1
        self.sim.send(self.sid, dst.sid, body)

    def new_session_id(self) -> str:
        return f"s{self.sid}.{next(self.cluster.session_ids)}"

    def snapshot(self, ref: ItemRef, st: NodeStatus | None = None) -> Item:
        n = self.node(ref)
        st = n.status.load() if st is None else st
        return Item(n.key, n.ts, n.sid, st.deleted, n.next.load(), st.new_location, n.key_range)

    # dispatch

    def on_message(self, env: Envelope):
        body = env.body
        handler = getattr(self, "on_" + type(body).__name__, None)
        if handler is None:
            self.stats["protocol_errors"] += 1
            if env.reply_to is None:
                self.sim.reply(self.sid, env, Response("protocol_error", type(body).__name__))
            return None
        client = getattr(body, "client", None)
        if client is None and type(body).__name__.startswith("Client"):
            client = ClientInfo(env.src, env.mid)
        return self._guard(handler(env), env, client)

    def _guard(self, gen, env: Envelope, client: ClientInfo | None):
        try:
            return (yield from gen)
        except ListError as exc:
            status = {
                UnknownRef: "unknown_ref",
                SentinelTarget: "sentinel",
                NodeNotFound: "not_found",
                Busy: "busy",
            }.get(type(exc), "error")
            self.stats[status] += 1
            if client is not None:
                self.respond(client, status, str(exc))
            else:
                self.sim.reply(self.sid, env, Response(status, str(exc)))

    # client-visible updates

    def on_ClientInsertAfter(self, env):
        b: ClientInsertAfter = env.body
        yield from self.insert_after(b.prev, b.key, ClientInfo(env.src, env.mid))

    def on_DelegateInsertAfter(self, env):
        b: DelegateInsertAfter = env.body
        self.stats["delegated_in"] += 1
        yield from self.insert_after(b.prev, b.key, b.client)

    def on_ClientDelete(self, env):
        b: ClientDelete = env.body
        yield from self.delete(b.ref, ClientInfo(env.src, env.mid))

    def on_DelegateDelete(self, env):
        b: DelegateDelete = env.body
        self.stats["delegated_in"] += 1
        yield from self.delete(b.ref, b.client)

    def gate(self, node: Node) -> NodeStatus | None:
        """Increment the sublist's startCount; ``None`` means delegate."""
        st = node.status.load()
        if st.counters.start.increment() < 0:
            return None
        self.cluster.update_started()
        return st

    def insert_after(self, prev_ref: ItemRef, key, client: ClientInfo):
        if isinstance(key, Sentinel):
            raise SentinelTarget("sentinel keys are reserved")
        prev = self.node(prev_ref)
        if prev.key is HEAD:
            # the global Head forwards to the first SubHead
            first = prev.next.load()
            if first.sid != self.sid:
                self.delegate(first, DelegateInsertAfter(first, key, client))
                return
            prev_ref, prev = first, self.node(first)
        check_insert_target(prev)
        st = self.gate(prev)
        if st is None:
            fwd = prev.status.load().new_location
            if fwd is None:
                # delinked before the Move, so never copied: it is deleted
                self.respond(client, "not_found")
                return
            self.stats["delegated_updates"] += 1
            self.delegate(fwd, DelegateInsertAfter(fwd, key, client))
            return
        yield
        try:
            new_ref, used = yield from insert_after_steps(
                self.arena, self.clock, prev_ref, key, self._insert_logger(prev_ref, prev)
            )
        except NodeNotFound:
            self.respond(client, "not_found")
            self.finish_failed(prev)
            return
        if used.counters.start.get() < 0:
            self.stats["served_after_retire"] += 1
        self.stats["inserts"] += 1
        self.respond(client, "ok", self.issue(new_ref))
        self.complete_insert(prev_ref, new_ref, used, client)

    def delete(self, ref: ItemRef, client: ClientInfo):
        node = self.node(ref)
        if node.is_sentinel:
            raise SentinelTarget(f"cannot delete {node.key!r}")
        st = self.gate(node)
        if st is None:
            fwd = node.status.load().new_location
            if fwd is None:
                self.respond(client, "not_found")
                return
            self.stats["delegated_updates"] += 1
            self.delegate(fwd, DelegateDelete(fwd, client))
            return
        yield
        try:
            pre = yield from delete_steps(self.arena, ref)
        except NodeNotFound:
            self.respond(client, "not_found")
            self.finish_failed(node)
            return
        if pre.counters.start.get() < 0:
            self.stats["served_after_retire"] += 1
        self.cluster.log_commit(("delete", (node.sid, node.ts)))
        self.stats["deletes"] += 1
        self.respond(client, "ok", True)
        self.complete_delete(ref, pre, client)

    def _insert_logger(self, prev_ref: ItemRef, prev: Node):
        if self.cluster.commit_log is None:
            return None
        pid = self.ident_of(prev_ref, prev)

        def commit(ref: ItemRef, node: Node) -> None:
            self.cluster.log_commit(("insert", pid, (node.sid, node.ts), node.key))

        return commit

    @staticmethod
    def ident_of(ref: ItemRef, node: Node):
        if node.is_sentinel:
            return (node.key.value, ref.bare())
        return (node.sid, node.ts)

    def finish_failed(self, node: Node) -> None:
        node.status.load().counters.end.increment()
        self.cluster.update_done()

    def finish_update(self, node: Node) -> None:
        node.status.load().counters.end.increment()
        self.cluster.update_done()

    # protocol hooks

    def complete_insert(self, prev_ref, new_ref, used: NodeStatus, client) -> None:
        raise NotImplementedError

    def complete_delete(self, ref, pre: NodeStatus, client) -> None:
        raise NotImplementedError

    def move(self, entry: RegistryEntry, target: int):
        raise NotImplementedError

    # client-visible reads

    def on_ClientNext(self, env):
        yield from self.next(env.body.prev, ClientInfo(env.src, env.mid))

    def on_DelegateNext(self, env):
        b: DelegateNext = env.body
        self.stats["delegated_in"] += 1
        yield from self.next(b.prev, b.client, b.inclusive)

    def _forward_next(self, ref: ItemRef, client: ClientInfo, inclusive: bool) -> None:
        self.delegate(ref, DelegateNext(ref, client, inclusive))

    def next(self, prev_ref: ItemRef, client: ClientInfo, inclusive: bool = False):
        prev = self.node(prev_ref)
        if prev.key is TAIL:
            if inclusive:
                self.respond(client, "ok", self.cluster.tail_ref)
                return
            raise SentinelTarget("Tail has no successor")
        st = prev.status.load()
        if retired(st):
            if st.new_location is not None:
                self._forward_next(st.new_location, client, inclusive)
                return
            # delinked before its sublist moved: rejoin through the retained successor chain
            ref = prev.next.load()
            while True:
                if ref == self.cluster.tail_ref or ref.sid != self.sid:
                    self._forward_next(ref, client, True)
                    return
                n = self.node(ref)
                nst = n.status.load()
                if nst.new_location is not None or not retired(nst):
                    break
                ref = n.next.load()
                yield
            yield from self.next(ref, client, True)
            return
        if inclusive and not prev.is_sentinel and not st.deleted:
            self.respond(client, "ok", self.issue(prev_ref))
            return
        curr_ref = prev_ref
        while True:
            nxt = self.node(curr_ref).next.load()
            if nxt == self.cluster.tail_ref:
                self.respond(client, "ok", self.cluster.tail_ref)
                return
            if nxt.sid != self.sid:
                self._forward_next(nxt, client, True)
                return
            yield
            c = self.node(nxt)
            cst = c.status.load()
            if retired(cst) and cst.new_location is not None:
                # the rest of this walk lives in a moved copy
                self._forward_next(cst.new_location, client, True)
                return
            if not c.is_sentinel and not cst.deleted:
                self.respond(client, "ok", self.issue(nxt))
                return
            curr_ref = nxt

    def on_ClientGetItem(self, env):
        yield from self.get_item(env.body.ref, ClientInfo(env.src, env.mid))

    def on_DelegateGetItem(self, env):
        b: DelegateGetItem = env.body
        yield from self.get_item(b.ref, b.client)

    def get_item(self, ref: ItemRef, client: ClientInfo):
        node = self.node(ref)
        st = node.status.load()
        if retired(st) and st.new_location is not None:
            self.delegate(st.new_location, DelegateGetItem(st.new_location, client))
            return
        self.respond(client, "ok", (self.issue(ref), self.snapshot(ref, st)))
        if False:
            yield

    def on_ClientLookup(self, env):
        client = ClientInfo(env.src, env.mid)
        key = env.body.key
        found: list[ItemRef] = []
        visits = 0
        seen: set[ItemRef] = set()
        while True:
            # a Split may register a new entry mid-scan, so re-read the registry
            entry = next((e for e in self.registry.values() if e.subhead not in seen), None)
            if entry is None:
                break
            seen.add(entry.subhead)
            visits += 1
            refs, v = yield from self.lookup_sublist(entry.subhead, key)
            visits += v
            for r in refs:
                if r not in found:
                    found.append(r)
        self.respond(client, "ok", tuple(found), visits)

    def on_DelegateLookup(self, env):
        b: DelegateLookup = env.body
        self.stats["delegated_in"] += 1
        refs, v = yield from self.lookup_sublist(b.subhead, b.key)
        # sublists split off after the delegation was issued still belong to the request
        pending = [e for e in self.registry.values() if e.parent == b.subhead]
        while pending:
            child = pending.pop()
            more, w = yield from self.lookup_sublist(child.subhead, b.key)
            refs += [r for r in more if r not in refs]
            v += w
            pending += [e for e in self.registry.values() if e.parent == child.subhead]
        self.sim.reply(self.sid, env, Response("ok", tuple(refs), v))

    def lookup_sublist(self, sh_ref: ItemRef, key):
        """Scan one sublist; delegate to the new owner if it has moved."""
        sh = self.node(sh_ref)
        st = sh.status.load()
        if retired(st):
            return (yield from self._delegate_lookup(st.new_location, key))
        out: list[ItemRef] = []
        visits = 0
        curr_ref = sh.next.load()
        while True:
            yield
            c = self.node(curr_ref)
            visits += 1
            if c.key is SUBTAIL:
                st = sh.status.load()
                if retired(st):
                    return (yield from self._delegate_lookup(st.new_location, key))
                return [self.issue(r) for r in out], visits
            if c.key == key and not c.is_sentinel:
                cst = c.status.load()
                if not cst.deleted and not retired(cst) and curr_ref not in out:
                    out.append(curr_ref)
            curr_ref = c.next.load()

    def _delegate_lookup(self, sh_ref: ItemRef, key):
        self.stats["delegations"] += 1
        resp = yield Call(sh_ref.sid, DelegateLookup(sh_ref, key))
        if not resp.ok:
            raise UnknownRef(resp.value)
        return list(resp.value), resp.visits

    # Split

    def split(self, entry: RegistryEntry, node_ref: ItemRef, sorted_keys: bool = False):
        """Split the sublist after ``node_ref``; returns (subtail, subhead) or None.

        None means the split node was deleted before the sentinel pair
        could be linked; the caller may pick another node.
        """
        node = self.node(node_ref)
        if node.is_sentinel:
            raise SentinelTarget("split node must be a data node")
        old = entry.counters
        new = new_counters()
        while True:
            st = node.status.load()
            if st.deleted:
                return None
            temp = node.next.load()
            yield
            sh = Node(SUBHEAD, temp, NodeStatus(False, None, new), 0, self.sid)
            if entry.key_range is not None or sorted_keys:
                # known before registration so sorted traversals can tell the halves apart
                sh.key_range = (node.key, (entry.key_range or (None, None))[1])
            sh_ref = self.arena.alloc(sh)
            dummy = Node(DUMMY, sh_ref, NodeStatus(False, None, st.counters), 0, self.sid)
            d_ref = self.arena.alloc(dummy)
            ok = yield from rdcss(node.status, st, node.next, temp, d_ref)
            if ok:
                break
            self.arena.free(d_ref)
            self.arena.free(sh_ref)
        self.cluster.splitting = (entry, new)
        # everything behind the new SubHead moves to the fresh counters
        curr_ref = sh.next.load()
        while True:
            c = self.node(curr_ref)
            while True:
                cst = c.status.load()
                if cst.counters is new or c.status.cas(cst, cst._replace(counters=new)):
                    break
            if c.key is SUBTAIL:
                break
            curr_ref = c.next.load()
            yield
        while True:
            a1 = new.start.get() - new.end.get()
            a2 = old.start.get() - old.end.get()
            if a1 + a2 == entry.offset:
                break
            yield Sleep(1)
        right = None
        if entry.key_range is not None or sorted_keys:
            lo, hi = entry.key_range or (None, None)
            right = (node.key, hi)
            entry.key_range = (lo, node.key)
            sh.key_range = right
            self.node(entry.subhead).key_range = entry.key_range
        self.cluster.note_split(self, entry.offset, a1, a2)
        entry.offset = a2
        self.registry[sh_ref] = RegistryEntry(sh_ref, new, a1, d_ref, right, entry.subhead)
        dummy.key = SUBTAIL
        self.cluster.splitting = None
        self.stats["splits"] += 1
        self.sim.event("split", self.sid, (a1, a2))
        return d_ref, sh_ref

    # Move plumbing shared by both protocols

    def start_session(self, session: str, item: Item) -> ItemRef:
        counters = new_counters()
        st_ref = self.arena.alloc(Node(SUBTAIL, None, NodeStatus(False, None, counters), 0, self.sid))
        sh = Node(SUBHEAD, st_ref, NodeStatus(False, None, counters), 0, self.sid)
        sh.key_range = item.key_range
        sh_ref = self.arena.alloc(sh)
        self.sessions[session] = MoveSession(session, sh_ref, st_ref, counters, [sh_ref, st_ref])
        return sh_ref

    def copy_node(self, session: MoveSession, item: Item) -> tuple[ItemRef, Node]:
        self.clock.join(item.ts)
        node = Node(item.key, None, NodeStatus(item.deleted, None, session.counters), item.ts, item.sid)
        ref = self.arena.alloc(node)
        session.nodes.append(ref)
        return ref, node

    def set_new_location(self, ref: ItemRef, remote: ItemRef) -> NodeStatus:
        """Install the forwarding ref; returns the status it replaced."""
        node = self.node(ref)
        while True:
            st = node.status.load()
            if node.status.cas(st, st._replace(new_location=remote)):
                return st

    def session_for(self, name: str) -> MoveSession:
        try:
            return self.sessions[name]
        except KeyError:
            raise UnknownRef(f"no move session {name}") from None

    def on_DeleteMovedSublist(self, env):
        b: DeleteMovedSublist = env.body
        session = self.sessions.pop(b.session, None)
        if session is not None:
            for ref in session.nodes:
                self.arena.free(ref)
            self.freed_sessions[b.session] = list(session.nodes)
        self.stats["moved_sublists_deleted"] += 1
        self.sim.reply(self.sid, env, Response("ok"))
        if False:
            yield

    def on_Switch(self, env):
        b: Switch = env.body
        session = self.sessions.pop(b.session, None)
        counters = self.node(b.remote_subhead).status.load().counters
        self.registry[b.remote_subhead] = RegistryEntry(
            b.remote_subhead, counters, 0, b.prev_subtail, b.key_range
        )
        self.node(b.remote_subhead).key_range = b.key_range
        for op_id, state in b.results:
            self.sorted_results.setdefault(op_id, state)
        self.stats["switch_received"] += 1
        self.sim.reply(self.sid, env, Response("ok"))
        if session is None:
            self.stats["switch_without_session"] += 1
        if False:
            yield

    def run_move(self, sh_ref: ItemRef, target: int):
        """Move + Switch for the sublist headed by ``sh_ref``.

        The caller must hold the cluster token; it is released once the
        target has acknowledged the Switch, before the lease wait.
        """
        entry = self.registry[sh_ref]
        self.cluster.move_started(self, entry, target)
        remote_sh, session = yield from self.move(entry, target)
        yield from self.switch(entry, target, remote_sh, session)

    def switch(self, entry: RegistryEntry, target: int, remote_sh: ItemRef, session: str):
        yield from self.repoint(entry.prev_subtail, remote_sh)
        t_req = self.sim.now
        self.sim.event("switch", self.sid, (entry.subhead, remote_sh))
        done = tuple((k, v) for k, v in self.sorted_results.items() if v[0] == "done")
        resp = yield Call(target, Switch(session, remote_sh, entry.prev_subtail, entry.key_range, done))
        if not resp.ok:
            raise RuntimeError(f"switch refused: {resp}")
        self.cluster.token.release(self)
        self.cluster.switch_requested(self, entry, t_req)
        wait = t_req + self.theta - self.sim.now
        if wait > 0:
            yield Sleep(wait)
        self.reclaim_sublist(entry)
        self.cluster.sublist_reclaimed(self, entry, t_req)

    def repoint(self, st_ref: ItemRef, new_sh: ItemRef):
        """Point the preceding sublist's SubTail (or Head) at ``new_sh``."""
        while True:
            if st_ref.sid == self.sid:
                fwd = self._repoint_local(st_ref, new_sh)
                if fwd is None:
                    return
                st_ref = fwd
                continue
            resp = yield Call(st_ref.sid, RepointSubtail(st_ref, new_sh))
            if not resp.ok:
                raise UnknownRef(f"repoint failed: {resp.value}")
            return

    def _repoint_local(self, st_ref: ItemRef, new_sh: ItemRef) -> ItemRef | None:
        if self.arena.contains(st_ref):
            n = self.node(st_ref)
            st = n.status.load()
            if n.key is HEAD or not retired(st):
                n.next.swap_in(new_sh)
                self.stats["repoints"] += 1
                return None
            return st.new_location
        if st_ref in self.forward:
            return self.forward[st_ref]
        raise UnknownRef(f"cannot repoint {st_ref!r}")

    def on_RepointSubtail(self, env):
        b: RepointSubtail = env.body
        st_ref = b.subtail
        fwd = self._repoint_local(st_ref, b.new_subhead)
        if fwd is None:
            self.sim.reply(self.sid, env, Response("ok"))
            return
        if fwd.sid == self.sid:
            yield from self.repoint(fwd, b.new_subhead)
            self.sim.reply(self.sid, env, Response("ok"))
            return
        resp = yield Call(fwd.sid, RepointSubtail(fwd, b.new_subhead))
        self.sim.reply(self.sid, env, resp)

    def reclaim_sublist(self, entry: RegistryEntry) -> int:
        """Drop a retired sublist after the lease wait and free its slots."""
        self.registry.pop(entry.subhead, None)
        refs = []
        ref = entry.subhead
        while True:
            n = self.node(ref)
            st = n.status.load()
            while not st.deleted and not n.is_sentinel:
                if n.status.cas(st, st._replace(deleted=True)):
                    break
                st = n.status.load()
            refs.append((ref, n.key, n.status.load().new_location))
            if n.key is SUBTAIL:
                break
            ref = n.next.load()
        for r, key, fwd in refs:
            if key in (SUBHEAD, SUBTAIL) and fwd is not None:
                self.forward[r] = fwd
            self.arena.free(r)
        self.stats["reclaimed_nodes"] += len(refs)
        self.sim.event("reclaim", self.sid, entry.subhead)
        return len(refs)

    # delinking and reclamation

    def delink_pass(self):
        """One delinking pass over every active sublist; returns the count."""
        token = self.cluster.token
        if self.sessions or not token.try_acquire(self):
            self.stats["delink_busy"] += 1
            raise Busy("transformation in progress")
        try:
            count = 0
            due = self.sim.now + self.theta
            for entry in list(self.registry.values()):
                if entry.retired:
                    continue
                count += yield from delink_steps(
                    self.arena, entry.subhead, lambda r: self.quarantine.append((r, due))
                )
        finally:
            token.release(self)
        self.stats["delinked"] += count
        self.sim.event("delink", self.sid, count)
        return count

    def reclaim_quarantine(self) -> int:
        n = 0
        while self.quarantine and self.quarantine[0][1] <= self.sim.now:
            ref, _ = self.quarantine.popleft()
            self.arena.free(ref)
            n += 1
        self.stats["reclaimed_nodes"] += n
        return n

    # introspection

    def sublist_refs(self, sh_ref: ItemRef, include_sentinels: bool = False) -> list[ItemRef]:
        out = []
        ref = self.node(sh_ref).next.load()
        while True:
            n = self.node(ref)
            if n.key is SUBTAIL:
                return out
            if include_sentinels or not n.is_sentinel:
                out.append(ref)
            ref = n.next.load()

    def sequence(self, sh_ref: ItemRef) -> list[tuple]:
        """(key, ts, sid, deleted) for every data node of a sublist."""
        out = []
        for ref in self.sublist_refs(sh_ref, include_sentinels=True):
            n = self.node(ref)
            if n.key is DUMMY or n.key is SUBHEAD:
                continue
            out.append((n.key, n.ts, n.sid, n.status.load().deleted))
        return out
