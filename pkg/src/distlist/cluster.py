"""Cluster assembly: servers, clients, bootstrap layout, scripted directives.

The cluster also hosts the observation hooks the protocols call at
interesting instants (seal CAS, abort, Switch request, reclamation) and
the per-tick quiescent counter checkpoints.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass
from typing import Any

from .am import AMServer
from .client import Client, Workload
from .core import DUMMY, HEAD, SUBHEAD, SUBTAIL, TAIL, ItemRef, Node, NodeStatus
from .messages import ClientInfo
from .server import RegistryEntry, Server, new_counters
from .sim import Simulator, Sleep
from .tr import TRServer
from .verify.history import History
from .verify.oracle import replay_oracle


class Token:
    """Admits one Split/Move/Switch hand-off (or delink pass) at a time."""

    def __init__(self) -> None:
        self.holder: Any = None

    @property
    def held(self) -> bool:
        return self.holder is not None

    def try_acquire(self, who: Any) -> bool:
        if self.holder is None:
            self.holder = who
            return True
        return False

    def transfer(self, who: Any) -> None:
        self.holder = who

    def release(self, who: Any) -> None:
        if self.holder is not who:
            raise RuntimeError(f"{who!r} released a token held by {self.holder!r}")
        self.holder = None


class _Ctl:
    def on_message(self, env):
        return None


@dataclass
class MoveRecord:
    source: int
    target: int
    subhead: ItemRef
    started: int
    base: list
    log_start: int
    sealed: int | None = None
    switch_req: int | None = None
    reclaimed: int | None = None
    attempts: int = 0
    aborts: int = 0
    size: int = 0
    match: bool | None = None
    oracle_match: bool | None = None
    residue_clean: list | None = None


class Cluster:
    def __init__(
        self,
        protocol: str = "am",
        servers: int = 2,
        seed: int = 0,
        theta: int = 1000,
        request_timeout: int = 200,
        net_delay: tuple[int, int] = (1, 3),
        reorder: bool = True,
        move_batch: int = 1,
        record_commits: bool = False,
        max_ticks: int | None = 200_000,
        trace: bool = True,
    ) -> None:
        if protocol not in ("am", "tr"):
            raise ValueError("protocol must be 'am' or 'tr'")
        if theta <= request_timeout:
            raise ValueError("theta must exceed the request timeout")
        self.protocol = protocol
        self.theta = theta
        self.request_timeout = request_timeout
        self.move_batch = move_batch
        self.seed = seed
        self.sim = Simulator(seed, net_delay, reorder, request_timeout, max_ticks)
        self.sim.trace_enabled = trace
        cls = AMServer if protocol == "am" else TRServer
        self.servers: list[Server] = [cls(i, self) for i in range(servers)]
        for s in self.servers:
            self.sim.register(s.sid, s)
        self.sim.register("ctl", _Ctl())
        s0 = self.servers[0]
        self.tail_ref = s0.arena.alloc(Node(TAIL, None, NodeStatus(), 0, 0))
        self.head_ref = s0.arena.alloc(Node(HEAD, self.tail_ref, NodeStatus(), 0, 0))
        self.token = Token()
        self.session_ids = itertools.count(1)
        self.history = History()
        self.clients: list[Client] = []
        self.inflight = 0
        self.commit_log: list | None = [] if record_commits else None
        self.splitting = None
        self.moves: list[MoveRecord] = []
        self.checks: Counter = Counter()
        self.violations: list[tuple[str, str]] = []  # (suite, message)
        self.seal_hooks: list = []
        self._responded: set[tuple[str, int]] = set()
        self.sorted_visits: list[int] = []
        self.search_costs: list[tuple[int, int]] = []
        self.split_offsets: list[tuple[int, int, int]] = []
        self.sim.on_tick_end.append(self._checkpoint)

    @property
    def server_ids(self) -> list[int]:
        return [s.sid for s in self.servers]

    # layout

    def bootstrap(self, layout, key_ranges=None) -> list[list[ItemRef]]:
        """Build sublists in global order; returns client refs per sublist.

        ``layout`` is a list of ``(server id, keys)``; ``key_ranges``
        optionally gives the ``(min, max]`` range of each sublist.
        """
        head = self.servers[0].node(self.head_ref)
        prev_node, prev_ref = head, self.head_ref
        out = []
        for i, (sid, keys) in enumerate(layout):
            srv = self.servers[sid]
            counters = new_counters()
            st_ref = srv.arena.alloc(Node(SUBTAIL, None, NodeStatus(False, None, counters), 0, sid))
            sh = Node(SUBHEAD, None, NodeStatus(False, None, counters), 0, sid)
            sh_ref = srv.arena.alloc(sh)
            rng = None if key_ranges is None else key_ranges[i]
            sh.key_range = rng
            tail_of_chain, refs = sh, []
            for k in keys:
                n = Node(k, None, NodeStatus(False, None, counters), srv.clock.tick(), sid)
                r = srv.arena.alloc(n)
                tail_of_chain.next.swap_in(r)
                tail_of_chain = n
                refs.append(r)
                self.history.preload.append(((sid, n.ts), k))
            tail_of_chain.next.swap_in(st_ref)
            srv.registry[sh_ref] = RegistryEntry(sh_ref, counters, 0, prev_ref, rng)
            prev_node.next.swap_in(sh_ref)
            prev_node, prev_ref = srv.node(st_ref), st_ref
            out.append([srv.issue(r) for r in refs])
        prev_node.next.swap_in(self.tail_ref)
        return out

    def owner(self, ref: ItemRef) -> Server:
        return self.servers[ref.sid]

    def node(self, ref: ItemRef) -> Node:
        return self.servers[ref.sid].node(ref)

    def sublist_heads(self) -> list[ItemRef]:
        """Active SubHeads in global list order."""
        out = []
        ref = self.node(self.head_ref).next.load()
        while ref != self.tail_ref:
            n = self.node(ref)
            if n.key is SUBHEAD:
                out.append(ref)
            ref = n.next.load()
        return out

    def entry(self, sh: ItemRef) -> RegistryEntry:
        return self.servers[sh.sid].registry[sh]

    def global_sequence(self, live_only: bool = True) -> list[tuple]:
        """(key, ts, sid) of data nodes from Head to Tail."""
        out = []
        ref = self.node(self.head_ref).next.load()
        while ref != self.tail_ref:
            n = self.node(ref)
            if not n.is_sentinel and (not live_only or not n.status.load().deleted):
                out.append((n.key, n.ts, n.sid))
            ref = n.next.load()
        return out

    def tombstones_reachable(self) -> int:
        count = 0
        ref = self.node(self.head_ref).next.load()
        while ref != self.tail_ref:
            n = self.node(ref)
            if not n.is_sentinel and n.status.load().deleted:
                count += 1
            ref = n.next.load()
        return count

    # clients

    def add_client(self, workload: Workload, name: str | None = None) -> Client:
        name = name or f"c{len(self.clients)}"
        c = Client(name, self, seed=f"{self.seed}/{name}")
        self.clients.append(c)
        self.sim.register(name, c)
        self.sim.spawn(c.run(workload), owner=name, name="workload")
        return c

    # directives

    def schedule(self, tick: int, op: str, *args) -> None:
        self.sim.spawn(self._directive(op, args), owner="ctl", name=op, delay=max(0, tick - self.sim.now))

    def _directive(self, op: str, args):
        while not self.token.try_acquire("ctl"):
            yield Sleep(1)
        if op == "delink":
            self.token.release("ctl")
            targets = self.servers if not args or args[0] is None else [self.servers[args[0]]]
            for s in targets:
                self.sim.spawn(self._delink_task(s), owner=s.sid, name="delink")
            return
        heads = self.sublist_heads()
        idx = args[0]
        if idx >= len(heads):
            self.checks["directive_skipped"] += 1
            self.token.release("ctl")
            return
        sh = heads[idx]
        server = self.servers[sh.sid]
        entry = server.registry.get(sh)
        if entry is None or entry.retired:
            self.checks["directive_skipped"] += 1
            self.token.release("ctl")
            return
        if op == "move":
            target = args[1]
            if target == sh.sid:
                self.checks["directive_skipped"] += 1
                self.token.release("ctl")
                return
            self.token.transfer(server)
            self.sim.spawn(server.run_move(sh, target), owner=server.sid, name="move")
        elif op == "split":
            data = [r for r in server.sublist_refs(sh) if not server.node(r).status.load().deleted]
            if len(data) < 2:
                self.checks["directive_skipped"] += 1
                self.token.release("ctl")
                return
            pos = args[1] if len(args) > 1 and args[1] is not None else len(data) // 2 - 1
            node = data[max(0, min(pos, len(data) - 1))]
            self.token.transfer(server)
            self.sim.spawn(self._split_task(server, entry, node), owner=server.sid, name="split")
        else:
            self.token.release("ctl")
            raise ValueError(f"unknown directive {op!r}")

    def _split_task(self, server: Server, entry: RegistryEntry, node_ref: ItemRef):
        try:
            sorted_keys = entry.key_range is not None
            res = yield from server.split(entry, node_ref, sorted_keys)
            if res is None:
                self.checks["split_aborted"] += 1
        finally:
            self.splitting = None
            server.cluster.token.release(server)

    def _delink_task(self, server: Server):
        while True:
            if not self.token.held and not server.sessions:
                break
            yield Sleep(1)
        yield from server.delink_pass()

    def auto_split(self, threshold: int, period: int = 10):
        """Background monitor splitting any sublist longer than ``threshold``."""
        while not (self.clients and all(c.done for c in self.clients)):
            yield Sleep(period)
            if self.token.held:
                continue
            for i, sh in enumerate(self.sublist_heads()):
                srv = self.servers[sh.sid]
                live = [r for r in srv.sublist_refs(sh) if not srv.node(r).status.load().deleted]
                if len(live) > threshold:
                    self.checks["auto_splits"] += 1
                    yield from self._directive("split", (i, None))
                    break

    def start_auto_split(self, threshold: int) -> None:
        self.sim.spawn(self.auto_split(threshold), owner="ctl", name="auto_split")

    # hooks called by servers

    def note_response(self, client: ClientInfo) -> None:
        self._responded.add((client.endpoint, client.req))

    def replicate_sent(self, client: ClientInfo | None) -> None:
        self.checks["replicates"] += 1
        if client is not None and (client.endpoint, client.req) not in self._responded:
            self.checks["latency_violations"] += 1
            self.violations.append(("replay", f"replicate before response for {client}"))

    def update_started(self) -> None:
        self.inflight += 1

    def update_done(self) -> None:
        self.inflight -= 1

    def log_commit(self, entry: tuple) -> None:
        if self.commit_log is not None:
            self.commit_log.append(entry)

    def note_split(self, server: Server, old_offset: int, a1: int, a2: int) -> None:
        self.split_offsets.append((old_offset, a1, a2))
        self.checks["splits"] += 1
        if a1 + a2 != old_offset:
            self.violations.append(("counters", f"split offsets {a1}+{a2} != {old_offset}"))

    def note_sorted_visits(self, visits: int) -> None:
        self.sorted_visits.append(visits)

    def note_search(self, server: Server, sh: ItemRef, visits: int, length_before: int) -> None:
        """Record (visits, registry size + owner sublist length) for one search.

        The owner length is the larger of its values at scan start and end,
        since concurrent inserts and splits change it mid-scan.
        """
        bound = len(server.registry) + max(length_before, len(server.sublist_refs(sh)))
        self.search_costs.append((visits, bound))

    def _record_for(self, server: Server, entry: RegistryEntry) -> MoveRecord:
        for rec in reversed(self.moves):
            if rec.subhead == entry.subhead and rec.source == server.sid:
                return rec
        raise KeyError(entry.subhead)

    def move_started(self, server: Server, entry: RegistryEntry, target: int) -> None:
        base = []
        for ref in [entry.subhead] + server.sublist_refs(entry.subhead):
            n = server.node(ref)
            base.append((server.ident_of(ref, n), n.key, n.status.load().deleted))
        log_start = len(self.commit_log) if self.commit_log is not None else 0
        self.moves.append(MoveRecord(server.sid, target, entry.subhead, self.sim.now, base, log_start))

    def move_sealed(self, server: Server, entry: RegistryEntry, target: int, remote_sh: ItemRef, session: str) -> None:
        rec = self._record_for(server, entry)
        rec.sealed = self.sim.now
        rec.attempts = rec.aborts + 1
        src = server.sequence(entry.subhead)
        dst = self.servers[target].sequence(remote_sh)
        rec.size = len(src)
        rec.match = src == dst
        if not rec.match:
            self.violations.append(("replay", f"copy mismatch at seal of {entry.subhead}: {src} vs {dst}"))
        if self.commit_log is not None:
            expected = replay_oracle(rec.base, self.commit_log[rec.log_start :])
            rec.oracle_match = expected == src
            if not rec.oracle_match:
                self.violations.append(("replay", f"oracle mismatch at seal of {entry.subhead}"))
        for hook in self.seal_hooks:
            hook(self, server, entry, target, remote_sh)

    def move_aborted(self, server: Server, entry: RegistryEntry, target: int, session: str) -> None:
        rec = self._record_for(server, entry)
        rec.aborts += 1
        tgt = self.servers[target]
        clean = session not in tgt.sessions and not any(
            tgt.arena.contains(r) for r in tgt.freed_sessions.get(session, ())
        )
        rec.residue_clean = (rec.residue_clean or []) + [clean]
        if not clean:
            self.violations.append(("replay", f"residue after abort of {session}"))

    def switch_requested(self, server: Server, entry: RegistryEntry, t_req: int) -> None:
        self._record_for(server, entry).switch_req = t_req

    def sublist_reclaimed(self, server: Server, entry: RegistryEntry, t_req: int) -> None:
        rec = self._record_for(server, entry)
        rec.reclaimed = self.sim.now
        if rec.reclaimed - t_req != self.theta:
            self.violations.append(("replay", f"reclaimed {rec.reclaimed - t_req} ticks after switch, not theta"))

    # checkpoints

    def _checkpoint(self) -> None:
        if self.inflight != 0:
            return
        if self.splitting is not None:
            entry, new = self.splitting
            if entry.counters.start.get() >= 0:
                gap = (entry.counters.start.get() - entry.counters.end.get()) + (new.start.get() - new.end.get())
                self.checks["counter_checkpoints"] += 1
                if gap != entry.offset:
                    self.checks["counter_violations"] += 1
                    self.violations.append(("counters", f"t={self.sim.now} split counter sum {gap} != {entry.offset}"))
            skip = entry.subhead
        else:
            skip = None
        for s in self.servers:
            for e in s.registry.values():
                start = e.counters.start.get()
                if start < 0 or e.subhead == skip:
                    continue
                self.checks["counter_checkpoints"] += 1
                if start - e.counters.end.get() != e.offset:
                    self.checks["counter_violations"] += 1
                    self.violations.append(("counters", f"t={self.sim.now} counter identity broken at {e.subhead}"))

    # running

    def run(self, until: int | None = None) -> int:
        return self.sim.run(until=until)

    def stats(self) -> Counter:
        total: Counter = Counter()
        for s in self.servers:
            total.update(s.stats)
        return total
