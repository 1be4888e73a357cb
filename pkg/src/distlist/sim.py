"""Deterministic discrete-event simulator: network plus task scheduler.

Simulated time advances in integer ticks. Within a tick the seeded RNG
repeatedly picks one item among the runnable task steps and the
deliverable messages, so the interleaving of handler steps is fully
determined by the seed. Tasks are generators that yield effects:

* ``None`` -- a preemption point, the task stays runnable;
* :class:`Sleep` -- park for a number of ticks;
* :class:`Call` -- send a request and park until its response arrives;
* :class:`CallMany` -- the same for several requests at once.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

TRACE_VERSION = "distlist-trace/1"


class SimTimeout(RuntimeError):
    """A request went unanswered for longer than the request timeout."""


class SimLimit(RuntimeError):
    """The run exceeded its configured tick budget."""


@dataclass(frozen=True)
class Sleep:
    ticks: int


@dataclass(frozen=True)
class Call:
    dst: Any
    body: Any
    fifo: Any = None


@dataclass(frozen=True)
class CallMany:
    calls: tuple[tuple[Any, Any], ...]


@dataclass
class Envelope:
    mid: int
    src: Any
    dst: Any
    body: Any
    reply_to: int | None = None
    fifo: Any = None
    deliver_at: int = 0


@dataclass
class Task:
    tid: int
    gen: Any
    owner: Any
    name: str
    resume: Any = None
    throw: BaseException | None = None
    waiting: dict[int, int] = field(default_factory=dict)  # req id -> slot
    replies: list = field(default_factory=list)
    many: bool = False
    done: bool = False
    result: Any = None


def digest(obj: Any) -> str:
    return hashlib.sha1(repr(obj).encode()).hexdigest()[:12]


class Simulator:
    """Network, scheduler and trace in one object."""

    def __init__(
        self,
        seed: int = 0,
        net_delay: tuple[int, int] = (1, 1),
        reorder: bool = True,
        request_timeout: int = 200,
        max_ticks: int | None = None,
    ) -> None:
        lo, hi = net_delay
        if lo < 1 or hi < lo:
            raise ValueError("net_delay must satisfy 1 <= min <= max")
        if hi > request_timeout:
            raise ValueError("maximum network delay must not exceed the request timeout")
        self.rng = random.Random(seed)
        self.net_delay = (lo, hi)
        self.reorder = reorder
        self.request_timeout = request_timeout
        self.max_ticks = max_ticks
        self.now = 0
        self.endpoints: dict[Any, Any] = {}
        self.trace: list[str] = []
        self.trace_enabled = True
        self.on_tick_end: list[Callable[[], None]] = []
        self._mid = 0
        self._tid = 0
        self._future: list[tuple[int, int, Envelope]] = []  # heap of (deliver_at, mid, env)
        self._ready: list[Envelope] = []  # due and deliverable (reordering mode)
        self._parked: dict[Any, dict[int, Envelope]] = {}  # due but behind an earlier FIFO message
        self._channels: dict[Any, deque[Envelope]] = {}  # due messages per channel (FIFO mode)
        self._fifo_last: dict[Any, int] = {}
        self._fifo_queues: dict[Any, deque[int]] = {}
        self._runnable: list[Task] = []
        self._timers: list[tuple[int, int, Task]] = []
        self._pending: dict[int, tuple[Task, int]] = {}  # req id -> (task, deadline)
        self.delivered = 0
        self.sent = 0
        self.late_replies = 0
        self.tasks_done = 0

    # endpoints and tracing

    def register(self, name: Any, endpoint: Any) -> None:
        self.endpoints[name] = endpoint

    def log(self, kind: str, src: Any, dst: Any, payload: Any) -> None:
        if self.trace_enabled:
            self.trace.append(f"{self.now} {kind} {src} {dst} {digest(payload)}")

    def event(self, name: str, who: Any, detail: Any = "") -> None:
        self.log(name, who, "-", detail)

    # network

    def _next_mid(self) -> int:
        self._mid += 1
        return self._mid

    def send(self, src: Any, dst: Any, body: Any, reply_to: int | None = None, fifo: Any = None) -> int:
        if dst not in self.endpoints:
            raise KeyError(f"unknown endpoint {dst!r}")
        env = Envelope(self._next_mid(), src, dst, body, reply_to, fifo)
        lo, hi = self.net_delay
        if self.reorder:
            at = self.now + self.rng.randint(lo, hi)
            if fifo is not None:
                key = (src, dst, fifo)
                at = max(at, self._fifo_last.get(key, 0))
                self._fifo_last[key] = at
                self._fifo_queues.setdefault(key, deque()).append(env.mid)
        else:
            key = (src, dst)
            at = max(self.now + lo, self._fifo_last.get(key, 0))
            self._fifo_last[key] = at
        env.deliver_at = at
        heapq.heappush(self._future, (at, env.mid, env))
        self.sent += 1
        self.log("send", src, dst, (type(body).__name__, body, reply_to))
        return env.mid

    def reply(self, src: Any, request: Envelope, body: Any) -> None:
        self.send(src, request.src, body, reply_to=request.mid)

    def _promote(self) -> None:
        """Move messages whose delivery time has come into the ready structures."""
        while self._future and self._future[0][0] <= self.now:
            env = heapq.heappop(self._future)[2]
            if not self.reorder:
                self._channels.setdefault((env.src, env.dst), deque()).append(env)
            elif env.fifo is None:
                self._ready.append(env)
            else:
                key = (env.src, env.dst, env.fifo)
                if self._fifo_queues[key][0] == env.mid:
                    self._ready.append(env)
                else:
                    self._parked.setdefault(key, {})[env.mid] = env

    def _eligible(self) -> list[Envelope]:
        if self.reorder:
            return self._ready
        # per-channel FIFO; channels interleave by send order
        return sorted((q[0] for q in self._channels.values() if q), key=lambda e: e.mid)

    def _take(self, msgs: list[Envelope], idx: int) -> Envelope:
        env = msgs[idx]
        if not self.reorder:
            self._channels[(env.src, env.dst)].popleft()
            return env
        # swap-pop keeps removal O(1) and stays deterministic
        msgs[idx] = msgs[-1]
        msgs.pop()
        if env.fifo is not None:
            key = (env.src, env.dst, env.fifo)
            q = self._fifo_queues[key]
            q.popleft()
            parked = self._parked.get(key)
            if q and parked and q[0] in parked:
                self._ready.append(parked.pop(q[0]))
        return env

    def _deliver(self, env: Envelope) -> None:
        self.delivered += 1
        self.log("recv", env.src, env.dst, (type(env.body).__name__, env.mid))
        if env.reply_to is not None:
            slot = self._pending.pop(env.reply_to, None)
            if slot is None:
                self.late_replies += 1
                return
            task, _ = slot
            idx = task.waiting.pop(env.reply_to)
            task.replies[idx] = env.body
            if not task.waiting:
                task.resume = list(task.replies) if task.many else task.replies[0]
                self._runnable.append(task)
            return
        endpoint = self.endpoints[env.dst]
        gen = endpoint.on_message(env)
        if gen is not None:
            self.spawn(gen, owner=env.dst, name=type(env.body).__name__)

    # tasks

    def spawn(self, gen, owner: Any = None, name: str = "task", delay: int = 0) -> Task:
        self._tid += 1
        task = Task(self._tid, gen, owner, name)
        if delay > 0:
            heapq.heappush(self._timers, (self.now + delay, task.tid, task))
        else:
            self._runnable.append(task)
        return task

    def _issue(self, task: Task, calls: Iterable[tuple[Any, Any, Any]], many: bool) -> None:
        calls = list(calls)
        task.many = many
        task.replies = [None] * len(calls)
        task.waiting = {}
        deadline = self.now + self.request_timeout
        for i, (dst, body, fifo) in enumerate(calls):
            mid = self.send(task.owner, dst, body, fifo=fifo)
            task.waiting[mid] = i
            self._pending[mid] = (task, deadline)
        if not calls:
            task.resume = []
            self._runnable.append(task)

    def _step(self, task: Task) -> None:
        value, task.resume = task.resume, None
        try:
            if task.throw is not None:
                exc, task.throw = task.throw, None
                effect = task.gen.throw(exc)
            else:
                effect = task.gen.send(value)
        except StopIteration as stop:
            task.done = True
            task.result = stop.value
            self.tasks_done += 1
            return
        if effect is None:
            self._runnable.append(task)
        elif isinstance(effect, Sleep):
            if effect.ticks <= 0:
                self._runnable.append(task)
            else:
                heapq.heappush(self._timers, (self.now + effect.ticks, task.tid, task))
        elif isinstance(effect, Call):
            self._issue(task, [(effect.dst, effect.body, effect.fifo)], many=False)
        elif isinstance(effect, CallMany):
            self._issue(task, [(d, b, None) for d, b in effect.calls], many=True)
        else:
            raise TypeError(f"task {task.name} yielded unknown effect {effect!r}")

    # main loop

    def _drain(self) -> None:
        while True:
            while self._timers and self._timers[0][0] <= self.now:
                self._runnable.append(heapq.heappop(self._timers)[2])
            self._promote()
            msgs = self._eligible()
            n_tasks = len(self._runnable)
            total = n_tasks + len(msgs)
            if total == 0:
                return
            pick = self.rng.randrange(total)
            if pick < n_tasks:
                # swap-pop keeps removal O(1) and stays deterministic
                task = self._runnable[pick]
                self._runnable[pick] = self._runnable[-1]
                self._runnable.pop()
                self._step(task)
            else:
                self._deliver(self._take(msgs, pick - n_tasks))

    def _check_timeouts(self) -> None:
        for mid, (task, deadline) in self._pending.items():
            if deadline < self.now:
                raise SimTimeout(f"request {mid} from {task.owner} ({task.name}) unanswered")

    def idle(self) -> bool:
        return not (self._runnable or self._timers or self._future or self._ready or self._parked_count())

    def _parked_count(self) -> int:
        return sum(len(v) for v in self._parked.values()) + sum(len(q) for q in self._channels.values())

    def run(self, until: int | None = None, stop: Callable[[], bool] | None = None) -> int:
        """Advance until nothing is left to do (or ``until``/``stop``)."""
        while True:
            self._drain()
            for hook in self.on_tick_end:
                hook()
            if stop is not None and stop():
                return self.now
            nxt = []
            if self._future:
                nxt.append(self._future[0][0])
            if self._timers:
                nxt.append(self._timers[0][0])
            if not nxt:
                if self._pending:
                    raise SimTimeout(f"{len(self._pending)} requests can never be answered")
                return self.now
            t = max(min(nxt), self.now + 1)
            if until is not None and t > until:
                self.now = until
                return self.now
            self.now = t
            if self.max_ticks is not None and self.now > self.max_ticks:
                raise SimLimit(f"run exceeded {self.max_ticks} ticks")
            self._check_timeouts()

    def trace_text(self, header: str = "") -> str:
        body = "\n".join(self.trace)
        h = hashlib.sha256(body.encode()).hexdigest()
        head = f"# {TRACE_VERSION} {header}".rstrip()
        return f"{head}\n{body}\n# digest {h}\n"
