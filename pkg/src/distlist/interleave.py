"""Step-level interleaving of generator programs over shared memory.

Each program is a generator whose bare ``yield`` marks a preemption
point. :func:`run_schedule` advances one program per step according to a
chooser; :func:`explore` enumerates every schedule by stateless
depth-first search (each schedule replays from a fresh ``setup()``),
optionally bounded by the number of preemptions;
:func:`random_histories` drives the core list with seeded workers and
records a history for the linearizability checker.
"""

from __future__ import annotations

import random
import sys
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

from .core import HEAD, TAIL, ItemRef, LockFreeList, NodeNotFound
from .verify.history import History


def run_schedule(gens: Sequence, choose: Callable[[int, int | None], int]) -> list[Any]:
    """Run generators to completion.

    ``choose(n, last)`` picks one of ``n`` live programs; ``last`` is the
    position of the program that ran the previous step, or None if it
    just finished.
    """
    live = list(range(len(gens)))
    results: list[Any] = [None] * len(gens)
    last: int | None = None
    while live:
        k = choose(len(live), last) if len(live) > 1 else 0
        i = live[k]
        try:
            effect = next(gens[i])
        except StopIteration as stop:
            results[i] = stop.value
            live.pop(k)
            last = None
            continue
        if effect is not None:
            raise TypeError(f"shared-memory programs may only yield None, got {effect!r}")
        last = k
    return results


def explore(
    setup: Callable[[], tuple[Sequence, Any]],
    check: Callable[[Any, list], None],
    max_runs: int | None = None,
    preemptions: int | None = None,
) -> int:
    """Enumerate schedules by stateless DFS; returns the number explored.

    ``setup()`` builds fresh state and returns ``(generators, context)``;
    ``check(context, results)`` runs after each complete schedule. With
    ``preemptions`` set, only schedules that switch away from a still
    runnable program at most that many times are enumerated (all of them).
    """
    pending: list[list[int]] = [[]]
    runs = 0
    while pending:
        prefix = pending.pop()
        gens, ctx = setup()
        trail: list[tuple[int, int | None, int]] = []  # (n, last, preemptions before)
        used = 0

        def choose(n: int, last: int | None) -> int:
            nonlocal used
            pos = len(trail)
            trail.append((n, last, used))
            k = prefix[pos] if pos < len(prefix) else (0 if last is None else last)
            if last is not None and k != last:
                used += 1
            return k

        results = run_schedule(gens, choose)
        check(ctx, results)
        runs += 1
        if max_runs is not None and runs >= max_runs:
            break
        for pos in range(len(trail) - 1, len(prefix) - 1, -1):
            n, last, before = trail[pos]
            default = 0 if last is None else last
            cost = 0 if last is None else 1
            if preemptions is not None and before + cost > preemptions:
                continue
            for alt in range(n - 1, -1, -1):
                if alt != default:
                    pending.append(prefix + [_default(t) for t in trail[len(prefix) : pos]] + [alt])
    return runs


def _default(entry: tuple[int, int | None, int]) -> int:
    return 0 if entry[1] is None else entry[1]


def random_schedule(gens: Sequence, rng: random.Random) -> list[Any]:
    return run_schedule(gens, lambda n, last: rng.randrange(n))


# recorded histories on the core list


@dataclass
class Trial:
    seed: int
    history: History
    initial: list
    lst: LockFreeList
    workers: int
    ops: int = 0
    results: list = field(default_factory=list)


def canon(lst: LockFreeList, ref: ItemRef) -> Any:
    node = lst.arena.get(ref)
    if node.key is HEAD:
        return "Head"
    if node.key is TAIL:
        return "Tail"
    return (node.sid, node.ts)


def _worker(lst: LockFreeList, hist: History, name: str, plan: list[str], pool: list[ItemRef], rng: random.Random):
    for op in plan:
        if op == "insert_after":
            prev = rng.choice([lst.head()] + pool)
            key = rng.randrange(10)
            oid = hist.invoke(0, name, op, (canon(lst, prev), key))
            try:
                ref = yield from lst.insert_after_steps(prev, key)
            except NodeNotFound:
                hist.respond(oid, 0, ("not_found",))
            else:
                pool.append(ref)
                hist.respond(oid, 0, ("ok", canon(lst, ref)))
        elif op == "delete":
            if not pool:
                continue
            ref = rng.choice(pool)
            oid = hist.invoke(0, name, op, (canon(lst, ref),))
            ok = yield from lst.delete_steps(ref)
            hist.respond(oid, 0, ok)
        elif op == "next":
            prev = rng.choice([lst.head()] + pool)
            oid = hist.invoke(0, name, op, (canon(lst, prev),))
            ref = yield from lst.next_steps(prev)
            hist.respond(oid, 0, canon(lst, ref))
            if lst.arena.get(ref).key is not TAIL and ref not in pool:
                pool.append(ref)
        else:
            raise ValueError(op)
        yield


def random_trial(
    seed: int,
    max_workers: int = 4,
    max_ops: int = 8,
    preload: int = 2,
    mix: Sequence[str] = ("insert_after", "delete", "next"),
    factory: Callable[..., LockFreeList] = LockFreeList.from_keys,
) -> Trial:
    """One seeded concurrent history of at most ``max_ops`` operations.

    ``factory(keys)`` builds the list under test (checker meta-tests pass
    deliberately broken lists here).
    """
    rng = random.Random(seed)
    lst = factory(range(100, 100 + rng.randint(0, preload)))
    initial_refs = lst.refs()
    initial = [canon(lst, r) for r in initial_refs]
    hist = History(preload=[(canon(lst, r), lst.arena.get(r).key) for r in initial_refs])
    n_workers = rng.randint(2, max_workers)
    total = rng.randint(n_workers, max_ops)
    plans: list[list[str]] = [[] for _ in range(n_workers)]
    for i in range(total):
        plans[i % n_workers].append(rng.choice(list(mix)))
    gens = [
        _worker(lst, hist, f"w{i}", plan, list(initial_refs), random.Random(rng.random()))
        for i, plan in enumerate(plans)
    ]
    random_schedule(gens, rng)
    return Trial(seed, hist, initial, lst, n_workers, total)


def random_histories(seeds: Iterable[int], **kw) -> Iterable[Trial]:
    for s in seeds:
        yield random_trial(s, **kw)


# native threads


class _LockedHistory:
    """Serialises event recording so invoke/respond order matches real time."""

    def __init__(self, history: History) -> None:
        self._h = history
        self._lock = threading.Lock()

    def invoke(self, *args) -> int:
        with self._lock:
            return self._h.invoke(*args)

    def respond(self, *args) -> None:
        with self._lock:
            self._h.respond(*args)


def thread_trial(seed: int, max_workers: int = 4, max_ops: int = 8, preload: int = 2) -> Trial:
    """Like :func:`random_trial`, but each worker is a real OS thread.

    The seed fixes the plans, not the interleaving, so histories vary
    from run to run; every one of them must still be linearizable.
    """
    rng = random.Random(seed)
    lst = LockFreeList.from_keys(range(100, 100 + rng.randint(0, preload)))
    initial_refs = lst.refs()
    hist = History(preload=[(canon(lst, r), lst.arena.get(r).key) for r in initial_refs])
    locked = _LockedHistory(hist)
    n_workers = rng.randint(2, max_workers)
    total = rng.randint(n_workers, max_ops)
    plans: list[list[str]] = [[] for _ in range(n_workers)]
    for i in range(total):
        plans[i % n_workers].append(rng.choice(["insert_after", "delete", "next"]))
    errors: list[BaseException] = []
    start = threading.Barrier(n_workers)

    def body(gen) -> None:
        try:
            start.wait()
            for _ in gen:
                pass
        except BaseException as exc:  # reported to the caller
            errors.append(exc)

    gens = [
        _worker(lst, locked, f"w{i}", plan, list(initial_refs), random.Random(rng.random()))
        for i, plan in enumerate(plans)
    ]
    old = sys.getswitchinterval()
    sys.setswitchinterval(1e-6)  # switch threads as often as the interpreter allows
    try:
        threads = [threading.Thread(target=body, args=(g,)) for g in gens]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    finally:
        sys.setswitchinterval(old)
    if errors:
        raise errors[0]
    return Trial(seed, hist, [canon(lst, r) for r in initial_refs], lst, n_workers, total)
