"""Brute-force linearizability checking (backtracking search with memoisation).

Histories use canonical node identities: ``"Head"``, ``"Tail"`` or an
``(sid, ts)`` pair. Supported operations and results:

* ``insert_after(prev, key)`` -> ``("ok", ident)`` or ``("not_found",)``
* ``delete(ident)`` -> ``True`` / ``False``
* ``next(prev)`` -> ident or ``"Tail"``

Any other result string (``"error"``, ``"unknown_ref"``...) marks an
operation that had no effect.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

from .history import History, Op

UPDATE_OPS = ("insert_after", "delete", "next")


class SizeLimit(Exception):
    """History too large for the exhaustive search."""


@dataclass
class Verdict:
    ok: bool
    witness: list[int] | None = None
    message: str = ""
    checked: int = 0

    def __bool__(self) -> bool:
        return self.ok


State = tuple  # of (ident, deleted) in list order


class ListModel:
    """Pure sequential list; Head is implicit at position -1."""

    @staticmethod
    def _index(state: State, ident: Any) -> int | None:
        if ident == "Head":
            return -1
        for i, (x, _) in enumerate(state):
            if x == ident:
                return i
        return None

    def apply(self, state: State, op: Op) -> State | None:
        """New state if ``op`` with its observed result is legal here, else None."""
        name, args, result = op.name, op.args, op.result
        if not op.complete:
            return self._apply_pending(state, op)
        if isinstance(result, str) and result not in ("Tail",) and name != "next":
            return state
        if name == "insert_after":
            prev, _key = args
            i = self._index(state, prev)
            if i is None:
                return None
            deleted = i >= 0 and state[i][1]
            if result[0] == "not_found":
                return state if deleted else None
            if deleted:
                return None
            new = result[1]
            if self._index(state, new) is not None:
                return None
            return state[: i + 1] + ((new, False),) + state[i + 1 :]
        if name == "delete":
            (target,) = args
            i = self._index(state, target)
            if i is None or i < 0:
                return None
            if state[i][1]:
                return state if result is False else None
            if result is not True:
                return None
            return state[:i] + ((target, True),) + state[i + 1 :]
        if name == "next":
            (prev,) = args
            i = self._index(state, prev)
            if i is None:
                return None
            if isinstance(result, str) and result != "Tail":
                return state
            for x, d in state[i + 1 :]:
                if not d:
                    return state if result == x else None
            return state if result == "Tail" else None
        raise ValueError(f"unsupported op {name!r}")

    def _apply_pending(self, state: State, op: Op) -> State:
        """Effect of an unanswered operation; any result would have been legal.

        A pending insert's node identity was never reported, so nobody can
        refer to it and it is modelled as having no visible effect.
        """
        if op.name == "delete":
            i = self._index(state, op.args[0])
            if i is not None and i >= 0 and not state[i][1]:
                return state[:i] + ((op.args[0], True),) + state[i + 1 :]
        return state


def check_linearizable(
    history: History | Sequence[Op],
    initial: Sequence[Any] = (),
    max_ops: int | None = 32,
    model: ListModel | None = None,
) -> Verdict:
    """Search for a sequential witness respecting real-time order.

    ``initial`` lists the identities present (undeleted) before the
    history begins. Pending operations may be linearised or dropped.
    """
    ops = history.ops(UPDATE_OPS) if isinstance(history, History) else list(history)
    ops = [o for o in ops if o.name in UPDATE_OPS]
    if max_ops is not None and len(ops) > max_ops:
        raise SizeLimit(f"{len(ops)} operations exceed the limit of {max_ops}")
    model = model or ListModel()
    ops.sort(key=lambda o: o.invoke_seq)
    n = len(ops)
    complete_mask = 0
    for i, o in enumerate(ops):
        if o.complete:
            complete_mask |= 1 << i
    start: State = tuple((x, False) for x in initial)
    seen: set = set()
    # iterative DFS; each frame: (done mask, state, witness, candidate iterator)
    stack = [(0, start, [], None)]
    explored = 0
    while stack:
        done, state, witness, cands = stack[-1]
        if done & complete_mask == complete_mask:
            return Verdict(True, witness, "linearizable", explored)
        if cands is None:
            horizon = min(
                (ops[i].respond_seq for i in range(n) if not done >> i & 1), default=float("inf")
            )
            cands = iter([i for i in range(n) if not done >> i & 1 and ops[i].invoke_seq < horizon])
            stack[-1] = (done, state, witness, cands)
        advanced = False
        for i in cands:
            new_state = model.apply(state, ops[i])
            if new_state is None:
                continue
            key = (done | 1 << i, new_state)
            if key in seen:
                continue
            seen.add(key)
            explored += 1
            stack.append((done | 1 << i, new_state, witness + [ops[i].op_id], None))
            advanced = True
            break
        if not advanced:
            stack.pop()
    return Verdict(False, None, "no linearization found", explored)
