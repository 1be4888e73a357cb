"""Invocation/response history recorded by clients."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable


@dataclass
class Event:
    tick: int
    worker: str
    kind: str  # invoke | respond
    op: str
    args: Any
    result: Any
    op_id: int


@dataclass
class Op:
    op_id: int
    worker: str
    name: str
    args: Any
    result: Any
    invoke_tick: int
    respond_tick: int | None
    invoke_seq: int
    respond_seq: float  # inf while pending

    @property
    def complete(self) -> bool:
        return self.respond_tick is not None


def _tuplify(x: Any) -> Any:
    if isinstance(x, list):
        return tuple(_tuplify(v) for v in x)
    return x


@dataclass
class History:
    events: list[Event] = field(default_factory=list)
    # instances present before the run: (identity, key)
    preload: list[tuple[Any, Any]] = field(default_factory=list)
    _next_id: int = 0

    def invoke(self, tick: int, worker: str, op: str, args: Any) -> int:
        op_id = self._next_id
        self._next_id += 1
        self.events.append(Event(tick, worker, "invoke", op, args, None, op_id))
        return op_id

    def respond(self, op_id: int, tick: int, result: Any) -> None:
        inv = self._invocation(op_id)
        self.events.append(Event(tick, inv.worker, "respond", inv.op, inv.args, result, op_id))

    def _invocation(self, op_id: int) -> Event:
        for e in reversed(self.events):
            if e.op_id == op_id and e.kind == "invoke":
                return e
        raise KeyError(op_id)

    def validate(self) -> None:
        """Every response must match exactly one earlier invocation."""
        open_ids: set[int] = set()
        seen: set[int] = set()
        for e in self.events:
            if e.kind == "invoke":
                if e.op_id in seen:
                    raise ValueError(f"duplicate invocation {e.op_id}")
                seen.add(e.op_id)
                open_ids.add(e.op_id)
            elif e.kind == "respond":
                if e.op_id not in open_ids:
                    raise ValueError(f"response without open invocation {e.op_id}")
                open_ids.discard(e.op_id)
            else:
                raise ValueError(f"bad event kind {e.kind!r}")

    def ops(self, names: Iterable[str] | None = None) -> list[Op]:
        wanted = None if names is None else set(names)
        by_id: dict[int, Op] = {}
        for seq, e in enumerate(self.events):
            if wanted is not None and e.op not in wanted:
                continue
            if e.kind == "invoke":
                by_id[e.op_id] = Op(e.op_id, e.worker, e.op, e.args, None, e.tick, None, seq, float("inf"))
            else:
                op = by_id[e.op_id]
                op.result = e.result
                op.respond_tick = e.tick
                op.respond_seq = seq
        return sorted(by_id.values(), key=lambda o: o.invoke_seq)

    def to_jsonl(self) -> str:
        lines = [json.dumps({"preload": self.preload})]
        lines += [json.dumps(asdict(e)) for e in self.events]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "History":
        h = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if "preload" in rec:
                h.preload = [tuple(_tuplify(p)) for p in rec["preload"]]
                continue
            rec["args"] = _tuplify(rec["args"])
            rec["result"] = _tuplify(rec["result"])
            h.events.append(Event(**rec))
            h._next_id = max(h._next_id, rec["op_id"] + 1)
        return h
