"""Sequential ground truth for sublist reconstruction."""

from __future__ import annotations

from typing import Any, Iterable, Sequence


def replay_oracle(base: Sequence[tuple], events: Iterable[tuple]) -> list[tuple[Any, int, int, bool]]:
    """Apply source-order updates to a base sequence.

    ``base`` holds ``(ident, key, deleted)`` entries, where ``ident`` is
    ``(sid, ts)`` for data nodes and any other hashable for sentinels.
    ``events`` are ``("insert", prev_ident, ident, key)`` or
    ``("delete", ident)``; events that do not touch this sequence are
    ignored. Returns ``(key, ts, sid, deleted)`` for every data node.
    """
    seq: list[list] = [[ident, key, bool(deleted)] for ident, key, deleted in base]
    index = {e[0]: e for e in seq}
    for ev in events:
        if ev[0] == "insert":
            _, prev, ident, key = ev
            if prev not in index:
                continue
            pos = next(i for i, e in enumerate(seq) if e[0] == prev)
            entry = [ident, key, False]
            seq.insert(pos + 1, entry)
            index[ident] = entry
        elif ev[0] == "delete":
            entry = index.get(ev[1])
            if entry is not None:
                entry[2] = True
        else:
            raise ValueError(f"unknown event {ev!r}")
    out = []
    for ident, key, deleted in seq:
        if isinstance(ident, tuple) and len(ident) == 2 and all(isinstance(v, int) for v in ident):
            sid, ts = ident
            out.append((key, ts, sid, deleted))
    return out
