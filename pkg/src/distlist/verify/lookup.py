"""The Lookup property: instances alive for a whole Lookup must be returned."""

from __future__ import annotations

from .history import History
from .linearizability import Verdict


def check_lookup_property(history: History) -> Verdict:
    ops = history.ops()
    # identity -> (key, sequence number after which it certainly exists)
    born: dict = {ident: (key, -1) for ident, key in history.preload}
    for o in ops:
        if o.name == "insert_after" and o.complete and isinstance(o.result, tuple) and o.result[0] == "ok":
            born[o.result[1]] = (o.args[1], o.respond_seq)
    doomed: dict = {}
    for o in ops:
        if o.name == "delete":
            (ident,) = o.args
            doomed[ident] = min(doomed.get(ident, float("inf")), o.invoke_seq)
    by_key: dict = {}
    for ident, (key, seq) in born.items():
        by_key.setdefault(key, []).append((ident, seq))
    checked = 0
    for o in ops:
        if o.name != "lookup" or not o.complete or not isinstance(o.result, tuple):
            continue
        (key,) = o.args
        found = set(o.result)
        for ident, seq in by_key.get(key, ()):
            if seq < o.invoke_seq and doomed.get(ident, float("inf")) > o.respond_seq:
                checked += 1
                if ident not in found:
                    return Verdict(
                        False, None, f"lookup op {o.op_id} for {key!r} missed live instance {ident}", checked
                    )
    return Verdict(True, None, "lookup property holds", checked)
