"""The quiescent counter identity startCount - endCount = offset."""

from __future__ import annotations

from .linearizability import Verdict


def counter_gaps(server) -> list[tuple]:
    """(subhead, start - end - offset) for every active sublist of ``server``."""
    out = []
    for entry in server.registry.values():
        start, end = entry.counters.start.get(), entry.counters.end.get()
        if start < 0:
            continue  # retired by a Move
        out.append((entry.subhead, start - end - entry.offset))
    return out


def check_counter_invariant(server) -> Verdict:
    gaps = counter_gaps(server)
    bad = [(sh, g) for sh, g in gaps if g != 0]
    if bad:
        return Verdict(False, None, f"counter identity broken on {bad}", len(gaps))
    return Verdict(True, None, "ok", len(gaps))
