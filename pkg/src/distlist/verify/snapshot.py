"""Deterministic dumps of sublist contents."""

from __future__ import annotations

from ..core import Busy, ItemRef


def snapshot_sequence(server, subhead: ItemRef, strict: bool = False) -> list[tuple]:
    """(key, ts, sid, deleted) for each data node from SubHead to SubTail."""
    if strict and server.cluster.splitting is not None:
        raise Busy("split in progress")
    return server.sequence(subhead)
