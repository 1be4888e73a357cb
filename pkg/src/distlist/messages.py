"""Wire messages exchanged between clients and servers.

Every message is an immutable dataclass. Replies to a request travel as
:class:`Response` envelopes that carry the id of the request they answer;
acknowledgements of Move/Switch/DeleteMovedSublist are plain responses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .core import Item, ItemRef


@dataclass(frozen=True)
class ClientInfo:
    """Where the terminal response of a (possibly delegated) request goes."""

    endpoint: str
    req: int


@dataclass(frozen=True)
class Response:
    status: str
    value: Any = None
    visits: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "ok"


# client requests


@dataclass(frozen=True)
class ClientLookup:
    key: Any


@dataclass(frozen=True)
class ClientInsertAfter:
    prev: ItemRef
    key: Any


@dataclass(frozen=True)
class ClientDelete:
    ref: ItemRef


@dataclass(frozen=True)
class ClientNext:
    prev: ItemRef


@dataclass(frozen=True)
class ClientGetItem:
    ref: ItemRef


@dataclass(frozen=True)
class ClientSortedOp:
    op: str  # insert | search | delete
    key: Any
    op_id: str


# delegations


@dataclass(frozen=True)
class DelegateLookup:
    subhead: ItemRef
    key: Any


@dataclass(frozen=True)
class DelegateInsertAfter:
    prev: ItemRef
    key: Any
    client: ClientInfo


@dataclass(frozen=True)
class DelegateDelete:
    ref: ItemRef
    client: ClientInfo


@dataclass(frozen=True)
class DelegateNext:
    prev: ItemRef
    client: ClientInfo
    inclusive: bool = False  # prev itself qualifies if it is live


@dataclass(frozen=True)
class DelegateGetItem:
    ref: ItemRef
    client: ClientInfo


@dataclass(frozen=True)
class DelegateSortedOp:
    subhead: ItemRef
    op: str
    key: Any
    op_id: str
    client: ClientInfo


# transformation traffic


@dataclass(frozen=True)
class Move:
    session: str
    prev_remote: ItemRef | None
    items: tuple[Item, ...]


@dataclass(frozen=True)
class DeleteMovedSublist:
    session: str
    remote_subhead: ItemRef


@dataclass(frozen=True)
class Switch:
    session: str
    remote_subhead: ItemRef
    prev_subtail: ItemRef
    key_range: tuple[Any, Any] | None
    results: tuple = ()  # completed sorted-op results (op_id, state), for dedupe on the new owner


@dataclass(frozen=True)
class RepointSubtail:
    subtail: ItemRef
    new_subhead: ItemRef


@dataclass(frozen=True)
class ReplicateInsertAfter:
    session: str
    prev_item: Item
    item: Item
    hint: ItemRef
    local_ref: ItemRef
    origin: ClientInfo | None


@dataclass(frozen=True)
class ReplicateDelete:
    session: str
    item: Item
    hint: ItemRef
    local_ref: ItemRef
    compensation: bool
    origin: ClientInfo | None


@dataclass(frozen=True)
class InsertReplay:
    local_ref: ItemRef
    remote_ref: ItemRef


@dataclass(frozen=True)
class DeleteReplay:
    local_ref: ItemRef
    compensation: bool


CLIENT_UPDATES = (ClientInsertAfter, ClientDelete)
