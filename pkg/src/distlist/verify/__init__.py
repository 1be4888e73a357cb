"""History recording and executable correctness checks."""

from .counters import check_counter_invariant, counter_gaps
from .history import Event, History, Op
from .linearizability import ListModel, SizeLimit, Verdict, check_linearizable
from .lookup import check_lookup_property
from .oracle import replay_oracle
from .snapshot import snapshot_sequence

__all__ = [
    "Event",
    "History",
    "ListModel",
    "Op",
    "SizeLimit",
    "Verdict",
    "check_counter_invariant",
    "check_linearizable",
    "check_lookup_property",
    "counter_gaps",
    "replay_oracle",
    "snapshot_sequence",
]
