"""Single-word atomics, shared counters and RDCSS built from CAS.

Every mutating primitive is guarded by a per-cell lock standing in for a
hardware CAS instruction, so the same code is safe under real threads and
trivially atomic under the cooperative scheduler.

Algorithms elsewhere in the package are written as generators: a bare
``yield`` marks a point where the scheduler may preempt the running task.
:func:`rdcss` follows that convention so that other tasks can observe (and
help complete) an installed descriptor.
"""

from __future__ import annotations

import threading
from collections.abc import Callable, Generator
from typing import Any

NEG_INF = -(2**62)

Steps = Generator[Any, Any, Any]


class _Descriptor:
    """In-flight RDCSS operation parked in a data cell."""

    __slots__ = (
        "control",
        "expected_control",
        "data",
        "expected_data",
        "new_data",
        "outcome",
        "on_commit",
    )

    def __init__(self, control, expected_control, data, expected_data, new_data, on_commit):
        self.control = control
        self.expected_control = expected_control
        self.data = data
        self.expected_data = expected_data
        self.new_data = new_data
        self.outcome: bool | None = None
        self.on_commit = on_commit

    def __repr__(self) -> str:
        return f"<rdcss {self.expected_data!r}->{self.new_data!r} outcome={self.outcome}>"


class AtomicWord:
    """A cell holding one immutable value, mutated only by CAS.

    Values are compared with ``==``. Reads never return an RDCSS
    descriptor: a reader that finds one helps it finish first.
    """

    __slots__ = ("_value", "_lock")

    def __init__(self, value: Any = None) -> None:
        if isinstance(value, _Descriptor):
            raise TypeError("descriptor cannot be stored directly")
        self._value = value
        self._lock = threading.Lock()

    def __repr__(self) -> str:
        return f"AtomicWord({self.load()!r})"

    def _raw_cas(self, expected: Any, new: Any) -> tuple[bool, Any]:
        with self._lock:
            cur = self._value
            if cur is expected or (
                not isinstance(cur, _Descriptor)
                and not isinstance(expected, _Descriptor)
                and cur == expected
            ):
                self._value = new
                return True, cur
            return False, cur

    def _resolve(self, d: _Descriptor, value: Any, outcome: bool) -> bool:
        with self._lock:
            if self._value is not d:
                return False
            self._value = value
            d.outcome = outcome
            if outcome and d.on_commit is not None:
                d.on_commit()
            return True

    def load(self) -> Any:
        while True:
            cur = self._value
            if not isinstance(cur, _Descriptor):
                return cur
            _complete(cur)

    def cas(self, expected: Any, new: Any) -> bool:
        if isinstance(new, _Descriptor):
            raise TypeError("descriptor cannot be stored directly")
        while True:
            ok, cur = self._raw_cas(expected, new)
            if ok:
                return True
            if isinstance(cur, _Descriptor):
                _complete(cur)
                continue
            return False

    def swap_in(self, new: Any) -> Any:
        """Replace whatever value is present (CAS loop); returns the old value."""
        while True:
            cur = self.load()
            if self.cas(cur, new):
                return cur


def _complete(d: _Descriptor) -> None:
    if d.control.load() == d.expected_control:
        d.data._resolve(d, d.new_data, True)
    else:
        d.data._resolve(d, d.expected_data, False)


def rdcss(
    control: AtomicWord,
    expected_control: Any,
    data: AtomicWord,
    expected_data: Any,
    new_data: Any,
    on_commit: Callable[[], None] | None = None,
) -> Steps:
    """Restricted double-compare single-swap.

    Sets ``data`` to ``new_data`` iff ``control == expected_control`` and
    ``data == expected_data`` at one instant; returns whether it did.
    ``on_commit`` runs atomically with the successful swap.
    """
    if control is data:
        raise ValueError("control and data cells must differ")
    d = _Descriptor(control, expected_control, data, expected_data, new_data, on_commit)
    while True:
        ok, cur = data._raw_cas(expected_data, d)
        if ok:
            break
        if isinstance(cur, _Descriptor):
            _complete(cur)
            yield
            continue
        return False
    yield
    _complete(d)
    # a helper may have resolved it between our install and our own complete
    return bool(d.outcome)


class SharedCounter:
    """Signed 64-bit style counter on top of an :class:`AtomicWord`."""

    __slots__ = ("_cell", "name")

    def __init__(self, value: int = 0, name: str = "") -> None:
        self._cell = AtomicWord(value)
        self.name = name

    def __repr__(self) -> str:
        return f"SharedCounter({self.name or id(self):}={self.get()})"

    def get(self) -> int:
        return self._cell.load()

    def increment(self) -> int:
        while True:
            cur = self._cell.load()
            if self._cell.cas(cur, cur + 1):
                return cur + 1

    def cas(self, expected: int, new: int) -> bool:
        return self._cell.cas(expected, new)


def run(steps: Steps) -> Any:
    """Drive a step generator to completion without interleaving."""
    try:
        while True:
            effect = next(steps)
            if effect is not None:
                raise RuntimeError(f"effect {effect!r} needs a scheduler")
    except StopIteration as stop:
        return stop.value
