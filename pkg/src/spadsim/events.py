"""Pending-event queue and per-process random streams for the simulators."""

from __future__ import annotations

import heapq
import itertools
from enum import IntEnum

import numpy as np


class EventKind(IntEnum):
    """Event kinds; the integer value is the tie-break priority at equal times."""

    GATE_CLOSE = 0
    GATE_OPEN = 1
    RELEASE = 2
    PHOTON = 3
    DARK = 4
    CHARGE_PERSISTENCE = 5


class EventQueue:
    """Time-ordered queue with total ordering: time, then kind priority, then insertion order."""

    def __init__(self):
        self._heap = []
        self._counter = itertools.count()

    def push(self, time: float, kind: EventKind, payload=None):
        heapq.heappush(self._heap, (time, int(kind), next(self._counter), payload))

    def pop(self):
        time, kind, _, payload = heapq.heappop(self._heap)
        return time, EventKind(kind), payload

    def peek_time(self) -> float:
        return self._heap[0][0] if self._heap else np.inf

    def count(self, kind: EventKind) -> int:
        return sum(1 for entry in self._heap if entry[1] == kind)

    def __len__(self):
        return len(self._heap)

    def __bool__(self):
        return bool(self._heap)


# Fixed ids: adding a stream must never renumber existing ones.
STREAM_IDS = {
    "photons": 0,
    "darks": 1,
    "traps": 2,
    "charge_persistence": 3,
    "avalanche": 4,
    "jitter": 5,
}


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one physical process derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(STREAM_IDS[name],)))


def child_seeds(seed: int, n: int) -> list[int]:
    """Deterministic integer seeds for ``n`` independent sub-runs."""
    return [int(s.generate_state(1, np.uint64)[0] >> np.uint64(1))
            for s in np.random.SeedSequence(int(seed)).spawn(n)]
