"""Click records, run summaries and their CSV / binary serializations.

Binary click-stream layout (all little-endian, no padding)::

    header   : magic b"SPDC" | uint16 version (=1) | uint16 n_species
    record   : uint16 payload_length
               float64 timestamp_ns
               int64   gate_index        (-1 in free-running mode)
               uint8   cause             (0 photon, 1 dark, 2 afterpulse, 3 charge_persistence)
               uint8   gate_class        (0 AB, 1 CD, 2 none)
               uint32  trapped[n_species]

``payload_length`` is ``18 + 4 * n_species`` and is repeated on every
record so that readers can skip records without knowing the header.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterator

import numpy as np


class Cause(IntEnum):
    PHOTON = 0
    DARK = 1
    AFTERPULSE = 2
    CHARGE_PERSISTENCE = 3

    @property
    def label(self) -> str:
        return self.name.lower()


class GateClass(IntEnum):
    AB = 0
    CD = 1
    NONE = 2

    @property
    def label(self) -> str:
        return "none" if self is GateClass.NONE else self.name


CSV_COLUMNS = ("timestamp_ns", "gate_index", "cause", "gate_class")
BINARY_MAGIC = b"SPDC"
BINARY_VERSION = 1
_HEADER = struct.Struct("<4sHH")


@dataclass(frozen=True)
class ClickRecord:
    timestamp: float
    gate_index: int
    cause: Cause
    gate_class: GateClass
    trapped_counts_filled: tuple


def _record_dtype(n_species: int) -> np.dtype:
    fields = [("length", "<u2"), ("timestamp", "<f8"), ("gate_index", "<i8"),
              ("cause", "u1"), ("gate_class", "u1")]
    if n_species:
        fields.append(("filled", "<u4", (n_species,)))
    return np.dtype(fields)


class ClickStream:
    """Column-oriented click stream; iterating yields :class:`ClickRecord` in time order."""

    def __init__(self, timestamp, gate_index, cause, gate_class, filled):
        self.timestamp = np.asarray(timestamp, dtype=float)
        self.gate_index = np.asarray(gate_index, dtype=np.int64)
        self.cause = np.asarray(cause, dtype=np.uint8)
        self.gate_class = np.asarray(gate_class, dtype=np.uint8)
        filled = np.asarray(filled, dtype=np.uint32)
        if filled.ndim != 2:
            filled = filled.reshape(len(self.timestamp), -1) if filled.size else \
                np.zeros((len(self.timestamp), 0), dtype=np.uint32)
        self.filled = filled

    @property
    def n_species(self) -> int:
        return self.filled.shape[1]

    def __len__(self):
        return len(self.timestamp)

    def __iter__(self) -> Iterator[ClickRecord]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i) -> ClickRecord:
        return ClickRecord(float(self.timestamp[i]), int(self.gate_index[i]), Cause(self.cause[i]),
                           GateClass(self.gate_class[i]), tuple(int(x) for x in self.filled[i]))

    def __eq__(self, other):
        if not isinstance(other, ClickStream):
            return NotImplemented
        return (np.array_equal(self.timestamp, other.timestamp)
                and np.array_equal(self.gate_index, other.gate_index)
                and np.array_equal(self.cause, other.cause)
                and np.array_equal(self.gate_class, other.gate_class)
                and np.array_equal(self.filled, other.filled))

    def select(self, cause: Cause | None = None, gate_class: GateClass | None = None) -> np.ndarray:
        mask = np.ones(len(self), dtype=bool)
        if cause is not None:
            mask &= self.cause == cause
        if gate_class is not None:
            mask &= self.gate_class == gate_class
        return mask

    def to_bytes(self) -> bytes:
        rec = np.zeros(len(self), dtype=_record_dtype(self.n_species))
        rec["length"] = rec.dtype.itemsize - 2
        rec["timestamp"] = self.timestamp
        rec["gate_index"] = self.gate_index
        rec["cause"] = self.cause
        rec["gate_class"] = self.gate_class
        if self.n_species:
            rec["filled"] = self.filled
        return _HEADER.pack(BINARY_MAGIC, BINARY_VERSION, self.n_species) + rec.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ClickStream":
        magic, version, n_species = _HEADER.unpack_from(data, 0)
        if magic != BINARY_MAGIC or version != BINARY_VERSION:
            raise ValueError("not a version-1 click stream")
        dtype = _record_dtype(n_species)
        body = data[_HEADER.size:]
        if len(body) % dtype.itemsize:
            raise ValueError("truncated click stream")
        rec = np.frombuffer(body, dtype=dtype)
        if np.any(rec["length"] != dtype.itemsize - 2):
            raise ValueError("record length prefix does not match header")
        filled = rec["filled"] if n_species else np.zeros((len(rec), 0))
        return cls(rec["timestamp"], rec["gate_index"], rec["cause"], rec["gate_class"], filled)

    def write_binary(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def read_binary(cls, path) -> "ClickStream":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for t, g, c, k in zip(self.timestamp, self.gate_index, self.cause, self.gate_class):
                writer.writerow((repr(float(t)), int(g), Cause(c).label, GateClass(k).label))

    @classmethod
    def read_csv(cls, path) -> "ClickStream":
        causes = {c.label: c for c in Cause}
        classes = {g.label: g for g in GateClass}
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([float(r["timestamp_ns"]) for r in rows],
                   [int(r["gate_index"]) for r in rows],
                   [causes[r["cause"]] for r in rows],
                   [classes[r["gate_class"]] for r in rows],
                   np.zeros((len(rows), 0)))


@dataclass
class RunSummary:
    """Aggregated counts of one simulated run (or a merged illuminated + dark pair).

    Rates ``C_DC``, ``C_AP``, ``C_DE`` are in Hz; ``None`` when the run does
    not measure them.
    """

    mode: str
    seed: int
    n_gates: int = 0
    duration_ns: float = 0.0
    counts: dict = field(default_factory=dict)
    n_armed: int = 0
    n_triggered: int = 0
    n_cd_gates: int = 0
    n_gates_dark: int = 0
    C_DC: float | None = None
    C_AP: float | None = None
    C_DE: float | None = None
    carriers_created: int = 0
    carriers_released: int = 0
    carriers_remaining: int = 0

    def count(self, gate_class: GateClass | None = None, cause: Cause | None = None) -> int:
        return sum(n for (g, c), n in self.counts.items()
                   if (gate_class is None or g == gate_class.label)
                   and (cause is None or c == cause.label))

    @property
    def total_clicks(self) -> int:
        return self.count()

    @property
    def click_rate(self) -> float:
        """All clicks per second of simulated time."""
        return self.total_clicks / (self.duration_ns * 1e-9) if self.duration_ns else 0.0

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "counts"}
        out["counts"] = {f"{g}/{c}": n for (g, c), n in sorted(self.counts.items())}
        return out


def tally(stream: ClickStream) -> dict:
    """Counts keyed by ``(gate_class_label, cause_label)``."""
    out = {}
    for g in GateClass:
        for c in Cause:
            n = int(np.count_nonzero((stream.gate_class == g) & (stream.cause == c)))
            if n:
                out[(g.label, c.label)] = n
    return out
