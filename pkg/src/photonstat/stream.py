"""Photon records, the PSTR binary format, CSV import and time windowing.

A :class:`PhotonStream` stores its records column-wise (channel, macrotime,
microtime) in read-only numpy arrays. The absolute arrival time of a record is

    macrotime * macrotime_resolution + microtime * microtime_resolution

and records are kept sorted by it.
"""

from __future__ import annotations

import csv
import enum
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import (
    InvalidWindow,
    IoFailure,
    MalformedHeader,
    MalformedRecord,
    OutOfOrderRecord,
    ParseError,
    StreamFormatError,
    TruncatedFile,
)

CHANNEL_A = 0
CHANNEL_B = 1
MARKER_CHANNEL = 255

MAGIC = b"PSTR"
VERSION = 1
HEADER_SIZE = 64
RECORD_SIZE = 16

_HEADER_STRUCT = struct.Struct("<4sHHddddQB15s")
assert _HEADER_STRUCT.size == HEADER_SIZE

RECORD_DTYPE = np.dtype(
    [
        ("channel", "u1"),
        ("flags", "u1"),
        ("microtime", "<u2"),
        ("reserved", "<u4"),
        ("macrotime", "<u8"),
    ]
)
assert RECORD_DTYPE.itemsize == RECORD_SIZE


class Origin(enum.IntEnum):
    SIMULATED = 0
    IMPORTED = 1


class PhotonRecord(NamedTuple):
    channel: int
    macrotime: int
    microtime: int


@dataclass(frozen=True)
class StreamHeader:
    """Acquisition metadata shared by every record of a stream.

    Attributes:
        sync_rate: Excitation repetition rate in Hz.
        microtime_resolution: TCSPC bin width in seconds.
        macrotime_resolution: Duration of one macrotime tick in seconds.
        duration: Total acquisition time in seconds.
        channel_count: Number of detector channels (marker channel excluded).
        origin: Whether the stream was simulated or imported.
        provenance: Free-form note. Not persisted by the PSTR format and
            ignored by equality.
    """

    sync_rate: float
    microtime_resolution: float
    macrotime_resolution: float
    duration: float
    channel_count: int = 2
    origin: Origin = Origin.SIMULATED
    provenance: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "origin", Origin(self.origin))
        for name in ("sync_rate", "microtime_resolution", "macrotime_resolution"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")
        if not (math.isfinite(self.duration) and self.duration >= 0):
            raise ValueError(f"duration must be non-negative, got {self.duration}")
        if self.microtime_resolution > 1.0 / self.sync_rate:
            raise ValueError("microtime_resolution exceeds the sync period")
        if not 0 < self.channel_count < MARKER_CHANNEL:
            raise ValueError(f"channel_count out of range: {self.channel_count}")

    @property
    def sync_period(self) -> float:
        return 1.0 / self.sync_rate

    @property
    def max_microtime(self) -> int:
        """Largest microtime whose arrival still falls inside one sync period."""
        ratio = self.sync_period / self.microtime_resolution
        # microtimes are stored as u16
        n = 0xFFFF if ratio > 0xFFFF else math.ceil(ratio) - 1
        while n > 0 and n * self.microtime_resolution >= self.sync_period:
            n -= 1
        return n


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


class PhotonStream:
    """Immutable, time-ordered sequence of photon records.

    Construction validates every invariant unless ``validate=False`` is passed
    by trusted internal code that has already done so.
    """

    __slots__ = ("header", "channel", "macrotime", "microtime", "_abs")

    def __init__(self, header, channel, macrotime, microtime, *, validate=True):
        self.header = header
        self.channel = _readonly(np.asarray(channel, dtype=np.uint8))
        self.macrotime = _readonly(np.asarray(macrotime, dtype=np.uint64))
        self.microtime = _readonly(np.asarray(microtime, dtype=np.uint16))
        if not (len(self.channel) == len(self.macrotime) == len(self.microtime)):
            raise MalformedRecord("record columns differ in length")
        self._abs = None
        if validate:
            validate_records(self)

    @classmethod
    def empty(cls, header: StreamHeader) -> "PhotonStream":
        return cls(header, [], [], [], validate=False)

    def __len__(self) -> int:
        return len(self.channel)

    def __iter__(self) -> Iterator[PhotonRecord]:
        for c, m, u in zip(self.channel.tolist(), self.macrotime.tolist(), self.microtime.tolist()):
            yield PhotonRecord(c, m, u)

    def __getitem__(self, i: int) -> PhotonRecord:
        return PhotonRecord(int(self.channel[i]), int(self.macrotime[i]), int(self.microtime[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PhotonStream):
            return NotImplemented
        return (
            self.header == other.header
            and np.array_equal(self.channel, other.channel)
            and np.array_equal(self.macrotime, other.macrotime)
            and np.array_equal(self.microtime, other.microtime)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"PhotonStream({len(self)} records, duration={self.header.duration:g} s)"

    def abs_times(self) -> np.ndarray:
        """Absolute arrival times in seconds (cached, read-only)."""
        if self._abs is None:
            h = self.header
            t = self.macrotime.astype(np.float64) * h.macrotime_resolution
            t += self.microtime.astype(np.float64) * h.microtime_resolution
            self._abs = _readonly(t)
        return self._abs

    def microtimes_s(self) -> np.ndarray:
        return self.microtime.astype(np.float64) * self.header.microtime_resolution

    def photon_mask(self) -> np.ndarray:
        """True for detector records, False for marker-channel records."""
        return self.channel != MARKER_CHANNEL

    def channel_times(self, channel: int) -> np.ndarray:
        return self.abs_times()[self.channel == channel]

    def take(self, mask_or_index, header: StreamHeader | None = None) -> "PhotonStream":
        """Subset of records (order preserved), skipping re-validation."""
        return PhotonStream(
            header or self.header,
            self.channel[mask_or_index],
            self.macrotime[mask_or_index],
            self.microtime[mask_or_index],
            validate=False,
        )


def validate_records(stream: PhotonStream) -> None:
    """Check record-level invariants, raising a typed error on the first violation."""
    h = stream.header
    n = len(stream)
    if n == 0:
        return
    ch = stream.channel
    bad = np.flatnonzero((ch >= h.channel_count) & (ch != MARKER_CHANNEL))
    if bad.size:
        i = int(bad[0])
        raise MalformedRecord(f"record {i}: channel {ch[i]} >= channel_count {h.channel_count}", i)
    bad = np.flatnonzero(stream.microtime > h.max_microtime)
    if bad.size:
        i = int(bad[0])
        raise MalformedRecord(f"record {i}: microtime {stream.microtime[i]} exceeds the sync period", i)

    t = stream.abs_times()
    dt = np.diff(t)
    back = np.flatnonzero(dt < 0)
    if back.size:
        raise OutOfOrderRecord(int(back[0]) + 1)
    tie = np.flatnonzero(dt == 0)
    if tie.size:
        # a tie group must not repeat a channel
        order = np.lexsort((np.arange(n), ch, t))
        same = (t[order][1:] == t[order][:-1]) & (ch[order][1:] == ch[order][:-1])
        dup = np.flatnonzero(same)
        if dup.size:
            i = int(max(order[dup[0]], order[dup[0] + 1]))
            raise OutOfOrderRecord(i, f"record {i} repeats an earlier record's time on channel {ch[i]}")


# -- PSTR binary format ------------------------------------------------------


def _pack_header(header: StreamHeader, count: int) -> bytes:
    return _HEADER_STRUCT.pack(
        MAGIC,
        VERSION,
        header.channel_count,
        header.sync_rate,
        header.microtime_resolution,
        header.macrotime_resolution,
        header.duration,
        count,
        int(header.origin),
        bytes(15),
    )


def encode_stream(stream: PhotonStream) -> bytes:
    recs = np.zeros(len(stream), dtype=RECORD_DTYPE)
    recs["channel"] = stream.channel
    recs["microtime"] = stream.microtime
    recs["macrotime"] = stream.macrotime
    return _pack_header(stream.header, len(stream)) + recs.tobytes()


def decode_stream(data: bytes) -> PhotonStream:
    """Parse a complete PSTR byte string into a validated stream."""
    if len(data) < HEADER_SIZE:
        if len(data) >= 4 and data[:4] != MAGIC:
            raise MalformedHeader("bad magic")
        raise TruncatedFile(f"file holds {len(data)} bytes, header needs {HEADER_SIZE}")
    magic, version, nch, sync, micro, macro, duration, count, origin, reserved = _HEADER_STRUCT.unpack_from(data)
    if magic != MAGIC:
        raise MalformedHeader(f"bad magic {magic!r}")
    if version != VERSION:
        raise MalformedHeader(f"unsupported version {version}")
    if reserved != bytes(15):
        raise MalformedHeader("reserved header bytes are not zero")
    if origin not in (0, 1):
        raise MalformedHeader(f"unknown origin code {origin}")
    try:
        header = StreamHeader(sync, micro, macro, duration, nch, Origin(origin))
    except ValueError as exc:
        raise MalformedHeader(str(exc)) from None

    body = len(data) - HEADER_SIZE
    need = count * RECORD_SIZE
    if body < need:
        raise TruncatedFile(f"header declares {count} records, file holds {body // RECORD_SIZE}")
    if body > need:
        raise MalformedHeader(f"{body - need} bytes beyond the declared {count} records")

    recs = np.frombuffer(data, dtype=RECORD_DTYPE, count=count, offset=HEADER_SIZE)
    bad = np.flatnonzero((recs["flags"] != 0) | (recs["reserved"] != 0))
    if bad.size:
        raise MalformedRecord(f"record {bad[0]}: reserved fields are not zero", int(bad[0]))
    return PhotonStream(header, recs["channel"], recs["macrotime"], recs["microtime"])


def read_stream(path) -> PhotonStream:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return decode_stream(data)


def write_stream(stream: PhotonStream, path) -> None:
    data = encode_stream(stream)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# -- CSV import ----------------------------------------------------------------

_CSV_COLUMNS = ("channel", "macrotime", "microtime")
_CSV_LIMITS = {"channel": 255, "macrotime": 2**64 - 1, "microtime": 2**16 - 1}


def import_csv(path, header: StreamHeader, *, sort: bool = False) -> PhotonStream:
    """Read ``channel,macrotime,microtime`` rows into a stream.

    A leading header row naming the columns is skipped. Unsorted input raises
    :class:`OutOfOrderRecord` unless ``sort`` is set, in which case records are
    stably sorted by absolute time.
    """
    header = replace(header, origin=Origin.IMPORTED)
    rows, linenos = [], []
    try:
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or all(not cell.strip() for cell in row):
                    continue
                cells = [cell.strip() for cell in row]
                if lineno == 1 and tuple(c.lower() for c in cells) == _CSV_COLUMNS:
                    continue
                if len(cells) != 3:
                    raise ParseError(lineno, f"expected 3 columns, got {len(cells)}")
                values = []
                for name, cell in zip(_CSV_COLUMNS, cells):
                    try:
                        v = int(cell)
                    except ValueError:
                        raise ParseError(lineno, f"{name} is not an integer: {cell!r}") from None
                    if not 0 <= v <= _CSV_LIMITS[name]:
                        raise ParseError(lineno, f"{name} out of range: {v}")
                    values.append(v)
                rows.append(values)
                linenos.append(lineno)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    arr = np.array(rows, dtype=np.uint64).reshape(-1, 3)
    ch, macro, micro = arr[:, 0], arr[:, 1], arr[:, 2]
    if sort and len(arr):
        t = macro.astype(np.float64) * header.macrotime_resolution + micro.astype(np.float64) * header.microtime_resolution
        order = np.lexsort((ch, t))
        ch, macro, micro = ch[order], macro[order], micro[order]
    try:
        return PhotonStream(header, ch, macro, micro)
    except MalformedRecord as exc:
        if exc.index is not None and not sort:
            raise ParseError(linenos[exc.index], str(exc)) from None
        raise


# -- windowing -------------------------------------------------------------------


def window(stream: PhotonStream, t0: float, t1: float) -> PhotonStream:
    """Records with absolute time in ``[t0, t1)``, re-based to the window start.

    Macrotimes are shifted by ``floor(t0 / macrotime_resolution)`` ticks, so the
    new time origin is ``t0`` exactly when ``t0`` lies on the macrotime grid
    (the usual case: window edges on sync pulses).
    """
    h = stream.header
    if not (0 <= t0 < t1 <= h.duration):
        raise InvalidWindow(f"need 0 <= t0 < t1 <= {h.duration}, got [{t0}, {t1})")
    t = stream.abs_times()
    lo = int(np.searchsorted(t, t0, side="left"))
    hi = int(np.searchsorted(t, t1, side="left"))
    # rounding first keeps a start such as tick + 30 * tick off 30.999...
    shift = math.floor(round(t0 / h.macrotime_resolution, 9))
    if hi > lo:
        # a large microtime can put a record past t0 while its tick sits below the shift
        shift = min(shift, int(stream.macrotime[lo:hi].min()))
    shift = np.uint64(shift)
    return PhotonStream(
        replace(h, duration=t1 - t0),
        stream.channel[lo:hi],
        stream.macrotime[lo:hi] - shift,
        stream.microtime[lo:hi],
        validate=False,
    )


__all__ = [
    "CHANNEL_A",
    "CHANNEL_B",
    "MARKER_CHANNEL",
    "Origin",
    "PhotonRecord",
    "PhotonStream",
    "StreamFormatError",
    "StreamHeader",
    "decode_stream",
    "encode_stream",
    "import_csv",
    "read_stream",
    "validate_records",
    "window",
    "write_stream",
]
