"""Marker-level JPEG parsing and quantization-table features.

Only header metadata is interpreted. Entropy-coded scan data is skipped
(respecting byte stuffing and restart markers) so that the trailing EOI
can be located; pixels are never decoded here.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

SOI = 0xFFD8
EOI = 0xFFD9
SOS = 0xFFDA
DQT = 0xFFDB
SOF0 = 0xFFC0
TEM = 0xFF01

# Markers that carry no length field.
_STANDALONE = frozenset([SOI, EOI, TEM, *range(0xFFD0, 0xFFD8)])

MARKER_NAMES = {
    SOI: "SOI", EOI: "EOI", SOS: "SOS", DQT: "DQT", TEM: "TEM",
    0xFFC4: "DHT", 0xFFCC: "DAC", 0xFFDD: "DRI", 0xFFDC: "DNL", 0xFFFE: "COM",
    **{0xFFC0 + i: f"SOF{i}" for i in (0, 1, 2, 3, 5, 6, 7, 9, 10, 11, 13, 14, 15)},
    **{0xFFD0 + i: f"RST{i}" for i in range(8)},
    **{0xFFE0 + i: f"APP{i}" for i in range(16)},
}

# ZIGZAG[k] is the natural (row-major) index of the k-th coefficient in scan order.
ZIGZAG = np.array([
    0, 1, 8, 16, 9, 2, 3, 10,
    17, 24, 32, 25, 18, 11, 4, 5,
    12, 19, 26, 33, 40, 48, 41, 34,
    27, 20, 13, 6, 7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36,
    29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46,
    53, 60, 61, 54, 47, 55, 62, 63,
], dtype=np.intp)
ZIGZAG.flags.writeable = False

# Luminance table from Annex K of ITU-T T.81, natural order.
ANNEX_K_LUMA = (
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
)

Q_FEATURE_LENGTH = 9


class JpegError(ValueError):
    """Base class for malformed or unsupported JPEG metadata."""


class MissingSOI(JpegError):
    pass


class TruncatedSegment(JpegError):
    pass


class UnexpectedEOF(JpegError):
    pass


class BadMarker(JpegError):
    pass


class NoDQT(JpegError):
    pass


class BadTableId(JpegError):
    pass


class BadTable(JpegError):
    """A DQT entry is zero, out of range, or the table is cut short."""


@dataclass(frozen=True)
class MarkerSegment:
    marker: int
    offset: int
    payload: bytes = b""

    def __post_init__(self):
        hi, lo = self.marker >> 8, self.marker & 0xFF
        if hi != 0xFF or lo in (0x00, 0xFF):
            raise BadMarker(f"invalid marker code 0x{self.marker:04X}")

    @property
    def name(self) -> str:
        return MARKER_NAMES.get(self.marker, f"0x{self.marker:04X}")

    @property
    def has_length(self) -> bool:
        return self.marker not in _STANDALONE

    def to_bytes(self) -> bytes:
        head = struct.pack(">H", self.marker)
        if not self.has_length:
            return head
        return head + struct.pack(">H", len(self.payload) + 2) + self.payload


@dataclass(frozen=True)
class QuantTable:
    """One 8x8 quantization table, values in natural row-major order."""

    table_id: int
    precision: int  # bits per entry: 8 or 16
    values: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        if not 0 <= self.table_id <= 3:
            raise BadTableId(f"table id {self.table_id} not in 0..3")
        if self.precision not in (8, 16):
            raise BadTable(f"precision must be 8 or 16 bits, got {self.precision}")
        if len(self.values) != 64:
            raise BadTable(f"expected 64 values, got {len(self.values)}")
        top = 255 if self.precision == 8 else 65535
        if any(v < 1 or v > top for v in self.values):
            raise BadTable(f"table {self.table_id} has entries outside 1..{top}")

    @classmethod
    def from_zigzag(cls, table_id: int, precision: int, scan_values) -> QuantTable:
        natural = [0] * 64
        for k, v in enumerate(scan_values):
            natural[ZIGZAG[k]] = v
        return cls(table_id, precision, tuple(natural))

    def zigzag(self) -> tuple[int, ...]:
        return tuple(self.values[i] for i in ZIGZAG)

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=np.int64).reshape(8, 8)

    def dqt_bytes(self) -> bytes:
        """The table as it appears inside a DQT payload (Pq/Tq byte + entries)."""
        pq = 0 if self.precision == 8 else 1
        fmt = "64B" if pq == 0 else ">64H"
        return bytes([(pq << 4) | self.table_id]) + struct.pack(fmt, *self.zigzag())

    def to_json(self) -> dict:
        return {"id": self.table_id, "precision": self.precision,
                "values": [list(self.values[r * 8:(r + 1) * 8]) for r in range(8)]}


@dataclass(frozen=True)
class QFeature:
    """The first nine AC entries of the luma table in zig-zag order."""

    coefficients: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(int(c) for c in self.coefficients))
        if len(self.coefficients) != Q_FEATURE_LENGTH:
            raise ValueError(f"QFeature needs {Q_FEATURE_LENGTH} coefficients")
        if any(c < 1 for c in self.coefficients):
            raise ValueError("QFeature coefficients must be >= 1")

    def __iter__(self):
        return iter(self.coefficients)

    def __len__(self):
        return Q_FEATURE_LENGTH

    def as_array(self) -> np.ndarray:
        return np.array(self.coefficients, dtype=np.float64)


def _skip_entropy_data(data: bytes, pos: int) -> int | None:
    """Return the offset of the first real marker at or after `pos`.

    Stuffed 0xFF00 pairs, restart markers and 0xFF fill bytes are skipped.
    Returns None when the stream ends inside the scan.
    """
    n = len(data)
    while True:
        pos = data.find(b"\xff", pos)
        if pos < 0 or pos + 1 >= n:
            return None
        nxt = data[pos + 1]
        if nxt == 0x00 or 0xD0 <= nxt <= 0xD7:
            pos += 2
        elif nxt == 0xFF:
            pos += 1
        else:
            return pos


def parse_markers(stream: bytes) -> list[MarkerSegment]:
    """Split a JPEG stream into marker segments up to and including SOS.

    After SOS the scan data is skipped; if it is terminated by EOI the EOI
    segment is appended. A following non-EOI marker (the next scan of a
    progressive file) ends parsing without error.
    """
    data = bytes(stream)
    n = len(data)
    if n < 2 or data[0] != 0xFF or data[1] != 0xD8:
        raise MissingSOI("stream does not start with SOI (0xFFD8)")
    segments = [MarkerSegment(SOI, 0)]
    pos = 2
    while True:
        if pos >= n:
            raise UnexpectedEOF(f"stream ended at byte {pos} before EOI")
        if data[pos] != 0xFF:
            raise BadMarker(f"expected marker at byte {pos}, found 0x{data[pos]:02X}")
        # Any number of 0xFF fill bytes may precede a marker.
        while pos + 1 < n and data[pos + 1] == 0xFF:
            pos += 1
        if pos + 1 >= n:
            raise UnexpectedEOF(f"stream ended inside marker at byte {pos}")
        code = 0xFF00 | data[pos + 1]
        if code == 0xFF00:
            raise BadMarker(f"stuffed byte 0xFF00 outside scan data at byte {pos}")
        offset = pos
        pos += 2
        if code in _STANDALONE:
            segments.append(MarkerSegment(code, offset))
            if code == EOI:
                return segments
            continue
        if pos + 2 > n:
            raise UnexpectedEOF(f"stream ended inside length field of segment at {offset}")
        (length,) = struct.unpack_from(">H", data, pos)
        if length < 2:
            raise TruncatedSegment(f"segment at {offset} declares length {length} < 2")
        if pos + length > n:
            raise TruncatedSegment(
                f"segment at {offset} declares {length} bytes, only {n - pos} remain")
        segments.append(MarkerSegment(code, offset, data[pos + 2:pos + length]))
        pos += length
        if code == SOS:
            end = _skip_entropy_data(data, pos)
            if end is None:
                raise UnexpectedEOF("scan data is not terminated by a marker")
            if data[end + 1] == 0xD9:
                segments.append(MarkerSegment(EOI, end))
            return segments


def parse_dqt_payload(payload: bytes) -> list[QuantTable]:
    """Decode every table stored back-to-back in one DQT payload."""
    tables = []
    pos = 0
    while pos < len(payload):
        pq, tq = payload[pos] >> 4, payload[pos] & 0x0F
        if pq > 1:
            raise BadTable(f"unknown DQT precision code {pq}")
        if tq > 3:
            raise BadTableId(f"table id {tq} not in 0..3")
        width = 64 * (1 + pq)
        body = payload[pos + 1:pos + 1 + width]
        if len(body) != width:
            raise BadTable(f"DQT table {tq} truncated: {len(body)} of {width} bytes")
        scan = struct.unpack("64B" if pq == 0 else ">64H", body)
        tables.append(QuantTable.from_zigzag(tq, 8 if pq == 0 else 16, scan))
        pos += 1 + width
    return tables


def dqt_segment(tables) -> MarkerSegment:
    return MarkerSegment(DQT, 0, b"".join(t.dqt_bytes() for t in tables))


def extract_dqt(stream: bytes) -> list[QuantTable]:
    tables = []
    for seg in parse_markers(stream):
        if seg.marker == DQT:
            tables.extend(parse_dqt_payload(seg.payload))
    if not tables:
        raise NoDQT("stream carries no quantization table")
    return tables


def select_luma(tables) -> tuple[QuantTable, bool]:
    """Pick the luma table: last table with id 0, else the lowest id.

    The flag is True when the fallback rule was used.
    """
    if not tables:
        raise NoDQT("no quantization tables to choose from")
    latest = {}
    for t in tables:
        latest[t.table_id] = t
    if 0 in latest:
        return latest[0], False
    return latest[min(latest)], True


def q_feature(table: QuantTable) -> QFeature:
    return QFeature(tuple(table.values[i] for i in ZIGZAG[1:1 + Q_FEATURE_LENGTH]))


def read_q_feature(stream: bytes) -> tuple[QFeature, bool]:
    table, fallback = select_luma(extract_dqt(stream))
    return q_feature(table), fallback


def scaled_table(quality: int, base=ANNEX_K_LUMA, table_id: int = 0) -> QuantTable:
    """IJG quality scaling of a base table, entries clamped to 1..255."""
    if not 1 <= quality <= 100:
        raise ValueError("quality must be in 1..100")
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    vals = [min(255, max(1, (b * scale + 50) // 100)) for b in base]
    return QuantTable(table_id, 8, tuple(vals))
