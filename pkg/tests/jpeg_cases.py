"""Hand-assembled JPEG byte streams with known quantization tables.

Streams are built from raw bytes here rather than through the package's
own serializer, so the parser is checked against an independent encoding.
"""

import io
import struct

from PIL import Image

ANNEX_K = [
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
]
ANNEX_K_CHROMA = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    *[99] * 32,
]
ANNEX_K_Q = [11, 12, 14, 12, 10, 16, 14, 13, 14]


def zigzag_order():
    """Natural indices in zig-zag scan order, generated by walking anti-diagonals."""
    order = []
    for s in range(15):
        cells = [(r, s - r) for r in range(8) if 0 <= s - r < 8]
        if s % 2 == 0:
            cells.reverse()  # even diagonals run bottom-left to top-right
        order.extend(r * 8 + c for r, c in cells)
    return order


ZZ = zigzag_order()


def seg(code, payload=b""):
    return bytes([0xFF, code]) + struct.pack(">H", len(payload) + 2) + payload


def table_bytes(tid, natural, precision=8):
    scan = [natural[i] for i in ZZ]
    if precision == 8:
        return bytes([tid]) + bytes(scan)
    return bytes([0x10 | tid]) + b"".join(struct.pack(">H", v) for v in scan)


def dqt(*tables):
    return seg(0xDB, b"".join(table_bytes(*t) for t in tables))


SOI = b"\xff\xd8"
EOI = b"\xff\xd9"
APP0 = seg(0xE0, b"JFIF\x00\x01\x01\x00\x00\x01\x00\x01\x00\x00")
COM = seg(0xFE, b"hand built")
SOF0 = seg(0xC0, struct.pack(">BHHB", 8, 16, 16, 1) + bytes([1, 0x11, 0]))
DHT = seg(0xC4, bytes([0x00]) + bytes([1] + [0] * 15) + bytes([0]))
SOS = seg(0xDA, bytes([1, 1, 0x00, 0, 63, 0]))
DRI = seg(0xDD, struct.pack(">H", 4))


def q_of(natural):
    return [natural[i] for i in ZZ[1:10]]


def scaled(quality, base=ANNEX_K):
    s = 5000 // quality if quality < 50 else 200 - 2 * quality
    return [min(255, max(1, (b * s + 50) // 100)) for b in base]


def pil_jpeg(**kw):
    im = Image.frombytes("L", (32, 32), bytes((7 * i) % 251 for i in range(1024)))
    buf = io.BytesIO()
    im.save(buf, format="JPEG", **kw)
    return buf.getvalue()


def pil_color_jpeg(**kw):
    im = Image.frombytes("RGB", (24, 24), bytes((5 * i) % 253 for i in range(24 * 24 * 3)))
    buf = io.BytesIO()
    im.save(buf, format="JPEG", **kw)
    return buf.getvalue()


def ramp_table(start):
    return [min(255, start + i) for i in range(64)]


# name -> (stream, expected [(id, precision, natural values)], expected q, fallback flag)
def cases():
    rampA, rampB = ramp_table(3), ramp_table(40)
    big = [1000 + 7 * i for i in range(64)]
    scan_junk = b"\x12\x34\xff\x00\x56\xff\xd0\x78\xff\xff\xd1\x9a"
    out = {
        "minimal": (SOI + dqt((0, ANNEX_K)) + SOF0 + SOS + EOI,
                    [(0, 8, ANNEX_K)], ANNEX_K_Q, False),
        "jfif_comment": (SOI + APP0 + COM + dqt((0, ANNEX_K)) + SOF0 + DHT + SOS + b"\x01\x02" + EOI,
                         [(0, 8, ANNEX_K)], ANNEX_K_Q, False),
        "two_tables_one_segment": (SOI + dqt((0, ANNEX_K), (1, ANNEX_K_CHROMA)) + SOF0 + SOS + EOI,
                                   [(0, 8, ANNEX_K), (1, 8, ANNEX_K_CHROMA)], ANNEX_K_Q, False),
        "two_segments": (SOI + dqt((1, ANNEX_K_CHROMA)) + dqt((0, rampA)) + SOF0 + SOS + EOI,
                         [(1, 8, ANNEX_K_CHROMA), (0, 8, rampA)], q_of(rampA), False),
        "redefined_luma": (SOI + dqt((0, rampA)) + dqt((0, rampB)) + SOF0 + SOS + EOI,
                           [(0, 8, rampA), (0, 8, rampB)], q_of(rampB), False),
        "sixteen_bit": (SOI + dqt((0, big, 16)) + SOF0 + SOS + EOI,
                        [(0, 16, big)], q_of(big), False),
        "chroma_only": (SOI + dqt((1, ANNEX_K_CHROMA)) + SOF0 + SOS + EOI,
                        [(1, 8, ANNEX_K_CHROMA)], q_of(ANNEX_K_CHROMA), True),
        "ids_two_and_three": (SOI + dqt((3, rampB), (2, rampA)) + SOF0 + SOS + EOI,
                              [(3, 8, rampB), (2, 8, rampA)], q_of(rampA), True),
        "fill_bytes": (SOI + b"\xff\xff" + dqt((0, ANNEX_K)) + b"\xff" + SOF0 + SOS + b"\xff" + EOI,
                       [(0, 8, ANNEX_K)], ANNEX_K_Q, False),
        "stuffed_scan_with_restarts": (SOI + dqt((0, rampA)) + SOF0 + DRI + SOS + scan_junk + EOI,
                                       [(0, 8, rampA)], q_of(rampA), False),
        "dqt_after_sof": (SOI + APP0 + SOF0 + DHT + dqt((0, ANNEX_K)) + SOS + EOI,
                          [(0, 8, ANNEX_K)], ANNEX_K_Q, False),
        "progressive_second_scan": (SOI + dqt((0, rampB)) + seg(0xC2, SOF0[4:]) + SOS + b"\x00\x11"
                                    + DHT + SOS + b"\x22" + EOI,
                                    [(0, 8, rampB)], q_of(rampB), False),
        "mixed_precision": (SOI + dqt((1, big, 16), (0, ANNEX_K, 8)) + SOF0 + SOS + EOI,
                            [(1, 16, big), (0, 8, ANNEX_K)], ANNEX_K_Q, False),
        "libjpeg_quality_75": (pil_jpeg(quality=75), [(0, 8, scaled(75))], q_of(scaled(75)), False),
        "libjpeg_custom_tables": (pil_jpeg(qtables=[ANNEX_K]), [(0, 8, ANNEX_K)], ANNEX_K_Q, False),
        "libjpeg_color_quality_50": (pil_color_jpeg(quality=50),
                                     [(0, 8, ANNEX_K), (1, 8, ANNEX_K_CHROMA)], ANNEX_K_Q, False),
    }
    return out


def error_cases():
    """Malformed streams, each with the name of the jpeg_meta error it must raise."""
    return {
        "empty": (b"", "MissingSOI"),
        "wrong_start": (b"\x00\xd8" + EOI, "MissingSOI"),
        "soi_only": (SOI, "UnexpectedEOF"),
        "length_cut": (SOI + b"\xff\xdb\x00", "UnexpectedEOF"),
        "length_below_two": (SOI + b"\xff\xdb\x00\x01", "TruncatedSegment"),
        "segment_past_end": (SOI + b"\xff\xdb\x00\x90\x00\x01", "TruncatedSegment"),
        "junk_between_segments": (SOI + dqt((0, ANNEX_K)) + b"\x00" + EOI, "BadMarker"),
        "stuffing_outside_scan": (SOI + b"\xff\x00" + EOI, "BadMarker"),
        "scan_without_eoi": (SOI + dqt((0, ANNEX_K)) + SOF0 + SOS + b"\x01\x02\xff\x00",
                             "UnexpectedEOF"),
        "missing_dqt": (SOI + SOF0 + SOS + EOI, "NoDQT"),
        "table_id_four": (SOI + seg(0xDB, bytes([0x04]) + bytes(range(1, 65))) + SOS + EOI,
                          "BadTableId"),
        "zero_entry": (SOI + seg(0xDB, bytes([0x00]) + bytes([0] + [1] * 63)) + SOS + EOI,
                       "BadTable"),
    }
