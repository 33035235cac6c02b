"""Single-file model bundle.

Layout (little-endian)::

    "PMSI" | u16 version | u16 section count
    section table: u16 name length, name, u64 offset, u64 length, u32 crc32
    section payloads

CNN and forest sections are a u32-length JSON header followed by a tensor
blob: u32 count, then per tensor u16 name length, name, u8 dtype tag,
u8 rank, u32 dims, row-major payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .cascade import CascadeModel
from .cnn import CnnConfig, CnnModel
from .forest import ForestModel, ForestParams, Tree
from .labels import Taxonomy

MAGIC = b"PMSI"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i4"), 3: np.dtype("<i8")}
DTYPE_TAGS = {v: k for k, v in DTYPES.items()}


class BundleError(ValueError):
    pass


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def pack_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    out = [struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in DTYPE_TAGS:
            raise BundleError(f"tensor {name}: unsupported dtype {arr.dtype}")
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack("<BB", DTYPE_TAGS[dt], arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(out)


def unpack_tensors(data: bytes, pos: int = 0) -> dict[str, np.ndarray]:
    try:
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2:pos + 2 + n].decode()
            pos += 2 + n
            tag, rank = struct.unpack_from("<BB", data, pos)
            pos += 2
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            dt = DTYPES[tag]
            size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + size > len(data):
                raise BundleError(f"tensor {name} runs past the end of its section")
            tensors[name] = np.frombuffer(data, dtype=dt, count=size // dt.itemsize,
                                          offset=pos).reshape(shape).copy()
            pos += size
    except (struct.error, KeyError) as exc:
        raise BundleError(f"malformed tensor blob: {exc}") from exc
    return tensors


def _with_header(header: dict, blob: bytes) -> bytes:
    h = _dumps(header)
    return struct.pack("<I", len(h)) + h + blob


def _split_header(data: bytes):
    (n,) = struct.unpack_from("<I", data, 0)
    return json.loads(data[4:4 + n]), 4 + n


def cnn_section(model: CnnModel) -> bytes:
    header = {"config": model.config.to_json(), "training_meta": model.training_meta,
              "checksum": model.checksum()}
    return _with_header(header, pack_tensors(dict(sorted(model.state().items()))))


def cnn_from_section(data: bytes) -> CnnModel:
    header, pos = _split_header(data)
    model = CnnModel.build(CnnConfig(**header["config"]))
    model.net.load_state(unpack_tensors(data, pos))
    model.training_meta = header["training_meta"]
    if model.checksum() != header["checksum"]:
        raise BundleError("CNN parameter checksum mismatch")
    return model


def forest_section(forest: ForestModel) -> bytes:
    header = {"n_classes": forest.n_classes, "n_features": forest.n_features,
              "params": forest.params.to_json(), "n_trees": len(forest.trees)}
    tensors = {}
    for i, t in enumerate(forest.trees):
        tensors.update({f"{i}.feature": t.feature, f"{i}.threshold": t.threshold,
                        f"{i}.left": t.left, f"{i}.right": t.right, f"{i}.value": t.value})
    return _with_header(header, pack_tensors(tensors))


def forest_from_section(data: bytes) -> ForestModel:
    header, pos = _split_header(data)
    tensors = unpack_tensors(data, pos)
    trees = [Tree(*(tensors[f"{i}.{k}"] for k in ("feature", "threshold", "left", "right", "value")))
             for i in range(header["n_trees"])]
    return ForestModel(trees, header["n_classes"], header["n_features"],
                       ForestParams(**header["params"]))


def encode(model: CascadeModel, meta: dict | None = None) -> bytes:
    sections = [("taxonomy", _dumps(model.taxonomy.to_json())),
                ("meta", _dumps(meta or {})),
                ("stage1_cnn", cnn_section(model.stage1_cnn)),
                ("forest", forest_section(model.stage1_forest))]
    for primary in sorted(model.stage2):
        sections.append((f"stage2/{primary}", cnn_section(model.stage2[primary])))
    names = [n.encode() for n, _ in sections]
    table_size = sum(2 + len(n) + 8 + 8 + 4 for n in names)
    offset = len(MAGIC) + 4 + table_size
    table, payloads = [], []
    for nb, (_, payload) in zip(names, sections):
        table.append(struct.pack("<H", len(nb)) + nb
                     + struct.pack("<QQI", offset, len(payload), zlib.crc32(payload)))
        payloads.append(payload)
        offset += len(payload)
    return MAGIC + struct.pack("<HH", VERSION, len(sections)) + b"".join(table) + b"".join(payloads)


def read_sections(data: bytes) -> dict[str, bytes]:
    if data[:4] != MAGIC:
        raise BundleError("not a model bundle (bad magic)")
    try:
        version, count = struct.unpack_from("<HH", data, 4)
        if version != VERSION:
            raise BundleError(f"unsupported bundle version {version}")
        pos = 8
        sections = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2:pos + 2 + n].decode()
            pos += 2 + n
            off, length, crc = struct.unpack_from("<QQI", data, pos)
            pos += 20
            payload = data[off:off + length]
            if len(payload) != length:
                raise BundleError(f"section {name} is truncated")
            if zlib.crc32(payload) != crc:
                raise BundleError(f"section {name} failed its CRC check")
            sections[name] = payload
    except struct.error as exc:
        raise BundleError(f"malformed section table: {exc}") from exc
    return sections


def decode(data: bytes) -> tuple[CascadeModel, dict]:
    s = read_sections(data)
    for required in ("taxonomy", "stage1_cnn", "forest"):
        if required not in s:
            raise BundleError(f"bundle lacks section {required}")
    taxonomy = Taxonomy.from_json(json.loads(s["taxonomy"]))
    stage2 = {name.split("/", 1)[1]: cnn_from_section(payload)
              for name, payload in s.items() if name.startswith("stage2/")}
    model = CascadeModel(taxonomy, cnn_from_section(s["stage1_cnn"]),
                         forest_from_section(s["forest"]), stage2)
    return model, json.loads(s.get("meta", b"{}"))


def save_bundle(path, model: CascadeModel, meta: dict | None = None) -> str:
    """Write the bundle and return its sha256."""
    data = encode(model, meta)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_bundle(path) -> tuple[CascadeModel, dict]:
    return decode(Path(path).read_bytes())


def file_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
