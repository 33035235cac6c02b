"""Manifests, leakage-safe splits, patch extraction and the patch cache."""

from __future__ import annotations

import csv
import hashlib
import logging
import struct
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .jpeg_meta import JpegError, QFeature, read_q_feature
from .labels import ChainLabel

log = logging.getLogger(__name__)

MANIFEST_FIELDS = ("id", "pixels", "jpeg", "chain", "group")
PSET_MAGIC = b"PSET"
PSET_VERSION = 1
SPLIT_TAGS = {"train": 0, "test": 1, "": 2}

# Per-class patch budgets (train, test) used in the original experiments.
PAPER_PATCH_BUDGETS = {64: (960_000, 96_000), 128: (240_000, 24_000), 256: (60_000, 6_000)}
DESK_PATCH_BUDGET = (2_000, 400)


class ClassTooSmall(ValueError):
    pass


class ImageTooSmall(ValueError):
    pass


class ManifestError(ValueError):
    pass


class SplitLeakage(AssertionError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    pixels: Path
    jpeg: Path
    chain: str
    group: str = ""

    @property
    def label(self) -> ChainLabel:
        return ChainLabel.parse(self.chain)

    @property
    def group_key(self) -> str:
        return self.group or self.id


def load_manifest(path, check_paths: bool = True) -> list[ManifestEntry]:
    path = Path(path)
    root = path.parent
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_FIELDS[:4]) - set(reader.fieldnames or ())
        if missing:
            raise ManifestError(f"manifest {path} lacks columns {sorted(missing)}")
        for row in reader:
            e = ManifestEntry(row["id"], root / row["pixels"], root / row["jpeg"], row["chain"],
                              row.get("group") or "")
            e.label  # raises InvalidChain
            if check_paths and not (e.pixels.exists() and e.jpeg.exists()):
                raise ManifestError(f"entry {e.id}: missing {e.pixels} or {e.jpeg}")
            entries.append(e)
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise ManifestError("manifest ids are not unique")
    return entries


def write_manifest(path, entries) -> None:
    path = Path(path)
    root = path.parent.resolve()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for e in entries:
            rel = [str(Path(p).resolve().relative_to(root)) if Path(p).resolve().is_relative_to(root)
                   else str(p) for p in (e.pixels, e.jpeg)]
            w.writerow([e.id, rel[0], rel[1], e.chain, e.group])


def by_class(entries, key=lambda e: e.chain) -> dict[str, list]:
    groups = defaultdict(list)
    for e in entries:
        groups[key(e)].append(e)
    return dict(sorted(groups.items()))


def split(entries, test_fraction: float = 0.1, seed: int = 0):
    """Stratified image-level split that never separates a group.

    Classes are visited in sorted order; each receives whole groups (drawn in
    a seeded order) until round(test_fraction * class size) of its images are
    in the test set. Groups chosen for one class carry all their images to
    the test side, so classes sharing source groups are satisfied together.
    """
    if not 0 <= test_fraction < 1:
        raise ValueError("test_fraction must be in [0, 1)")
    classes = by_class(entries)
    for name, members in classes.items():
        if len(members) < 2:
            raise ClassTooSmall(f"class {name} has {len(members)} image(s); need at least 2")
    if test_fraction == 0:
        warnings.warn("test_fraction is 0: the test split is empty", stacklevel=2)
        return list(entries), []
    group_members = defaultdict(list)
    for e in entries:
        group_members[e.group_key].append(e)
    rng = np.random.default_rng(seed)
    test_groups = set()
    for name, members in classes.items():
        target = round(test_fraction * len(members))
        have = sum(1 for e in members if e.group_key in test_groups)
        keys = sorted({e.group_key for e in members} - test_groups)
        for i in rng.permutation(len(keys)):
            if have >= target:
                break
            test_groups.add(keys[i])
            have += sum(1 for e in members if e.group_key == keys[i])
    train = [e for e in entries if e.group_key not in test_groups]
    test = [e for e in entries if e.group_key in test_groups]
    assert_disjoint(train, test)
    return train, test


def assert_disjoint(train, test) -> None:
    def keys(items):
        return {getattr(e, "group_key", e) for e in items}
    overlap = keys(train) & keys(test)
    if overlap:
        raise SplitLeakage(f"{len(overlap)} source group(s) appear in both splits")


def load_luma(path) -> np.ndarray:
    """8-bit luma plane; colour sources go through BT.601 weights."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16"):
            return np.asarray(im.convert("L"), dtype=np.uint8)
        # PIL's RGB->L conversion uses the BT.601 weights 299/587/114.
        return np.asarray(im.convert("RGB").convert("L"), dtype=np.uint8)


@dataclass
class PatchSet:
    size: int
    patches: np.ndarray           # (N, size, size) float32 in [0, 1]
    labels: list[str]             # chain codes
    parents: list[str]            # manifest ids
    offsets: np.ndarray           # (N, 2) top-left (row, col)
    split: str = ""
    shortfall: dict = field(default_factory=dict)
    groups: list[str] | None = None

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> PatchSet:
        idx = np.asarray(idx, dtype=np.intp)
        return PatchSet(self.size, self.patches[idx], [self.labels[i] for i in idx],
                        [self.parents[i] for i in idx], self.offsets[idx], self.split, {},
                        None if self.groups is None else [self.groups[i] for i in idx])

    def class_counts(self) -> dict[str, int]:
        counts = defaultdict(int)
        for code in self.labels:
            counts[code] += 1
        return dict(sorted(counts.items()))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.patches).tobytes())
        h.update("\n".join(self.labels).encode())
        return h.hexdigest()


def extract_patches(entries, size: int, count_per_class: int, seed: int = 0,
                    split_tag: str = "", allow_any_size: bool = False) -> PatchSet:
    """Sample `count_per_class` patches per chain class at uniform random offsets.

    Images are drawn with replacement within a class; overlap inside one
    image is allowed. Classes without enough usable images are reported in
    ``shortfall`` instead of failing.
    """
    if size not in PAPER_PATCH_BUDGETS and not allow_any_size:
        raise ValueError(f"patch size {size} not in {sorted(PAPER_PATCH_BUDGETS)}")
    classes = by_class(entries)
    cache: dict[str, np.ndarray] = {}
    patches, labels, parents, offsets, groups = [], [], [], [], []
    shortfall = {}
    for ci, (name, members) in enumerate(classes.items()):
        usable = []
        for e in members:
            img = cache.get(e.id)
            if img is None:
                img = cache[e.id] = load_luma(e.pixels)
            if img.shape[0] < size or img.shape[1] < size:
                warnings.warn(f"{e.id}: image {img.shape} smaller than patch {size}; skipped",
                              stacklevel=2)
                continue
            usable.append(e)
        if not usable:
            shortfall[name] = count_per_class
            log.warning("class %s has no image large enough for %d-pixel patches", name, size)
            continue
        rng = np.random.default_rng([seed, ci])
        picks = rng.integers(0, len(usable), size=count_per_class)
        for k in picks:
            e = usable[k]
            img = cache[e.id]
            r = int(rng.integers(0, img.shape[0] - size + 1))
            c = int(rng.integers(0, img.shape[1] - size + 1))
            patches.append(img[r:r + size, c:c + size])
            labels.append(name)
            parents.append(e.id)
            offsets.append((r, c))
            groups.append(e.group_key)
    arr = (np.array(patches, dtype=np.float32).reshape(-1, size, size) / np.float32(255.0))
    return PatchSet(size, arr, labels, parents, np.array(offsets, dtype=np.int64).reshape(-1, 2),
                    split_tag, shortfall, groups)


def make_patch_sets(entries, size, train_count, test_count, test_fraction=0.1, seed=0):
    train_e, test_e = split(entries, test_fraction, seed)
    train = extract_patches(train_e, size, train_count, seed, "train")
    test = extract_patches(test_e, size, test_count, seed + 1, "test")
    assert_disjoint(train.groups, test.groups)
    return train, test


def save_patchset(path, ps: PatchSet) -> None:
    """Binary cache: header then one record per patch, little-endian."""
    with open(path, "wb") as fh:
        fh.write(PSET_MAGIC)
        fh.write(struct.pack("<HHIB", PSET_VERSION, ps.size, len(ps), SPLIT_TAGS[ps.split]))
        for i in range(len(ps)):
            code = ps.labels[i].encode()
            parent = ps.parents[i].encode()
            fh.write(struct.pack("<B", len(code)) + code)
            fh.write(struct.pack("<H", len(parent)) + parent)
            fh.write(struct.pack("<II", *ps.offsets[i]))
            fh.write(np.ascontiguousarray(ps.patches[i], dtype="<f4").tobytes())


class CacheError(ValueError):
    pass


def load_patchset(path) -> PatchSet:
    data = Path(path).read_bytes()
    if data[:4] != PSET_MAGIC:
        raise CacheError(f"{path} is not a patch cache")
    version, size, count, tag = struct.unpack_from("<HHIB", data, 4)
    if version != PSET_VERSION:
        raise CacheError(f"unsupported patch cache version {version}")
    pos = 4 + struct.calcsize("<HHIB")
    npx = size * size * 4
    patches = np.empty((count, size, size), dtype=np.float32)
    labels, parents, offsets = [], [], []
    try:
        for i in range(count):
            (n,) = struct.unpack_from("<B", data, pos)
            labels.append(data[pos + 1:pos + 1 + n].decode())
            pos += 1 + n
            (n,) = struct.unpack_from("<H", data, pos)
            parents.append(data[pos + 2:pos + 2 + n].decode())
            pos += 2 + n
            offsets.append(struct.unpack_from("<II", data, pos))
            pos += 8
            if pos + npx > len(data):
                raise CacheError(f"{path}: truncated at patch {i}")
            patches[i] = np.frombuffer(data, dtype="<f4", count=size * size, offset=pos).reshape(size, size)
            pos += npx
    except struct.error as exc:
        raise CacheError(f"{path}: truncated record") from exc
    split_tag = {v: k for k, v in SPLIT_TAGS.items()}.get(tag, "")
    return PatchSet(size, patches, labels, parents, np.array(offsets, dtype=np.int64).reshape(-1, 2),
                    split_tag)


def q_lookup(entries) -> dict[str, tuple[QFeature | None, str]]:
    """Per-image Q feature with a status: ok, luma-fallback or no-metadata."""
    out = {}
    for e in entries:
        try:
            q, fallback = read_q_feature(Path(e.jpeg).read_bytes())
            out[e.id] = (q, "luma-fallback" if fallback else "ok")
        except (JpegError, OSError) as exc:
            log.warning("%s: no usable quantization table (%s)", e.id, exc)
            out[e.id] = (None, "no-metadata")
    return out


def q_matrix(parents, lookup) -> tuple[np.ndarray, np.ndarray]:
    """Stack Q vectors for patch parents; missing metadata becomes zeros (flagged)."""
    q = np.zeros((len(parents), 9), dtype=np.float64)
    missing = np.zeros(len(parents), dtype=bool)
    for i, p in enumerate(parents):
        feat, _ = lookup.get(p, (None, "no-metadata"))
        if feat is None:
            missing[i] = True
        else:
            q[i] = feat.coefficients
    return q, missing
