"""Synthetic platform emulation: JPEG-style requantization and resampling.

A platform is modelled as an optional resize followed by 8x8 block DCT
quantization of the luma plane with the platform's table. Entropy coding
is skipped; the fingerprint lives in the pixels and the observable header
is synthesized by :func:`emit_jpeg_stub`.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .jpeg_meta import (EOI, SOF0, SOI, SOS, MarkerSegment, QuantTable, dqt_segment,
                        scaled_table)
from .labels import ChainLabel

MAX_CHAIN = 2


class TooSmall(ValueError):
    pass


class InvalidProfile(ValueError):
    pass


class ChainTooLong(ValueError):
    pass


@dataclass(frozen=True)
class PlatformProfile:
    name: str
    luma_qtable: QuantTable
    resize_factor: float = 1.0
    resample_kernel: str = "bilinear"

    def __post_init__(self):
        if not self.name or not self.name.isupper():
            raise InvalidProfile(f"profile name must be an upper-case code, got {self.name!r}")
        if not 0 < self.resize_factor <= 2:
            raise InvalidProfile(f"resize factor {self.resize_factor} outside (0, 2]")
        if self.resample_kernel not in ("bilinear", "nearest"):
            raise InvalidProfile(f"unknown resample kernel {self.resample_kernel!r}")

    def to_json(self) -> dict:
        return {"name": self.name, "quant_values": list(self.luma_qtable.values),
                "resize_factor": self.resize_factor, "resample_kernel": self.resample_kernel}

    @classmethod
    def from_json(cls, d) -> PlatformProfile:
        if "quality" in d:
            table = scaled_table(int(d["quality"]))
        else:
            table = QuantTable(0, 8, tuple(d["quant_values"]))
        return cls(d["name"], table, float(d.get("resize_factor", 1.0)),
                   d.get("resample_kernel", "bilinear"))


@dataclass(frozen=True)
class ChainRecord:
    profiles: tuple[PlatformProfile, ...]
    final_qtable: QuantTable
    label: ChainLabel


# Quality of the simulated camera that produced the "natural" originals.
CAMERA_QUALITY = 95
CAMERA_TABLE = scaled_table(CAMERA_QUALITY)


def default_profiles() -> dict[str, PlatformProfile]:
    """Three synthetic platforms at qualities 30/60/90.

    C is the mild, full-resolution platform that receives reposts; A is the
    aggressive low-quality platform that also downsizes.
    """
    return {
        "A": PlatformProfile("A", scaled_table(30), 0.75),
        "B": PlatformProfile("B", scaled_table(60), 1.0),
        "C": PlatformProfile("C", scaled_table(90), 1.0),
    }


def dct_matrix() -> np.ndarray:
    u = np.arange(8)[:, None]
    x = np.arange(8)[None, :]
    d = np.cos((2 * x + 1) * u * math.pi / 16) * math.sqrt(2 / 8)
    d[0] /= math.sqrt(2)
    return d


_D = dct_matrix()


def _blocks(img):
    h, w = img.shape
    return img.reshape(h // 8, 8, w // 8, 8).swapaxes(1, 2)


def _unblocks(blocks):
    nh, nw = blocks.shape[:2]
    return blocks.swapaxes(1, 2).reshape(nh * 8, nw * 8)


def block_dct(img) -> np.ndarray:
    """Orthonormal 2-D DCT of every 8x8 block; shape (H/8, W/8, 8, 8)."""
    return _D @ _blocks(np.asarray(img, dtype=np.float64)) @ _D.T


def block_idct(coefs) -> np.ndarray:
    return _unblocks(_D.T @ coefs @ _D)


def requantize(img, table: QuantTable, round_output: bool = True) -> np.ndarray:
    """Level shift, block DCT, quantize with `table`, dequantize and invert.

    Edges are replicated up to a multiple of 8 and cropped back afterwards.
    With ``round_output`` the result is rounded and clamped to 0..255 like a
    decoded 8-bit JPEG; otherwise the raw reconstruction is returned.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    ph, pw = -h % 8, -w % 8
    padded = np.pad(img, ((0, ph), (0, pw)), mode="edge") if ph or pw else img
    q = table.as_array().astype(np.float64)
    coefs = block_dct(padded - 128.0)
    coefs = np.round(coefs / q) * q
    out = block_idct(coefs)[:h, :w] + 128.0
    if round_output:
        out = np.clip(np.round(out), 0, 255)
    return out


def resample(img, factor: float, kernel: str = "bilinear") -> np.ndarray:
    if factor == 1.0:
        return np.asarray(img, dtype=np.float64)
    h, w = img.shape
    size = (max(1, round(w * factor)), max(1, round(h * factor)))
    resample_mode = Image.BILINEAR if kernel == "bilinear" else Image.NEAREST
    out = Image.fromarray(np.asarray(img, dtype=np.float32), mode="F").resize(size, resample_mode)
    return np.asarray(out, dtype=np.float64)


def apply_platform(image, profile: PlatformProfile, keep_float: bool = False):
    """Pass `image` through one platform; returns (image', ChainRecord delta).

    The delta is the profile together with the table that now sits in the
    observable header.
    """
    if not isinstance(profile, PlatformProfile):
        raise InvalidProfile("profile must be a PlatformProfile")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("expected a single-channel (H, W) image")
    h, w = img.shape
    if round(h * profile.resize_factor) < 8 or round(w * profile.resize_factor) < 8:
        raise TooSmall(f"image {h}x{w} is below 8x8 after resizing by {profile.resize_factor}")
    img = resample(img, profile.resize_factor, profile.resample_kernel)
    if not keep_float:
        img = np.clip(np.round(img), 0, 255)
    out = requantize(img, profile.luma_qtable, round_output=not keep_float)
    if not keep_float:
        out = out.astype(np.uint8)
    return out, (profile, profile.luma_qtable)


def simulate_chain(image, profiles, base_table: QuantTable = CAMERA_TABLE):
    """Apply up to two platforms in order and label the resulting chain.

    `base_table` is the header table of the original (camera) image and is
    what an empty chain reports.
    """
    profiles = tuple(profiles)
    if len(profiles) > MAX_CHAIN:
        raise ChainTooLong(f"chains are limited to {MAX_CHAIN} platforms, got {len(profiles)}")
    img = np.asarray(image)
    table = base_table
    for p in profiles:
        img, (_, table) = apply_platform(img, p)
    if not profiles:
        img = np.array(img, dtype=np.uint8)
    names = ["NAT", *[p.name for p in profiles]]
    label = ChainLabel(names[-2].lower(), names[-1]) if len(names) > 1 else ChainLabel("nat", "NAT")
    return img, ChainRecord(profiles, table, label)


def emit_jpeg_stub(image, record: ChainRecord) -> bytes:
    """A header-only JPEG: SOI, DQT, SOF0, SOS with an empty scan, EOI.

    Pixels travel separately (PGM sidecar); this stream exists so the
    header parser can read the simulated table.
    """
    h, w = np.asarray(image).shape[:2]
    sof = struct.pack(">BHHB", 8, h, w, 1) + bytes([1, 0x11, 0])
    sos = bytes([1, 1, 0x00, 0, 63, 0])
    segs = [MarkerSegment(SOI, 0), dqt_segment([record.final_qtable]),
            MarkerSegment(SOF0, 0, sof), MarkerSegment(SOS, 0, sos), MarkerSegment(EOI, 0)]
    return b"".join(s.to_bytes() for s in segs)


def write_pgm(path, image) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="L").save(path, format="PPM")


def read_pgm(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def synthetic_scene(size: int, seed: int) -> np.ndarray:
    """A seeded procedural texture with camera-like sensor noise, float 0..255.

    Mixes 1/f noise, soft-edged shapes and an illumination gradient, then
    adds Gaussian noise so that downstream quantization has fine detail to
    remove.
    """
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    f = np.sqrt(fx * fx + fy * fy)
    f[0, 0] = 1.0
    beta = rng.uniform(1.4, 2.2)
    spectrum = (rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))) / f ** (beta / 2)
    spectrum[0, 0] = 0
    field_ = np.real(np.fft.ifft2(spectrum))
    field_ = (field_ - field_.mean()) / (field_.std() + 1e-12)
    img = 128 + rng.uniform(15, 45) * field_

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for _ in range(rng.integers(2, 7)):
        cy, cx = rng.uniform(0, size, 2)
        ry, rx = rng.uniform(size / 16, size / 3, 2)
        theta = rng.uniform(0, math.pi)
        c, s = math.cos(theta), math.sin(theta)
        u = ((xx - cx) * c + (yy - cy) * s) / rx
        v = (-(xx - cx) * s + (yy - cy) * c) / ry
        r = np.sqrt(u * u + v * v)
        edge = 1.0 / (1.0 + np.exp((r - 1.0) * rng.uniform(8, 40)))
        img += rng.uniform(-60, 60) * edge
    gy, gx = rng.uniform(-30, 30, 2)
    img += gy * (yy / size - 0.5) + gx * (xx / size - 0.5)
    img += rng.normal(0, rng.uniform(2.0, 4.0), size=img.shape)
    return np.clip(img, 0, 255)


def capture(scene, table: QuantTable = CAMERA_TABLE) -> np.ndarray:
    """Turn a synthetic scene into a camera-original 8-bit image."""
    return requantize(np.clip(np.round(scene), 0, 255), table).astype(np.uint8)
