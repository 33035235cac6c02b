"""The patch classifier network and its deep-feature output."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .nn import (BatchNorm, Conv, Dense, Flatten, MaxPool, Sequential, ShapeMismatch, Tanh,
                 softmax)

SUPPORTED_SIZES = (64, 128, 256)

# (filters, kernel) for the four conv blocks; each block is conv, BN, tanh, 2x2 max pool.
BLOCKS = ((96, 7), (64, 5), (64, 5), (128, 1))
FIRST_CONV = (6, 3)
DENSE_UNITS = (200, 200)


class UnsupportedInputSize(ValueError):
    pass


@dataclass(frozen=True)
class CnnConfig:
    input_size: int = 64
    num_classes: int = 5
    in_channels: int = 1
    allow_any_size: bool = False

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not self.allow_any_size and self.input_size not in SUPPORTED_SIZES:
            raise UnsupportedInputSize(
                f"input size {self.input_size} not in {SUPPORTED_SIZES}; set allow_any_size")
        if self.input_size // 2 ** len(BLOCKS) < 1:
            raise UnsupportedInputSize(f"input size {self.input_size} too small for 4 pooling stages")

    @property
    def final_spatial(self) -> int:
        return self.input_size // 2 ** len(BLOCKS)

    def to_json(self) -> dict:
        return {"input_size": self.input_size, "num_classes": self.num_classes,
                "in_channels": self.in_channels, "allow_any_size": self.allow_any_size}


def layer_param_counts(config: CnnConfig) -> list[tuple[str, int]]:
    """Closed-form trainable parameter count per layer, in stack order."""
    counts = []
    c = config.in_channels
    f, k = FIRST_CONV
    counts.append(("Conv", f * c * k * k + f))
    c = f
    for f, k in BLOCKS:
        counts += [("Conv", f * c * k * k + f), ("BatchNorm", 2 * f), ("Tanh", 0), ("MaxPool", 0)]
        c = f
    counts.append(("Flatten", 0))
    width = c * config.final_spatial ** 2
    for units in DENSE_UNITS:
        counts += [("Dense", width * units + units), ("Tanh", 0)]
        width = units
    counts.append(("Dense", width * config.num_classes + config.num_classes))
    return counts


def build_layers(config: CnnConfig, rng) -> list:
    layers = []
    c = config.in_channels
    f, k = FIRST_CONV
    layers.append(Conv(c, f, k, rng=rng))
    c = f
    for f, k in BLOCKS:
        layers += [Conv(c, f, k, rng=rng), BatchNorm(f), Tanh(), MaxPool(2, 2)]
        c = f
    layers.append(Flatten())
    width = c * config.final_spatial ** 2
    for units in DENSE_UNITS:
        layers += [Dense(width, units, rng=rng), Tanh()]
        width = units
    layers.append(Dense(width, config.num_classes, rng=rng))
    return layers


@dataclass
class CnnModel:
    config: CnnConfig
    net: Sequential
    training_meta: dict = field(default_factory=dict)

    @classmethod
    def build(cls, config: CnnConfig, seed: int = 0) -> CnnModel:
        rng = np.random.default_rng(seed)
        return cls(config, Sequential(build_layers(config, rng)), {"epochs_trained": 0, "seed": seed})

    def _batch(self, patches) -> np.ndarray:
        x = np.asarray(patches, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None, None]
        elif x.ndim == 3:
            # a (C, H, W) patch when C matches, else a batch of single-channel patches
            x = x[None] if x.shape[0] == self.config.in_channels and self.config.in_channels > 1 \
                else x[:, None]
        s, c = self.config.input_size, self.config.in_channels
        if x.ndim != 4 or x.shape[1:] != (c, s, s):
            raise ShapeMismatch(0, "input", (c, s, s), tuple(x.shape[1:]))
        return x

    @property
    def dtype(self):
        return self.net.layers[0].params["W"].dtype

    def logits(self, patches, batch_size: int = 64) -> np.ndarray:
        """Pre-softmax output activations for a batch of patches."""
        x = self._batch(patches)
        outs = [self.net.forward(x[i:i + batch_size], train=False)
                for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)

    def deep_features(self, patch) -> np.ndarray:
        """Output-layer activations of one patch with the softmax decision removed."""
        return self.logits(patch)[0]

    def classify(self, patch) -> tuple[int, np.ndarray]:
        probs = softmax(self.deep_features(patch))
        return int(np.argmax(probs)), probs

    def classify_batch(self, patches, batch_size: int = 64):
        probs = softmax(self.logits(patches, batch_size))
        return probs.argmax(axis=1), probs

    def state(self) -> dict[str, np.ndarray]:
        return self.net.state()

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, arr in sorted(self.state().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def param_count(self) -> int:
        return self.net.param_count()
