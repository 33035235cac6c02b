"""Two-stage chain identification.

Stage 1 predicts the latest platform from the fused CNN + quantization
features with the forest. Stage 2 routes the patch to the CNN head of that
platform (if it has one) to predict the previous platform. Errors made in
stage 1 propagate: a patch routed to the wrong head can only receive a
chain that ends in the wrongly predicted platform.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .cnn import CnnModel
from .forest import ForestModel, fuse_batch
from .jpeg_meta import Q_FEATURE_LENGTH, QFeature, read_q_feature
from .labels import ChainLabel, Taxonomy, UnknownPrimary


class EmptyInput(ValueError):
    pass


class ModelMismatch(ValueError):
    pass


class MissingHead(LookupError):
    pass


@dataclass
class CascadeModel:
    taxonomy: Taxonomy
    stage1_cnn: CnnModel
    stage1_forest: ForestModel
    stage2: dict[str, CnnModel] = field(default_factory=dict)

    def __post_init__(self):
        k = len(self.taxonomy.primaries)
        if self.stage1_cnn.config.num_classes != k:
            raise ModelMismatch(f"stage-1 CNN has {self.stage1_cnn.config.num_classes} outputs, "
                                f"taxonomy has {k} primaries")
        if self.stage1_forest.n_features != k + Q_FEATURE_LENGTH:
            raise ModelMismatch(f"forest expects {self.stage1_forest.n_features} features, "
                                f"fused vectors have {k + Q_FEATURE_LENGTH}")
        for primary, head in self.stage2.items():
            self.check_head(primary, head)

    def check_head(self, primary: str, head: CnnModel) -> None:
        classes = self.taxonomy.head_classes(primary)
        if not classes:
            raise ModelMismatch(f"primary {primary} has a single valid secondary; no head allowed")
        if head.config.num_classes != len(classes):
            raise ModelMismatch(f"head {primary} has {head.config.num_classes} outputs, "
                                f"expected {len(classes)} ({', '.join(classes)})")

    @property
    def patch_size(self) -> int:
        return self.stage1_cnn.config.input_size

    # batch paths; the single-patch operations below are thin wrappers

    def stage1_features(self, patches, q) -> np.ndarray:
        deep = self.stage1_cnn.logits(patches)
        q = np.asarray(q, dtype=np.float64).reshape(len(deep), -1) if np.ndim(q) > 1 \
            else np.tile(np.asarray(q, dtype=np.float64), (len(deep), 1))
        return fuse_batch(deep, q)

    def stage1_batch(self, patches, q) -> list[str]:
        pred, _ = self.stage1_forest.predict_batch(self.stage1_features(patches, q))
        return [self.taxonomy.primaries[i] for i in pred]

    def stage2_batch(self, patches, primaries) -> list[str]:
        x = np.asarray(patches)
        out = [""] * len(primaries)
        native = self.taxonomy.native.lower()
        for p in dict.fromkeys(primaries):
            idx = [i for i, v in enumerate(primaries) if v == p]
            classes = self.taxonomy.head_classes(p)
            if not classes:
                for i in idx:
                    out[i] = native
                continue
            head = self.stage2.get(p)
            if head is None:
                raise MissingHead(f"no stage-2 head trained for primary {p}")
            pred, _ = head.classify_batch(x[idx])
            for i, c in zip(idx, pred):
                out[i] = classes[c]
        return out

    def classify_patches(self, patches, q) -> list[ChainLabel]:
        primaries = self.stage1_batch(patches, q)
        secondaries = self.stage2_batch(patches, primaries)
        return [ChainLabel(s, p) for s, p in zip(secondaries, primaries)]


def _q_array(q) -> np.ndarray:
    if isinstance(q, QFeature):
        return q.as_array()
    return np.asarray(q, dtype=np.float64)


def stage1_classify(model: CascadeModel, patch, q) -> str:
    return model.stage1_batch(np.asarray(patch)[None], _q_array(q))[0]


def stage2_classify(model: CascadeModel, patch, primary: str) -> str:
    if primary not in model.taxonomy.primaries:
        raise UnknownPrimary(primary)
    return model.stage2_batch(np.asarray(patch)[None], [primary])[0]


def classify_chain(model: CascadeModel, patch, jpeg_stream: bytes) -> ChainLabel:
    q, _ = read_q_feature(jpeg_stream)
    primary = stage1_classify(model, patch, q)
    return ChainLabel(stage2_classify(model, patch, primary), primary)


def aggregate_image(chains) -> tuple[ChainLabel, float]:
    """Majority chain over an image's patches; ties go to the smallest code."""
    chains = list(chains)
    if not chains:
        raise EmptyInput("no patch decisions to aggregate")
    counts = Counter(c.code for c in chains)
    code, n = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ChainLabel.parse(code), n / len(chains)
