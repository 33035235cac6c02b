"""Small untrained cascades for fast structural tests."""

import numpy as np

from chaintrace import cascade as cc
from chaintrace.cnn import CnnConfig, CnnModel
from chaintrace.forest import ForestParams, train_forest
from chaintrace.labels import SYNTHETIC_TAXONOMY

SIZE = 16


def random_cascade(taxonomy=SYNTHETIC_TAXONOMY, seed=0):
    """Untrained networks plus a forest that routes on the Q part of the input."""
    k = len(taxonomy.primaries)
    cfg = CnnConfig(SIZE, k, allow_any_size=True)
    cnn = CnnModel.build(cfg, seed)
    rng = np.random.default_rng(seed)
    X = np.hstack([rng.normal(size=(300, k)), rng.integers(1, 256, size=(300, 9))])
    y = np.argmax(X[:, k:k + k], axis=1)
    forest = train_forest(X, y, ForestParams(n_trees=15, seed=seed), n_classes=k)
    heads = {p: CnnModel.build(CnnConfig(SIZE, len(c), allow_any_size=True), seed + 1 + i)
             for i, (p, c) in enumerate(sorted(taxonomy.heads.items()))}
    return cc.CascadeModel(taxonomy, cnn, forest, heads)
