"""Training orchestration for the stage-1 extractor + forest and stage-2 heads."""

from __future__ import annotations

import dataclasses
import logging

import numpy as np

from .cascade import CascadeModel
from .cnn import CnnConfig, CnnModel
from .config import RunConfig
from .dataset import PatchSet, q_matrix
from .forest import ForestModel, fuse_batch, train_forest
from .labels import ChainLabel, Taxonomy
from .nn import SGD, EmptyDataset, SgdSchedule, recalibrate_batchnorm, sgd_epoch

log = logging.getLogger(__name__)


class NoSuchHead(ValueError):
    pass


def train_cnn(X, y, num_classes: int, schedule: SgdSchedule, seed: int = 0,
              recalibration_samples: int = 2048, fingerprint: str = "",
              on_epoch=None) -> CnnModel:
    """Train a fresh network for ``schedule.total_epochs`` epochs.

    After the last epoch the batch-norm statistics are recomputed from a
    seeded subset of the training patches.
    """
    if len(y) == 0:
        raise EmptyDataset("no training patches")
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 3:
        X = X[:, None]
    model = CnnModel.build(CnnConfig(X.shape[-1], num_classes, X.shape[1]), seed=seed)
    opt = SGD(model.net)
    history = []
    for epoch in range(schedule.total_epochs):
        stats = sgd_epoch(model.net, X, y, schedule, epoch, seed, opt)
        history.append({"epoch": epoch, "lr": stats.lr, "loss": round(stats.mean_loss, 6),
                        "accuracy": round(stats.accuracy, 6)})
        log.info("epoch %d lr=%.6g loss=%.4f acc=%.4f", epoch, stats.lr, stats.mean_loss,
                 stats.accuracy)
        if on_epoch is not None:
            on_epoch(stats)
    n_cal = min(recalibration_samples, len(X))
    if n_cal:
        idx = np.sort(np.random.default_rng([seed, 7919]).choice(len(X), n_cal, replace=False))
        recalibrate_batchnorm(model.net, X[idx])
    model.training_meta = {
        "seed": seed,
        "epochs_trained": schedule.total_epochs,
        "schedule": dict(schedule.__dict__),
        "final_lr": schedule.lr_at(schedule.total_epochs - 1),
        "dataset_fingerprint": fingerprint,
        "history": history,
    }
    return model


def primary_targets(ps: PatchSet, taxonomy: Taxonomy) -> np.ndarray:
    return np.array([taxonomy.primary_index(ChainLabel.parse(c).primary) for c in ps.labels],
                    dtype=np.intp)


def stage1_fused(cnn: CnnModel, ps: PatchSet, lookup) -> tuple[np.ndarray, np.ndarray]:
    deep = cnn.logits(ps.patches[:, None])
    q, missing = q_matrix(ps.parents, lookup)
    return fuse_batch(deep, q), missing


def train_stage1(cfg: RunConfig, train: PatchSet, lookup, on_epoch=None) -> CascadeModel:
    tax = cfg.taxonomy
    y = primary_targets(train, tax)
    cnn = train_cnn(train.patches, y, len(tax.primaries), cfg.stage1, cfg.seeds["cnn"],
                    cfg.bn_recalibration_samples, train.fingerprint(), on_epoch)
    fused, missing = stage1_fused(cnn, train, lookup)
    if missing.any():
        log.warning("%d training patches have no quantization table; Q set to zeros",
                    int(missing.sum()))
    params = dataclasses.replace(cfg.forest, seed=cfg.seeds["forest"])
    forest = train_forest(fused, y, params, n_classes=len(tax.primaries), n_jobs=cfg.forest_jobs)
    return CascadeModel(tax, cnn, forest, {})


def train_stage2(cfg: RunConfig, model: CascadeModel, train: PatchSet, primary: str,
                 on_epoch=None) -> CnnModel:
    """Train the head for `primary` on patches whose true latest platform is `primary`."""
    classes = model.taxonomy.head_classes(primary)
    if not classes:
        raise NoSuchHead(f"primary {primary} has a single valid secondary; nothing to train")
    idx = [i for i, c in enumerate(train.labels) if ChainLabel.parse(c).primary == primary]
    if not idx:
        raise EmptyDataset(f"no training patches with primary label {primary}")
    sub = train.subset(idx)
    y = np.array([classes.index(ChainLabel.parse(c).secondary) for c in sub.labels], dtype=np.intp)
    seed = cfg.seeds["cnn"] + 1 + model.taxonomy.primary_index(primary)
    head = train_cnn(sub.patches, y, len(classes), cfg.stage2, seed,
                     cfg.bn_recalibration_samples, sub.fingerprint(), on_epoch)
    model.check_head(primary, head)
    model.stage2[primary] = head
    return head


def forest_accuracy(forest: ForestModel, fused, y) -> float:
    pred, _ = forest.predict_batch(fused)
    return float(np.mean(pred == y))
