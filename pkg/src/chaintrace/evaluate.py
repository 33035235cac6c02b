"""Patch-level evaluation reports: confusion matrices and accuracy summaries."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cascade import CascadeModel
from .dataset import PatchSet, q_matrix
from .forest import fuse_batch
from .labels import ChainLabel


class SizeMismatch(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    rows: list[str]      # true labels
    cols: list[str]      # predicted labels
    counts: np.ndarray   # (len(rows), len(cols)) int

    @classmethod
    def from_pairs(cls, rows, cols, true, pred) -> ConfusionMatrix:
        counts = np.zeros((len(rows), len(cols)), dtype=np.int64)
        ri = {r: i for i, r in enumerate(rows)}
        ci = {c: i for i, c in enumerate(cols)}
        for t, p in zip(true, pred):
            counts[ri[t], ci[p]] += 1
        return cls(list(rows), list(cols), counts)

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def percentages(self) -> np.ndarray:
        """Row-normalized percentages; empty rows stay all zero."""
        tot = self.row_totals[:, None].astype(np.float64)
        return np.divide(100.0 * self.counts, tot, out=np.zeros(self.counts.shape), where=tot > 0)

    def write_csv(self, path, percent: bool = True) -> None:
        values = self.percentages if percent else self.counts
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\predicted", *self.cols, "n"])
            for r, row, n in zip(self.rows, values, self.row_totals):
                cells = [f"{v:.2f}" for v in row] if percent else [str(int(v)) for v in row]
                w.writerow([r, *cells, int(n)])

    def to_text(self) -> str:
        width = max(len(r) for r in self.rows) + 1
        lines = [" " * width + " ".join(f"{c:>7}" for c in self.cols)]
        for r, row in zip(self.rows, self.percentages):
            cells = " ".join(f"{v:7.2f}" if v else f"{'--':>7}" for v in row)
            lines.append(f"{r:>{width}}" + cells)
        return "\n".join(lines)


def balance_by_primary(ps: PatchSet, seed: int = 0) -> np.ndarray:
    """Indices giving every primary label the same number of patches."""
    prim = np.array([ChainLabel.parse(c).primary for c in ps.labels])
    rng = np.random.default_rng(seed)
    groups = {p: np.flatnonzero(prim == p) for p in sorted(set(prim))}
    n = min(len(g) for g in groups.values())
    keep = [np.sort(rng.choice(g, n, replace=False)) for g in groups.values()]
    return np.sort(np.concatenate(keep))


def weighted_recall(cm: ConfusionMatrix) -> float:
    """Sum over classes of per-class recall times class share; equals accuracy."""
    totals = cm.row_totals
    n = totals.sum()
    acc = 0.0
    for i, r in enumerate(cm.rows):
        if totals[i] == 0 or r not in cm.cols:
            continue
        recall = cm.counts[i, cm.cols.index(r)] / totals[i]
        acc += recall * totals[i] / n
    return float(acc)


def evaluate(model: CascadeModel, test: PatchSet, lookup, balance: str = "chain",
             seed: int = 0) -> dict:
    if test.size != model.patch_size:
        raise SizeMismatch(f"test patches are {test.size}px, bundle expects {model.patch_size}px")
    if balance == "primary":
        test = test.subset(balance_by_primary(test, seed))
    tax = model.taxonomy
    x = test.patches[:, None]
    true = [ChainLabel.parse(c) for c in test.labels]
    deep = model.stage1_cnn.logits(x)
    q, missing = q_matrix(test.parents, lookup)
    s1_idx, _ = model.stage1_forest.predict_batch(fuse_batch(deep, q))
    s1 = [tax.primaries[i] for i in s1_idx]
    s2 = model.stage2_batch(x, s1)
    pred = [ChainLabel(s, p) for s, p in zip(s2, s1)]

    chains = list(tax.valid_chains)
    primaries = list(tax.primaries)
    true_codes = [c.code for c in true]
    stage1_cm = ConfusionMatrix.from_pairs(primaries, primaries, [c.primary for c in true], s1)
    table4_cm = ConfusionMatrix.from_pairs(chains, primaries, true_codes, s1)
    chain_cm = ConfusionMatrix.from_pairs(chains, chains, true_codes, [c.code for c in pred])

    correct = np.array([t == p for t, p in zip(true, pred)])
    cnn_only = np.array([tax.primaries[i] for i in deep.argmax(axis=1)])
    heads = {}
    for primary, head in sorted(model.stage2.items()):
        idx = [i for i, c in enumerate(true) if c.primary == primary]
        if not idx:
            continue
        classes = tax.head_classes(primary)
        hp, _ = head.classify_batch(x[idx])
        heads[primary] = {
            "given_true_primary": float(np.mean([classes[k] == true[i].secondary
                                                 for k, i in zip(hp, idx)])),
            "patches": len(idx),
        }
    accuracy = float(correct.mean()) if len(correct) else 0.0
    return {
        "patches": len(true),
        "balance": balance,
        "missing_metadata": int(missing.sum()),
        "accuracy": accuracy,
        "accuracy_weighted_recall": weighted_recall(chain_cm),
        "stage1_accuracy": float(np.mean([c.primary == p for c, p in zip(true, s1)])),
        "stage1_cnn_only_accuracy": float(np.mean([c.primary == p for c, p in zip(true, cnn_only)])),
        "stage2_heads": heads,
        "matrices": {"stage1": stage1_cm, "table4": table4_cm, "chain": chain_cm},
    }


def write_report(report: dict, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mats = report["matrices"]
    mats["stage1"].write_csv(out / "stage1_confusion.csv")
    mats["table4"].write_csv(out / "table4_confusion.csv")
    mats["chain"].write_csv(out / "chain_confusion.csv")
    mats["chain"].write_csv(out / "chain_confusion_counts.csv", percent=False)
    summary = {k: v for k, v in report.items() if k != "matrices"}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
