"""Brute-force reference forest in plain Python.

Same RNG protocol as the package (per-tree generator seeded ``seed ^ t``,
bootstrap multiplicities first, then one feature permutation per splittable
node in depth-first, left-first order), but every split is found by trying
every threshold between distinct values and recounting both children.
"""

import math

import numpy as np


def gini_split_score(xs, ys, ws, thr, n_classes):
    hl = [0.0] * n_classes
    hr = [0.0] * n_classes
    for x, y, w in zip(xs, ys, ws):
        if x <= thr:
            hl[y] += w
        else:
            hr[y] += w
    wl, wr = sum(hl), sum(hr)
    return wl, wr, ((wl - sum(h * h for h in hl) / wl) + (wr - sum(h * h for h in hr) / wr)) / (wl + wr)


def exhaustive_split(xs, ys, ws, n_classes, min_leaf):
    """(score, threshold) minimizing weighted Gini on one feature, or None."""
    distinct = sorted(set(xs))
    best = None
    for a, b in zip(distinct, distinct[1:]):
        thr = 0.5 * (a + b)
        if not a <= thr < b:
            thr = a
        wl, wr, score = gini_split_score(xs, ys, ws, thr, n_classes)
        if wl < min_leaf or wr < min_leaf:
            continue
        if best is None or score < best[0]:
            best = (score, thr)
    return best


def reference_tree(X, y, w, n_classes, mtry, min_leaf, max_depth, rng):
    """Nodes as a list of dicts in creation order."""
    n, d = X.shape
    nodes = []

    def grow(idx, depth):
        hist = [0.0] * n_classes
        for i in idx:
            hist[y[i]] += w[i]
        node = {"feature": -1, "threshold": 0.0, "left": -1, "right": -1, "value": hist}
        nodes.append(node)
        present = sum(1 for h in hist if h > 0)
        if (max_depth is not None and depth >= max_depth) or present <= 1 or sum(hist) < 2 * min_leaf:
            return node
        best = None
        for k, f in enumerate(rng.permutation(d)):
            if k >= mtry and best is not None:
                break
            cand = exhaustive_split([X[i, f] for i in idx], [y[i] for i in idx],
                                    [w[i] for i in idx], n_classes, min_leaf)
            if cand is not None and (best is None or cand[0] < best[0]):
                best = (cand[0], cand[1], int(f))
        if best is None:
            return node
        _, thr, f = best
        node["feature"], node["threshold"] = f, thr
        li = [i for i in idx if X[i, f] <= thr]
        ri = [i for i in idx if X[i, f] > thr]
        node["left"] = len(nodes)
        grow(li, depth + 1)
        node["right"] = len(nodes)
        grow(ri, depth + 1)
        return node

    grow([i for i in range(n) if w[i] > 0], 0)
    return nodes


def reference_forest(X, y, n_classes, n_trees, seed, bootstrap=True, max_features="sqrt",
                     min_leaf=1, max_depth=None):
    n, d = X.shape
    mtry = d if max_features == "all" else max(1, math.ceil(math.sqrt(d)))
    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng(seed ^ t)
        if bootstrap:
            w = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)
        else:
            w = np.ones(n)
        trees.append(reference_tree(X, y, w, n_classes, mtry, min_leaf, max_depth, rng))
    return trees


def reference_predict(trees, x, n_classes):
    votes = [0] * n_classes
    for nodes in trees:
        node = nodes[0]
        while node["feature"] >= 0:
            node = nodes[node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]]
        h = node["value"]
        votes[max(range(n_classes), key=lambda c: (h[c], -c))] += 1
    return max(range(n_classes), key=lambda c: (votes[c], -c)), votes
