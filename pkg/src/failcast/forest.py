"""Random forest for 4-class failure classification.

Trees are grown on bootstrap resamples with Gini splits over a random
feature subset per node; prediction is a majority vote over the ensemble.
Each tree draws from its own rng stream seeded by (rng_seed, tree index),
so growth order and thread scheduling never change the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np

from .trace_model import FailureType

N_CLASSES = 4
MODEL_FORMAT = "forest-model v1"


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    mtry: int = 9
    min_leaf: int = 1
    max_depth: Optional[int] = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.mtry < 1:
            raise ValueError("mtry must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")


@dataclass
class TreeNode:
    """Internal node (feature, threshold, children) or leaf (klass, counts)."""

    feature: int = -1
    threshold: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    klass: int = -1
    counts: tuple[int, ...] = ()

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class ForestModel:
    trees: list[TreeNode]
    params: ForestParams
    dim: int
    feature_split_counts: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.feature_split_counts is None:
            counts = np.zeros(self.dim, dtype=np.int64)
            for root in self.trees:
                _accumulate_splits(root, counts)
            self.feature_split_counts = counts

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def gini(counts: Sequence[int]) -> float:
    """Gini impurity 1 - sum_c p_c^2 of a class-count vector."""
    total = float(sum(counts))
    if total <= 0:
        raise ValueError("gini of an empty count vector is undefined")
    return 1.0 - sum((c / total) ** 2 for c in counts)


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    decrease: float


def best_split(
    X: np.ndarray,
    y: np.ndarray,
    candidate_features: Iterable[int],
    min_leaf: int = 1,
) -> Optional[Split]:
    """Best Gini split over the candidates, or None when nothing improves.

    Thresholds are midpoints between consecutive distinct sorted values.
    Ties break toward the lowest feature index, then the lowest threshold,
    so results are reproducible.
    """
    n = len(y)
    if n < 2:
        return None
    parent_counts = np.bincount(y, minlength=N_CLASSES).astype(float)
    parent_gini = 1.0 - np.sum((parent_counts / n) ** 2)

    best: Optional[Split] = None
    for f in sorted(set(candidate_features)):
        order = np.argsort(X[:, f], kind="stable")
        xv = X[order, f]
        onehot = np.zeros((n, N_CLASSES))
        onehot[np.arange(n), y[order]] = 1.0
        cum = np.cumsum(onehot, axis=0)

        cut = np.nonzero(xv[:-1] < xv[1:])[0]  # split after position i
        if len(cut) == 0:
            continue
        n_left = (cut + 1).astype(float)
        n_right = n - n_left
        keep = (n_left >= min_leaf) & (n_right >= min_leaf)
        if not np.any(keep):
            continue
        cut = cut[keep]
        n_left = n_left[keep]
        n_right = n_right[keep]

        left_counts = cum[cut]
        right_counts = parent_counts[None, :] - left_counts
        gini_left = 1.0 - np.sum((left_counts / n_left[:, None]) ** 2, axis=1)
        gini_right = 1.0 - np.sum((right_counts / n_right[:, None]) ** 2, axis=1)
        weighted = (n_left * gini_left + n_right * gini_right) / n
        decrease = parent_gini - weighted

        k = int(np.argmax(decrease))
        if decrease[k] > 0.0 and (best is None or decrease[k] > best.decrease):
            i = cut[k]
            best = Split(
                feature=f,
                threshold=float((xv[i] + xv[i + 1]) / 2.0),
                decrease=float(decrease[k]),
            )
    return best


def grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    params: ForestParams,
    rng: np.random.Generator,
) -> TreeNode:
    """Grow one tree; iterative so deep chains never hit the recursion limit.

    Nodes are processed left-first in depth order, and the feature subset
    for each node is drawn in that order, so a fixed rng yields a
    bit-identical tree.
    """
    if len(y) == 0:
        raise ValueError("cannot grow a tree on an empty batch")
    d = X.shape[1]
    mtry = min(params.mtry, d)
    root = TreeNode()
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        sub_y = y[idx]
        counts = np.bincount(sub_y, minlength=N_CLASSES)
        pure = np.count_nonzero(counts) <= 1
        depth_stop = params.max_depth is not None and depth >= params.max_depth
        split = None
        if not pure and not depth_stop and len(idx) >= 2 * params.min_leaf:
            feats = rng.choice(d, size=mtry, replace=False)
            split = best_split(X[idx], sub_y, feats, params.min_leaf)
        if split is None:
            node.klass = int(np.argmax(counts))
            node.counts = tuple(int(c) for c in counts)
            continue
        node.feature = split.feature
        node.threshold = split.threshold
        node.left = TreeNode()
        node.right = TreeNode()
        goes_left = X[idx, split.feature] <= split.threshold
        # push right first so the left child is processed (and draws rng) first
        stack.append((node.right, idx[~goes_left], depth + 1))
        stack.append((node.left, idx[goes_left], depth + 1))
    return root


def _tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, tree_index])


def bootstrap_indices(rng: np.random.Generator, n: int) -> np.ndarray:
    """n draws with replacement from range(n)."""
    return rng.integers(0, n, size=n)


def train(
    X: np.ndarray,
    y: np.ndarray,
    params: ForestParams,
    bootstrap: bool = True,
) -> ForestModel:
    """Grow the ensemble on independent bootstrap resamples of the data.

    ``bootstrap=False`` grows every tree on the full data; with one tree
    that reduces to a plain call to grow_tree.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("training data is empty")
    trees = []
    for k in range(params.n_trees):
        rng = _tree_rng(params.rng_seed, k)
        if bootstrap:
            idx = bootstrap_indices(rng, len(y))
            trees.append(grow_tree(X[idx], y[idx], params, rng))
        else:
            trees.append(grow_tree(X, y, params, rng))
    return ForestModel(trees=trees, params=params, dim=X.shape[1])


def _accumulate_splits(root: TreeNode, counts: np.ndarray) -> None:
    stack = [root]
    while stack:
        node = stack.pop()
        if not node.is_leaf:
            counts[node.feature] += 1
            stack.append(node.left)
            stack.append(node.right)


def _descend(root: TreeNode, x: np.ndarray) -> int:
    node = root
    while not node.is_leaf:
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.klass


def predict_votes(model: ForestModel, x: np.ndarray) -> np.ndarray:
    """Per-class vote counts; always sums to the ensemble size."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dim,):
        raise ValueError(f"expected a ({model.dim},) vector, got {x.shape}")
    votes = np.zeros(N_CLASSES, dtype=np.int64)
    for root in model.trees:
        votes[_descend(root, x)] += 1
    return votes


def predict(model: ForestModel, x: np.ndarray) -> FailureType:
    """Majority-vote class; ties break toward the lowest label."""
    return FailureType(int(np.argmax(predict_votes(model, x))))


def predict_votes_batch(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """(n, 4) vote counts for a batch, routing index sets tree by tree."""
    X = np.asarray(X, dtype=float)
    votes = np.zeros((len(X), N_CLASSES), dtype=np.int64)
    for root in model.trees:
        stack = [(root, np.arange(len(X)))]
        while stack:
            node, idx = stack.pop()
            if len(idx) == 0:
                continue
            if node.is_leaf:
                votes[idx, node.klass] += 1
                continue
            goes_left = X[idx, node.feature] <= node.threshold
            stack.append((node.left, idx[goes_left]))
            stack.append((node.right, idx[~goes_left]))
    return votes


def predict_batch(model: ForestModel, X: np.ndarray) -> np.ndarray:
    return np.argmax(predict_votes_batch(model, X), axis=1)


def split_count_report(model: ForestModel, feature_config) -> list[dict]:
    """Split counts keyed by (kind, resource, lag) via the feature layout."""
    rows = []
    for i, count in enumerate(model.feature_split_counts):
        kind, resource, lag = feature_config.describe(i)
        rows.append(
            {
                "index": i,
                "kind": kind,
                "resource": resource,
                "lag": lag,
                "count": int(count),
            }
        )
    return rows


def _write_node(node: TreeNode, out: TextIO) -> None:
    stack = [node]
    while stack:
        cur = stack.pop()
        if cur.is_leaf:
            counts = " ".join(str(c) for c in cur.counts)
            out.write(f"L {cur.klass} {counts}\n")
        else:
            out.write(f"N {cur.feature} {cur.threshold!r}\n")
            stack.append(cur.right)
            stack.append(cur.left)


def save(model: ForestModel, out: TextIO) -> None:
    """Pre-order node listing per tree; thresholds keep full precision."""
    p = model.params
    out.write(MODEL_FORMAT + "\n")
    out.write(f"trees {model.n_trees}\n")
    out.write(f"dim {model.dim}\n")
    depth = "none" if p.max_depth is None else str(p.max_depth)
    out.write(
        f"params mtry={p.mtry} min_leaf={p.min_leaf} max_depth={depth} seed={p.rng_seed}\n"
    )
    for k, root in enumerate(model.trees):
        out.write(f"tree {k}\n")
        _write_node(root, out)


def load(source: Iterable[str]) -> ForestModel:
    lines = [ln.rstrip("\n") for ln in source if ln.strip()]
    if lines[0] != MODEL_FORMAT:
        raise ValueError(f"unsupported model format: {lines[0]!r}")
    n_trees = int(lines[1].split()[1])
    dim = int(lines[2].split()[1])
    kv = dict(part.split("=") for part in lines[3].split()[1:])
    params = ForestParams(
        n_trees=n_trees,
        mtry=int(kv["mtry"]),
        min_leaf=int(kv["min_leaf"]),
        max_depth=None if kv["max_depth"] == "none" else int(kv["max_depth"]),
        rng_seed=int(kv["seed"]),
    )
    pos = 4
    trees = []
    for _ in range(n_trees):
        if not lines[pos].startswith("tree "):
            raise ValueError(f"expected tree marker, got {lines[pos]!r}")
        pos += 1
        root, pos = _read_tree(lines, pos)
        trees.append(root)
    return ForestModel(trees=trees, params=params, dim=dim)


def _parse_node_line(line: str) -> tuple[TreeNode, bool]:
    parts = line.split()
    if parts[0] == "L":
        node = TreeNode(klass=int(parts[1]), counts=tuple(int(c) for c in parts[2:]))
        return node, True
    return TreeNode(feature=int(parts[1]), threshold=float(parts[2])), False


def _read_tree(lines: list[str], pos: int) -> tuple[TreeNode, int]:
    root, is_leaf = _parse_node_line(lines[pos])
    pos += 1
    if is_leaf:
        return root, pos
    # pre-order reconstruction: the stack holds internal nodes still
    # missing at least one child
    stack = [root]
    while stack:
        node, is_leaf = _parse_node_line(lines[pos])
        pos += 1
        parent = stack[-1]
        if parent.left is None:
            parent.left = node
        else:
            parent.right = node
            stack.pop()
        if not is_leaf:
            stack.append(node)
    return root, pos
