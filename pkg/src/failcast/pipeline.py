"""Two-stage cascade: one-class filter in front of a random forest.

Stage 1 trains on normal instances only and routes suspected anomalies to
stage 2; everything stage 1 clears is predicted Normal without touching
the forest. Stage 2 trains on the stage-1 survivors of the full training
set, leaked normals included, so it keeps a Normal class.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import forest as forest_mod
from . import metrics as metrics_mod
from . import ocsvm as ocsvm_mod
from .errors import (
    DegenerateTrainingError,
    InfeasibleNuError,
    StratificationError,
)
from .features import FeatureConfig, Instance, to_arrays
from .forest import ForestModel, ForestParams
from .ocsvm import OcsvmModel, OcsvmParams
from .trace_model import FailureType

logger = logging.getLogger(__name__)

BUNDLE_OCSVM = "ocsvm.txt"
BUNDLE_FOREST = "forest.txt"
BUNDLE_LAYOUT = "layout.json"
BUNDLE_MANIFEST = "manifest.json"
BUNDLE_FILES = (BUNDLE_OCSVM, BUNDLE_FOREST, BUNDLE_LAYOUT, BUNDLE_MANIFEST)


@dataclass
class CascadeModel:
    """Trained filter + classifier pair with the config that produced them."""

    ocsvm: OcsvmModel
    forest: ForestModel
    feature_config: FeatureConfig
    manifest: dict

    def __post_init__(self):
        if self.ocsvm.support_vectors.shape[1] != self.forest.dim:
            raise ValueError("stage dimensions disagree")


@dataclass(frozen=True)
class GridSpec:
    gammas: tuple[float, ...] = (2.0**-7, 2.0**-5, 2.0**-3, 2.0**-1, 2.0)
    nus: tuple[float, ...] = (0.01, 0.05, 0.1, 0.2)
    tree_counts: tuple[int, ...] = (50, 100, 200)
    folds: int = 5

    def __post_init__(self):
        if not (self.gammas and self.nus and self.tree_counts):
            raise ValueError("every grid axis must be non-empty")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")

    def cells(self) -> list[tuple[float, float, int]]:
        return list(itertools.product(self.gammas, self.nus, self.tree_counts))


def _digest(X: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X).tobytes())
    h.update(np.ascontiguousarray(y).tobytes())
    return h.hexdigest()


def train(
    instances: Sequence[Instance],
    ocsvm_params: OcsvmParams,
    forest_params: ForestParams,
    feature_config: Optional[FeatureConfig] = None,
) -> CascadeModel:
    """Train the cascade on a labeled instance set.

    The one-class stage fits the normals; every training instance is then
    filtered through it and the forest learns from whatever it flags.
    Raises DegenerateTrainingError when no failure instance survives the
    filter, since stage 2 would have nothing to separate.
    """
    feature_config = feature_config or FeatureConfig()
    X, y = to_arrays(instances)
    normals = X[y == 0]
    if len(normals) == 0 or len(normals) == len(y):
        raise ValueError("training data needs both normal and failure instances")

    stage1 = ocsvm_mod.train(normals, ocsvm_params)
    flagged = ocsvm_mod.classify(stage1, X) == 1
    if not np.any(flagged & (y != 0)):
        raise DegenerateTrainingError(
            "stage-1 filter removed every failure instance"
        )
    X2, y2 = X[flagged], y[flagged]
    stage2 = forest_mod.train(X2, y2, forest_params)

    manifest = {
        "format": "cascade-manifest v1",
        "feature": {"lags": feature_config.lags, "dim": feature_config.dim},
        "ocsvm": {
            "nu": ocsvm_params.nu,
            "gamma": ocsvm_params.gamma,
            "tol": ocsvm_params.tol,
            "max_iter": ocsvm_params.max_iter,
        },
        "forest": {
            "n_trees": forest_params.n_trees,
            "mtry": forest_params.mtry,
            "min_leaf": forest_params.min_leaf,
            "max_depth": forest_params.max_depth,
            "rng_seed": forest_params.rng_seed,
        },
        "data": {
            "n_train": int(len(y)),
            "class_counts": [int(c) for c in np.bincount(y, minlength=4)],
            "sha256": _digest(X, y),
            "stage2_train": int(len(y2)),
            "stage2_class_counts": [int(c) for c in np.bincount(y2, minlength=4)],
            "stage2_includes_leaked_normals": True,
        },
    }
    return CascadeModel(
        ocsvm=stage1, forest=stage2, feature_config=feature_config, manifest=manifest
    )


def predict(model: CascadeModel, x: np.ndarray) -> FailureType:
    """Normal when stage 1 clears the point; otherwise the forest's class.

    The forest is never evaluated for stage-1 normals, which is both the
    cascade's definition and its latency story.
    """
    if ocsvm_mod.classify(model.ocsvm, x) == 0:
        return FailureType.NORMAL
    return forest_mod.predict(model.forest, x)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(np.asarray(z, dtype=float) / 2.0))


def score(model: CascadeModel, x: np.ndarray) -> float:
    """Anomaly evidence in [0, 1]; stage-2-routed points always score >= 0.5.

    Cleared points score 0.5*sigmoid(-g(x)) from the stage-1 margin;
    routed points score from the forest's non-Normal vote share. This
    composite is a local definition for ranking, not a calibrated
    probability.
    """
    g = ocsvm_mod.decision(model.ocsvm, x)
    if g >= 0.0:
        return float(0.5 * _sigmoid(-g))
    votes = forest_mod.predict_votes(model.forest, x)
    v0 = int(votes[0])
    B = int(votes.sum())
    return 0.5 + 0.5 * (1.0 - v0 / B)


def predict_batch(
    model: CascadeModel, X: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(predictions, scores) for a batch; the forest only sees flagged rows."""
    X = np.asarray(X, dtype=float)
    g = ocsvm_mod.decision(model.ocsvm, X)
    flagged = g < 0.0
    preds = np.zeros(len(X), dtype=np.int64)
    scores = np.empty(len(X))
    scores[~flagged] = 0.5 * _sigmoid(-g[~flagged])
    if np.any(flagged):
        votes = forest_mod.predict_votes_batch(model.forest, X[flagged])
        preds[flagged] = np.argmax(votes, axis=1)
        share = 1.0 - votes[:, 0] / votes.sum(axis=1)
        scores[flagged] = 0.5 + 0.5 * share
    return preds, scores


def _stratified_folds(
    y: np.ndarray, k: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Round-robin per-class fold assignment; every fold must see a failure."""
    fold_of = np.empty(len(y), dtype=np.int64)
    for cls in np.unique(y):
        idx = np.nonzero(y == cls)[0]
        idx = idx[rng.permutation(len(idx))]
        fold_of[idx] = np.arange(len(idx)) % k
    folds = [np.nonzero(fold_of == f)[0] for f in range(k)]
    for f, members in enumerate(folds):
        if not np.any(y[members] != 0):
            raise StratificationError(f"fold {f} contains no failure instances")
        if not np.any(y[members] == 0):
            raise StratificationError(f"fold {f} contains no normal instances")
    return folds


@dataclass
class CvCell:
    gamma: float
    nu: float
    n_trees: int
    fold_f3: list[float]

    @property
    def mean_f3(self) -> float:
        return float(np.mean(self.fold_f3))


def grid_search_cv(
    instances: Sequence[Instance],
    grid: GridSpec,
    rng_seed: int,
    base_ocsvm: Optional[OcsvmParams] = None,
    base_forest: Optional[ForestParams] = None,
    threads: int = 1,
) -> tuple[tuple[float, float, int], list[CvCell]]:
    """Pick (gamma, nu, n_trees) by mean binary F3 over stratified folds.

    Ties break toward fewer trees, then larger nu: the cheaper and more
    conservative model. The fold split depends only on rng_seed.
    """
    base_ocsvm = base_ocsvm or OcsvmParams()
    base_forest = base_forest or ForestParams()
    X, y = to_arrays(instances)
    rng = np.random.default_rng(rng_seed)
    folds = _stratified_folds(y, grid.folds, rng)
    all_idx = np.arange(len(y))

    def run_cell(cell: tuple[float, float, int]) -> CvCell:
        gamma, nu, n_trees = cell
        fold_scores = []
        for f in range(grid.folds):
            test_idx = folds[f]
            train_idx = np.setdiff1d(all_idx, test_idx)
            insts = [instances[i] for i in train_idx]
            try:
                model = train(
                    insts,
                    OcsvmParams(
                        nu=nu,
                        gamma=gamma,
                        tol=base_ocsvm.tol,
                        max_iter=base_ocsvm.max_iter,
                        cache_rows=base_ocsvm.cache_rows,
                    ),
                    ForestParams(
                        n_trees=n_trees,
                        mtry=base_forest.mtry,
                        min_leaf=base_forest.min_leaf,
                        max_depth=base_forest.max_depth,
                        rng_seed=base_forest.rng_seed,
                    ),
                )
            except (DegenerateTrainingError, InfeasibleNuError, ValueError) as exc:
                # unusable cell (filter ate all failures, infeasible nu, ...)
                logger.warning(
                    "grid cell gamma=%g nu=%g B=%d fold %d unusable: %s",
                    gamma, nu, n_trees, f, exc,
                )
                fold_scores.append(0.0)
                continue
            preds, _ = predict_batch(model, X[test_idx])
            cm = metrics_mod.confusion(preds, y[test_idx])
            tp, fp, fn, _tn = metrics_mod.binary_counts(cm)
            p = tp / (tp + fp) if tp + fp else 0.0
            r = tp / (tp + fn) if tp + fn else 0.0
            fold_scores.append(metrics_mod.f_beta(p, r))
        return CvCell(gamma=gamma, nu=nu, n_trees=n_trees, fold_f3=fold_scores)

    cells = grid.cells()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            table = list(pool.map(run_cell, cells))
    else:
        table = [run_cell(c) for c in cells]

    best = min(table, key=lambda c: (-c.mean_f3, c.n_trees, -c.nu, c.gamma))
    return (best.gamma, best.nu, best.n_trees), table


def save_bundle(model: CascadeModel, out_dir: Path) -> None:
    """Write the model as a directory of versioned text/JSON artifacts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / BUNDLE_OCSVM, "w") as f:
        ocsvm_mod.save(model.ocsvm, f)
    with open(out_dir / BUNDLE_FOREST, "w") as f:
        forest_mod.save(model.forest, f)
    (out_dir / BUNDLE_LAYOUT).write_text(model.feature_config.layout_json())
    (out_dir / BUNDLE_MANIFEST).write_text(
        json.dumps(model.manifest, indent=1, sort_keys=True)
    )


def load_bundle(bundle_dir: Path) -> CascadeModel:
    bundle_dir = Path(bundle_dir)
    with open(bundle_dir / BUNDLE_OCSVM) as f:
        stage1 = ocsvm_mod.load(f)
    with open(bundle_dir / BUNDLE_FOREST) as f:
        stage2 = forest_mod.load(f)
    manifest = json.loads((bundle_dir / BUNDLE_MANIFEST).read_text())
    fcfg = FeatureConfig(lags=manifest["feature"]["lags"])
    return CascadeModel(
        ocsvm=stage1, forest=stage2, feature_config=fcfg, manifest=manifest
    )


def save_archive(model: CascadeModel, archive_path: Path) -> None:
    """Single-file zip of the bundle with fixed metadata, so bytes reproduce."""
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        save_bundle(model, Path(tmp))
        with zipfile.ZipFile(archive_path, "w", zipfile.ZIP_DEFLATED) as zf:
            for name in BUNDLE_FILES:
                info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
                info.compress_type = zipfile.ZIP_DEFLATED
                info.external_attr = 0o644 << 16
                zf.writestr(info, (Path(tmp) / name).read_bytes())


def load_archive(archive_path: Path) -> CascadeModel:
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        with zipfile.ZipFile(archive_path) as zf:
            zf.extractall(tmp)
        return load_bundle(Path(tmp))
