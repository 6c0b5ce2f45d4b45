"""Estimation strategies: which rows fit the model, which rows feed the
effect estimator.

- ``train``: fit on all n samples, estimate on the same n samples.
- ``val``: seeded shuffle, fit on the first ceil(0.8 n) rows, estimate on
  the remaining rows.
- ``cv``: seeded shuffle into k contiguous folds; per fold, fit on the
  other folds, estimate the centered effect on the held-out fold, then
  average the k curves pointwise.

All strategies share the grid (and hence the bins), so their curves are
pointwise comparable and averaging commutes with centering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import effects
from .dgp import Dataset
from .exceptions import ConfigError
from .models import Fitter, PredictionModel
from .seeding import as_rng, derive_seed

TRAIN_ON_ALL = "train"
HOLDOUT_SPLIT = "val"
KFOLD_CV = "cv"
STRATEGY_KINDS = (TRAIN_ON_ALL, HOLDOUT_SPLIT, KFOLD_CV)


@dataclass(frozen=True)
class StrategySpec:
    kind: str
    split_fraction: float = 0.8
    folds: int = 5
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError(f"unknown strategy {self.kind!r}; known: {STRATEGY_KINDS}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError("split_fraction must lie in (0, 1)")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")


def split_folds(n: int, folds: int, seed) -> np.ndarray:
    """Fold id per sample: a seeded permutation cut into contiguous blocks
    whose sizes differ by at most one."""
    if folds > n:
        raise ConfigError(f"cannot split {n} samples into {folds} folds")
    perm = as_rng(seed).permutation(n)
    base, extra = divmod(n, folds)
    assignment = np.empty(n, dtype=np.int64)
    start = 0
    for f in range(folds):
        size = base + (1 if f < extra else 0)
        assignment[perm[start : start + size]] = f
        start += size
    return assignment


def holdout_split(n: int, split_fraction: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """(train_idx, estimation_idx): disjoint, union {0..n-1}; the training
    block holds the first ceil(split_fraction * n) rows of a seeded shuffle."""
    perm = as_rng(seed).permutation(n)
    n_train = int(math.ceil(split_fraction * n))
    if n_train >= n:
        raise ConfigError("holdout split leaves no estimation samples")
    return perm[:n_train], perm[n_train:]


def _estimate_centered(
    model: PredictionModel, data: Dataset, feature: int, kind: str, grid: effects.EffectGrid
) -> effects.EffectCurve:
    if kind == effects.PD:
        curve = effects.estimate_pd(model, data, grid)
    elif kind == effects.ALE:
        curve = effects.estimate_ale(model, data, effects.make_bins(grid, data))
    else:
        raise ConfigError(f"unknown effect kind {kind!r}")
    return effects.center_curve(curve)


def _average_curves(curves: list[effects.EffectCurve], n_used: int) -> effects.EffectCurve:
    values = np.mean([c.values for c in curves], axis=0)
    diag: dict = {}
    if curves[0].kind == effects.ALE:
        diag["n_empty_bins"] = int(sum(c.diagnostics.get("n_empty_bins", 0) for c in curves))
        diag["empty_bins"] = np.any([c.diagnostics.get("empty_bins") for c in curves], axis=0)
    base = curves[0]
    return effects.EffectCurve(
        feature=base.feature,
        kind=base.kind,
        centered=True,
        grid=base.grid,
        values=values,
        n_used=n_used,
        diagnostics=diag,
    )


def strategy_effects(
    fitter: Fitter,
    data: Dataset,
    strategy: StrategySpec,
    requests: list[tuple[int, str, effects.EffectGrid]],
    fit_seed=0,
) -> tuple[dict[tuple[int, str], effects.EffectCurve], list[PredictionModel]]:
    """Fit once per strategy and estimate every requested (feature, kind).

    Returns the centered curves keyed by (feature, kind) plus the fitted
    model(s): one model for train/val, one per fold for cv.
    """
    n = data.n
    curves: dict[tuple[int, str], effects.EffectCurve] = {}
    if strategy.kind == TRAIN_ON_ALL:
        model = fitter.fit(data, fit_seed)
        for feature, kind, grid in requests:
            curves[(feature, kind)] = _estimate_centered(model, data, feature, kind, grid)
        return curves, [model]
    if strategy.kind == HOLDOUT_SPLIT:
        train_idx, est_idx = holdout_split(n, strategy.split_fraction, strategy.shuffle_seed)
        model = fitter.fit(data.subset(train_idx), fit_seed)
        est_data = data.subset(est_idx)
        for feature, kind, grid in requests:
            curves[(feature, kind)] = _estimate_centered(model, est_data, feature, kind, grid)
        return curves, [model]
    # k-fold CV: centered per fold, then averaged pointwise (identical
    # centering weights across folds make the order immaterial).
    assignment = split_folds(n, strategy.folds, strategy.shuffle_seed)
    models: list[PredictionModel] = []
    per_fold: dict[tuple[int, str], list[effects.EffectCurve]] = {r[:2]: [] for r in requests}
    for f in range(strategy.folds):
        held_out = assignment == f
        model = fitter.fit(data.subset(~held_out), derive_seed(fit_seed, "fold", f))
        models.append(model)
        fold_data = data.subset(held_out)
        for feature, kind, grid in requests:
            per_fold[(feature, kind)].append(_estimate_centered(model, fold_data, feature, kind, grid))
    for key, fold_curves in per_fold.items():
        curves[key] = _average_curves(fold_curves, n_used=n)
    return curves, models


def run_strategy(
    fitter: Fitter,
    data: Dataset,
    strategy: StrategySpec,
    feature: int,
    kind: str,
    grid: effects.EffectGrid,
    fit_seed=0,
) -> tuple[effects.EffectCurve, list[PredictionModel]]:
    """Single (feature, kind) interface over strategy_effects."""
    curves, fitted = strategy_effects(fitter, data, strategy, [(feature, kind, grid)], fit_seed)
    return curves[(feature, kind)], fitted


def estimation_size(strategy: StrategySpec, n: int) -> int:
    """Sample count the strategy's estimator consumes per fresh draw."""
    if strategy.kind == HOLDOUT_SPLIT:
        return n - int(math.ceil(strategy.split_fraction * n))
    return n


def reestimate(
    models: list[PredictionModel],
    strategy: StrategySpec,
    fresh: Dataset,
    feature: int,
    kind: str,
    grid: effects.EffectGrid,
    fold_seed=0,
) -> effects.EffectCurve:
    """Estimate the effect of already-fitted model(s) on a fresh dataset.

    For train/val the single frozen model is evaluated on all fresh rows;
    for cv the fresh rows are split into folds (seeded) and each frozen
    fold model is evaluated on its own fold, then averaged, mirroring the
    original strategy's estimation path.
    """
    if strategy.kind in (TRAIN_ON_ALL, HOLDOUT_SPLIT):
        return _estimate_centered(models[0], fresh, feature, kind, grid)
    assignment = split_folds(fresh.n, strategy.folds, fold_seed)
    fold_curves = [
        _estimate_centered(models[f], fresh.subset(assignment == f), feature, kind, grid)
        for f in range(strategy.folds)
    ]
    return _average_curves(fold_curves, n_used=fresh.n)
