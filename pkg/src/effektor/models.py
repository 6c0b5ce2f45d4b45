"""Learners and the immutable prediction-function abstraction.

Two learner families play the "flexible model" role, each with an
optimally-tuned (ot) and a deliberately overfitting (of) configuration:

- ``ridge_basis``: penalized least squares on per-feature truncated-power
  spline bases (knots at empirical marginal quantiles) plus optional
  pairwise tensor-product interaction columns.
- ``boosted_trees``: gradient boosting of depth-limited regression trees on
  squared-error residuals, with optional row subsampling per round.

An ordinary least-squares model serves as baseline, and a ground-truth
wrapper exposes the data-generating function through the same interface so
estimators can be run against a model with zero model error.

Fitted models are immutable; prediction is a pure function of the fitted
state and the input matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg as sla

from . import dgp, trees
from .exceptions import ConfigError, DataError, FitError
from .seeding import as_rng

RIDGE_BASIS = "ridge_basis"
BOOSTED_TREES = "boosted_trees"
LINEAR = "linear"
GROUND_TRUTH = "ground_truth"


# ---------------------------------------------------------------------------
# Hyperparameter records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RidgeBasisParams:
    basis_size: int = 10
    ridge_lambda: float = 0.1
    include_interactions: bool = True
    interaction_pairs: tuple[tuple[int, int], ...] = ()
    interaction_basis: int = 4

    def __post_init__(self):
        if self.ridge_lambda <= 0:
            raise ConfigError("ridge_lambda must be positive")
        if self.basis_size < 1:
            raise ConfigError("basis_size must be >= 1")
        if self.interaction_basis < 1:
            raise ConfigError("interaction_basis must be >= 1")


@dataclass(frozen=True)
class BoostedTreesParams:
    rounds: int = 150
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_leaf: int = 20
    subsample: float = 1.0

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigError("learning_rate must be in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be >= 1")
        if not 0.0 < self.subsample <= 1.0:
            raise ConfigError("subsample must be in (0, 1]")


@dataclass(frozen=True)
class LearnerConfig:
    learner: str
    mode: str | None = None
    params: RidgeBasisParams | BoostedTreesParams | None = None

    def __post_init__(self):
        if self.learner not in (RIDGE_BASIS, BOOSTED_TREES, LINEAR, GROUND_TRUTH):
            raise ConfigError(f"unknown learner {self.learner!r}")
        if self.mode is not None and self.mode not in ("ot", "of"):
            raise ConfigError("mode must be 'ot' or 'of'")

    @property
    def label(self) -> str:
        return self.learner if self.mode is None else f"{self.learner}_{self.mode}"


# Per (setting, size regime, mode) defaults; large-n entries kick in at
# n >= 5000. Interaction pairs mirror each setting's functional form.
_INTERACTION_PAIRS = {
    dgp.SIMPLE_NORMAL_CORRELATED: ((0, 1),),
    dgp.FRIEDMAN1: ((0, 1),),
    dgp.FEYNMAN12916: ((0, 1), (2, 3)),
}

_LARGE_N = 5000

_RIDGE_DEFAULTS = {
    ("ot", False): dict(basis_size=10, ridge_lambda=1e-4, interaction_basis=4),
    ("ot", True): dict(basis_size=12, ridge_lambda=1e-4, interaction_basis=5),
    ("of", False): dict(basis_size=30, ridge_lambda=1e-7, interaction_basis=8),
    ("of", True): dict(basis_size=80, ridge_lambda=1e-7, interaction_basis=12),
}

_BOOSTED_DEFAULTS = {
    ("ot", False): dict(rounds=150, max_depth=3, learning_rate=0.1, min_samples_leaf=20, subsample=0.8),
    ("ot", True): dict(rounds=250, max_depth=4, learning_rate=0.1, min_samples_leaf=20, subsample=0.8),
    ("of", False): dict(rounds=60, max_depth=5, learning_rate=0.8, min_samples_leaf=1, subsample=1.0),
    ("of", True): dict(rounds=150, max_depth=7, learning_rate=0.7, min_samples_leaf=1, subsample=1.0),
}


def default_learner_config(
    learner: str, mode: str | None, setting: str | None = None, n: int = 0, overrides: dict | None = None
) -> LearnerConfig:
    """Registry lookup for the shipped hyperparameters.

    ``overrides`` replaces individual fields of the default record, letting
    config files pin their own values.
    """
    overrides = dict(overrides or {})
    if learner in (LINEAR, GROUND_TRUTH):
        if overrides:
            raise ConfigError(f"{learner} takes no hyperparameters")
        return LearnerConfig(learner=learner, mode=None)
    if mode not in ("ot", "of"):
        raise ConfigError(f"learner {learner!r} requires mode 'ot' or 'of'")
    key = (mode, n >= _LARGE_N)
    if learner == RIDGE_BASIS:
        base = dict(_RIDGE_DEFAULTS[key])
        base["interaction_pairs"] = _INTERACTION_PAIRS.get(setting, ())
        base.update(overrides)
        if "interaction_pairs" in base:
            base["interaction_pairs"] = tuple(tuple(p) for p in base["interaction_pairs"])
        return LearnerConfig(RIDGE_BASIS, mode, RidgeBasisParams(**base))
    if learner == BOOSTED_TREES:
        base = dict(_BOOSTED_DEFAULTS[key])
        base.update(overrides)
        return LearnerConfig(BOOSTED_TREES, mode, BoostedTreesParams(**base))
    raise ConfigError(f"unknown learner {learner!r}")


# ---------------------------------------------------------------------------
# Prediction models
# ---------------------------------------------------------------------------

class PredictionModel:
    """Immutable fitted function: an (m, p) matrix in, an m-vector out."""

    model_kind = "abstract"

    def __init__(self, n_features: int, provenance: dict | None = None):
        self.n_features = n_features
        self.provenance = dict(provenance or {})

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DataError(
                f"expected an (m, {self.n_features}) matrix, got shape {X.shape}"
            )
        if X.shape[0] == 0:
            return np.empty(0)
        return self._predict(X)

    def _predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class GroundTruthModel(PredictionModel):
    """The data-generating function behind the model interface."""

    model_kind = "ground_truth"

    def __init__(self, spec: dgp.DgpSpec):
        super().__init__(spec.p, {"learner": GROUND_TRUTH, "setting": spec.name})
        self.spec = spec

    def _predict(self, X):
        return dgp.ground_truth_values(self.spec, X)


class FunctionModel(PredictionModel):
    """Wrap an arbitrary vectorized function; handy for synthetic tests."""

    model_kind = "function"

    def __init__(self, fn, n_features: int):
        super().__init__(n_features, {"learner": "function"})
        self._fn = fn

    def _predict(self, X):
        return np.asarray(self._fn(X), dtype=float)


class LinearModel(PredictionModel):
    model_kind = LINEAR

    def __init__(self, coef: np.ndarray, intercept: float, provenance=None):
        super().__init__(coef.shape[0], provenance)
        self.coef = coef
        self.intercept = float(intercept)

    def _predict(self, X):
        return X @ self.coef + self.intercept


class RidgeBasisModel(PredictionModel):
    model_kind = RIDGE_BASIS

    def __init__(self, basis, coef, center, scale, intercept, provenance=None):
        super().__init__(basis.n_features, provenance)
        self.basis = basis
        self.coef = coef
        self.center = center
        self.scale = scale
        self.intercept = float(intercept)

    def _predict(self, X):
        Z = (self.basis.transform(X) - self.center) / self.scale
        return Z @ self.coef + self.intercept


class BoostedTreesModel(PredictionModel):
    model_kind = BOOSTED_TREES

    def __init__(self, ensemble: trees.TreeEnsemble, provenance=None):
        super().__init__(ensemble.n_features, provenance)
        self.ensemble = ensemble

    def _predict(self, X):
        return self.ensemble.predict(X)

    @property
    def used_features(self) -> frozenset[int]:
        return self.ensemble.used_features


def predict(model: PredictionModel, X: np.ndarray) -> np.ndarray:
    return model.predict(X)


def empirical_risk(model: PredictionModel, data: dgp.Dataset) -> float:
    """Mean squared prediction error on the given data."""
    if data.n == 0:
        raise DataError("empirical risk needs at least one sample")
    resid = data.target - model.predict(data.features)
    return float(np.mean(resid**2))


# ---------------------------------------------------------------------------
# Ridge on spline bases
# ---------------------------------------------------------------------------

class _SplineBasis:
    """Per-feature truncated-power columns plus tensor interaction columns.

    Each feature contributes [x, x^2, x^3, (x - k_1)_+^3, ...] with knots at
    interior empirical quantiles of the training sample; basis_size caps the
    per-feature column count. Interaction pairs contribute products of the
    two features' leading columns.
    """

    def __init__(self, X_train: np.ndarray, params: RidgeBasisParams):
        self.n_features = X_train.shape[1]
        self.params = params
        self.knots: list[np.ndarray] = []
        for j in range(self.n_features):
            n_knots = max(params.basis_size - 3, 0)
            if n_knots:
                probs = (np.arange(n_knots) + 1.0) / (n_knots + 1.0)
                knots = np.quantile(X_train[:, j], probs)
            else:
                knots = np.empty(0)
            self.knots.append(knots)
        self.pairs = params.interaction_pairs if params.include_interactions else ()
        for a, b in self.pairs:
            if not (0 <= a < self.n_features and 0 <= b < self.n_features):
                raise ConfigError(f"interaction pair ({a}, {b}) out of range")

    def _feature_columns(self, x: np.ndarray, j: int, limit: int | None = None) -> np.ndarray:
        size = self.params.basis_size if limit is None else limit
        cols = [x, x**2, x**3][: min(size, 3)]
        for k in self.knots[j][: max(size - 3, 0)]:
            cols.append(np.maximum(x - k, 0.0) ** 3)
        return np.column_stack(cols)

    def transform(self, X: np.ndarray) -> np.ndarray:
        blocks = [self._feature_columns(X[:, j], j) for j in range(self.n_features)]
        q = self.params.interaction_basis
        for a, b in self.pairs:
            A = self._feature_columns(X[:, a], a, limit=q)
            B = self._feature_columns(X[:, b], b, limit=q)
            blocks.append((A[:, :, None] * B[:, None, :]).reshape(X.shape[0], -1))
        return np.concatenate(blocks, axis=1)


def fit_ridge_basis(data: dgp.Dataset, config: LearnerConfig, seed=0) -> RidgeBasisModel:
    """Penalized least squares on the spline design.

    Columns are standardized with training statistics; the intercept is the
    training target mean and is not penalized. The normal equations are
    solved by a Cholesky factorization, which fails only if the penalty is
    too small to regularize duplicated columns.
    """
    if config.learner != RIDGE_BASIS:
        raise ConfigError("config.learner must be 'ridge_basis'")
    params = config.params or RidgeBasisParams()
    X, y = data.features, data.target
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("ridge_basis requires finite features and targets")
    basis = _SplineBasis(X, params)
    Z = basis.transform(X)
    center = Z.mean(axis=0)
    scale = Z.std(axis=0)
    scale[scale == 0.0] = 1.0  # constant columns become all-zero after centering
    Z = (Z - center) / scale
    ybar = float(y.mean())
    A = Z.T @ Z
    A[np.diag_indices_from(A)] += params.ridge_lambda
    try:
        cho = sla.cho_factor(A, lower=True)
        coef = sla.cho_solve(cho, Z.T @ (y - ybar))
    except (sla.LinAlgError, np.linalg.LinAlgError) as exc:
        raise FitError("ridge system is numerically singular; increase ridge_lambda") from exc
    if not np.all(np.isfinite(coef)):
        raise FitError("ridge solve produced non-finite coefficients")
    provenance = {"learner": config.label, "seed": seed, "n_train": data.n}
    return RidgeBasisModel(basis, coef, center, scale, ybar, provenance)


def fit_boosted_trees(data: dgp.Dataset, config: LearnerConfig, seed=0) -> BoostedTreesModel:
    """Gradient boosting on squared-error residuals.

    Rounds are fixed (no early stopping); each round may subsample rows with
    a per-round stream derived from the fit seed, keeping fits reproducible.
    """
    if config.learner != BOOSTED_TREES:
        raise ConfigError("config.learner must be 'boosted_trees'")
    params = config.params or BoostedTreesParams()
    X = np.ascontiguousarray(data.features, dtype=np.float64)
    y = data.target
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("boosted_trees requires finite features and targets")
    n = data.n
    if n < 2 * params.min_samples_leaf:
        raise FitError(
            f"need at least {2 * params.min_samples_leaf} samples for min_samples_leaf="
            f"{params.min_samples_leaf}, got {n}"
        )
    rng = as_rng(seed)
    base = float(y.mean())
    ensemble = trees.TreeEnsemble(base, params.learning_rate, X.shape[1])
    pred = np.full(n, base)
    m_sub = max(int(math.ceil(params.subsample * n)), 2 * params.min_samples_leaf)
    m_sub = min(m_sub, n)
    all_rows = np.arange(n, dtype=np.int64)
    for _ in range(params.rounds):
        resid = y - pred
        if params.subsample < 1.0:
            rows = np.sort(rng.choice(n, size=m_sub, replace=False)).astype(np.int64)
        else:
            rows = all_rows
        tree = trees.grow_tree(X, rows, resid, params.max_depth, params.min_samples_leaf)
        ensemble.add_tree(*tree)
        tmp = np.empty(n)
        trees._predict_tree(X, *tree, tmp)
        pred += params.learning_rate * tmp
    provenance = {"learner": config.label, "seed": seed, "n_train": n}
    return BoostedTreesModel(ensemble, provenance)


def fit_linear(data: dgp.Dataset) -> LinearModel:
    """Ordinary least squares with intercept; requires n > p and full rank."""
    X, y = data.features, data.target
    n, p = X.shape
    if n <= p:
        raise FitError(f"linear fit needs n > p, got n={n}, p={p}")
    design = np.column_stack([np.ones(n), X])
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < p + 1:
        raise FitError("rank-deficient design matrix")
    return LinearModel(coef[1:], coef[0], {"learner": LINEAR, "n_train": n})


# ---------------------------------------------------------------------------
# Fitters: uniform fit interface used by strategies and the harness
# ---------------------------------------------------------------------------

class Fitter:
    """Binds a learner config so strategies can fit without knowing kinds."""

    def __init__(self, config: LearnerConfig, spec: dgp.DgpSpec | None = None):
        self.config = config
        self.spec = spec
        if config.learner == GROUND_TRUTH and spec is None:
            raise ConfigError("ground_truth fitter requires the DGP spec")

    @property
    def label(self) -> str:
        return self.config.label

    def fit(self, data: dgp.Dataset, seed=0) -> PredictionModel:
        kind = self.config.learner
        if kind == RIDGE_BASIS:
            return fit_ridge_basis(data, self.config, seed)
        if kind == BOOSTED_TREES:
            return fit_boosted_trees(data, self.config, seed)
        if kind == LINEAR:
            return fit_linear(data)
        if kind == GROUND_TRUTH:
            return GroundTruthModel(self.spec)
        raise ConfigError(f"unknown learner {kind!r}")
