"""Error-component estimators for ensembles of effect curves.

Given M curves from independently refitted models, a reference truth curve,
and optionally an (M, R) block of re-estimates under fresh data per model:

- mse:      (1/M) sum_m (truth - curve_m)^2, per grid point.
- bias:     truth - mean_m curve_m (sign kept per point; grid aggregation
            reports the mean absolute value so signs cannot cancel).
- var:      unbiased sample variance across the M curves.
- var_est:  (1/(M(R-1))) sum_m sum_r (curve_mr - mean_r curve_mr)^2, the
            pooled within-model variance under re-estimation.
- var_model = var - var_est, reported as missing where the subtraction
            goes negative (an instability of the estimates, not clamped).

These relate algebraically: mse = bias^2 + ((M-1)/M) var, per point.

`check_variance_bounds` Monte Carlo evaluates both sides of the two
Jensen-type inequalities bounding model variance (pointwise model variance
for marginal-average curves; locally averaged finite-difference variance
for accumulated curves) as a diagnostic, not as part of the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dgp, effects
from .exceptions import ConfigError
from .models import PredictionModel
from .seeding import as_rng


@dataclass
class CurveEnsemble:
    """M aligned curves, optional (M, R) repeat block and reference truth."""

    curves: np.ndarray
    truth: np.ndarray | None = None
    repeats: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.curves = np.asarray(self.curves, dtype=float)
        if self.curves.ndim != 2:
            raise ConfigError("curves must be an (M, G') matrix")
        if self.truth is not None:
            self.truth = np.asarray(self.truth, dtype=float)
            if self.truth.shape != (self.curves.shape[1],):
                raise ConfigError("truth must align with the curve grid")
        if self.repeats is not None:
            self.repeats = np.asarray(self.repeats, dtype=float)
            if self.repeats.ndim != 3 or self.repeats.shape[2] != self.curves.shape[1]:
                raise ConfigError("repeats must be an (M, R, G') block")

    @property
    def m(self) -> int:
        return self.curves.shape[0]

    @property
    def r(self) -> int:
        return 0 if self.repeats is None else self.repeats.shape[1]


def _require_truth(ens: CurveEnsemble) -> np.ndarray:
    if ens.truth is None:
        raise ConfigError("this estimator needs a truth curve")
    return ens.truth


def mse_hat(ens: CurveEnsemble) -> np.ndarray:
    truth = _require_truth(ens)
    return np.mean((truth[None, :] - ens.curves) ** 2, axis=0)


def bias_hat(ens: CurveEnsemble) -> np.ndarray:
    truth = _require_truth(ens)
    return truth - ens.curves.mean(axis=0)


def var_hat(ens: CurveEnsemble) -> np.ndarray:
    if ens.m < 2:
        raise ConfigError("variance needs M >= 2 curves")
    return np.var(ens.curves, axis=0, ddof=1)


def var_est_hat(ens: CurveEnsemble) -> np.ndarray:
    if ens.repeats is None:
        raise ConfigError("estimation variance needs the repeat block")
    if ens.r < 2:
        raise ConfigError("estimation variance needs R >= 2 repeats")
    within = np.var(ens.repeats, axis=1, ddof=1)  # (M, G')
    return within.mean(axis=0)


def split_variance(var_total: np.ndarray, var_est: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """var_model = var_total - var_est; negative entries become NaN plus a
    missing flag instead of being clamped."""
    var_total = np.asarray(var_total, dtype=float)
    var_est = np.asarray(var_est, dtype=float)
    if var_total.shape != var_est.shape:
        raise ConfigError("variance vectors must align")
    diff = var_total - var_est
    missing = diff < 0
    var_model = np.where(missing, np.nan, diff)
    return var_model, missing


def aggregate(per_point: dict[str, np.ndarray]) -> dict[str, float]:
    """Grid averages; bias aggregates as mean |bias|, missing values are
    dropped (NaN-aware) and an all-missing metric aggregates to NaN."""
    out = {}
    for name, values in per_point.items():
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            raise ConfigError("cannot aggregate an empty vector")
        if name == "bias":
            values = np.abs(values)
        with np.errstate(invalid="ignore"):
            out[name] = float(np.nanmean(values)) if np.any(np.isfinite(values)) else float("nan")
    return out


@dataclass
class ErrorReport:
    """Per-point and grid-aggregated error components for one cell."""

    per_point: dict[str, np.ndarray]
    aggregates: dict[str, float]
    m: int
    r: int = 0
    flags: dict = field(default_factory=dict)


def build_error_report(ens: CurveEnsemble) -> ErrorReport:
    per_point: dict[str, np.ndarray] = {}
    flags: dict = {}
    if ens.truth is not None:
        per_point["mse"] = mse_hat(ens)
        per_point["bias"] = bias_hat(ens)
    if ens.m >= 2:
        per_point["var"] = var_hat(ens)
    if ens.repeats is not None and ens.r >= 2:
        per_point["var_est"] = var_est_hat(ens)
        if "var" in per_point:
            var_model, missing = split_variance(per_point["var"], per_point["var_est"])
            per_point["var_model"] = var_model
            flags["var_model_missing"] = missing
    return ErrorReport(per_point, aggregate(per_point), m=ens.m, r=ens.r, flags=flags)


# ---------------------------------------------------------------------------
# Jensen bound diagnostics
# ---------------------------------------------------------------------------

@dataclass
class VarianceBoundCheck:
    """Monte Carlo values of (lhs, rhs) for the two model-variance bounds at
    every evaluated grid point."""

    grid: effects.EffectGrid
    pd_lhs: np.ndarray
    pd_rhs: np.ndarray
    ale_lhs: np.ndarray
    ale_rhs: np.ndarray

    def satisfied(self, slack: float = 0.05) -> bool:
        tol_pd = slack * np.maximum(self.pd_rhs, 1e-12)
        tol_ale = slack * np.maximum(self.ale_rhs, 1e-12)
        return bool(
            np.all(self.pd_lhs <= self.pd_rhs + tol_pd)
            and np.all(self.ale_lhs <= self.ale_rhs + tol_ale)
        )


def check_variance_bounds(
    models: list[PredictionModel],
    spec: dgp.DgpSpec,
    feature: int,
    grid: effects.EffectGrid,
    n_mc: int = 20_000,
    seed=0,
) -> VarianceBoundCheck:
    """Estimate both sides of the model-variance bounds across a model
    ensemble, with common random numbers shared across models.

    For the marginal-average curve: variance (over models) of the average
    prediction versus the average (over the complement law) of the
    pointwise prediction variance. For the accumulated curve: variance of
    the accumulated per-bin conditional mean differences versus the bin
    count times the accumulated local finite-difference variance.
    """
    if len(models) < 2:
        raise ConfigError("bound check needs at least two models")
    rng = as_rng(seed)
    M = len(models)
    eval_idx = np.flatnonzero(grid.eval_mask)

    # marginal-average side: one shared complement sample for all models
    X = dgp.sample_features(spec, n_mc, rng)
    preds = np.empty((M, n_mc))
    pd_lhs = np.empty(eval_idx.shape[0])
    pd_rhs = np.empty(eval_idx.shape[0])
    Xg = X.copy()
    for out_i, g in enumerate(eval_idx):
        Xg[:, feature] = grid.points[g]
        for m, model in enumerate(models):
            preds[m] = model.predict(Xg)
        pd_lhs[out_i] = float(np.var(preds.mean(axis=1), ddof=1))
        pd_rhs[out_i] = float(np.mean(np.var(preds, axis=0, ddof=1)))

    # accumulated side: shared conditional samples per bin
    edges = grid.points
    K = grid.n_points - 1
    n_bin = max(n_mc // K, 50)
    lo_support, hi_support = dgp.marginal_support(spec.marginals[feature])
    bin_means = np.empty((M, K))
    bin_rhs = np.empty(K)
    for k in range(1, K + 1):
        lo = -np.inf if k == 1 else edges[k - 1]
        hi = np.inf if k == K else edges[k]
        lo = max(lo, lo_support) if np.isfinite(lo_support) else lo
        hi = min(hi, hi_support) if np.isfinite(hi_support) else hi
        x_s = dgp.sample_feature_in_range(spec, feature, lo, hi, n_bin, rng)
        rows = dgp.sample_joint_given_feature(spec, feature, x_s, rng)
        hi_rows = rows.copy()
        lo_rows = rows.copy()
        hi_rows[:, feature] = edges[k]
        lo_rows[:, feature] = edges[k - 1]
        D = np.empty((M, n_bin))
        for m, model in enumerate(models):
            D[m] = model.predict(hi_rows) - model.predict(lo_rows)
        bin_means[:, k - 1] = D.mean(axis=1)
        bin_rhs[k - 1] = float(np.mean(np.var(D, axis=0, ddof=1)))
    acc = np.cumsum(bin_means, axis=1)  # (M, K) accumulated per model
    acc_rhs = np.cumsum(bin_rhs)
    ale_lhs = np.empty(eval_idx.shape[0])
    ale_rhs = np.empty(eval_idx.shape[0])
    for out_i, g in enumerate(eval_idx):
        if g == 0:
            ale_lhs[out_i] = 0.0
            ale_rhs[out_i] = 0.0
            continue
        k = g  # edge z_g closes bin g
        ale_lhs[out_i] = float(np.var(acc[:, k - 1], ddof=1))
        ale_rhs[out_i] = float(k * acc_rhs[k - 1])
    return VarianceBoundCheck(grid, pd_lhs, pd_rhs, ale_lhs, ale_rhs)
