"""Feature effect estimators on a shared theoretical-quantile grid.

All estimators evaluate one feature of interest on the same grid of G
marginal quantiles at probabilities (g + 1/2) / G. The first and last grid
points are kept for accumulation but masked from evaluation to avoid
boundary artifacts. The grid doubles as the bin edges for accumulated
local effects, giving K = G - 1 bins that are identical across sample
sizes and estimation strategies.

Conventions:

- Marginal-average (PD) curves report the per-grid-point mean of the
  individual conditional curves.
- Accumulated (ALE) curves report, at each edge z_k, the cumulative sum of
  per-bin mean finite differences f(z_k, x_C) - f(z_{k-1}, x_C); the value
  at the first grid point is the accumulation anchor 0. Samples outside
  (z_0, z_K] are clamped into the first/last bin. Empty bins contribute 0
  and raise a diagnostic flag; they are never merged away.
- Centering subtracts a weighted mean over the evaluated points: uniform
  weights for marginal-average curves (the grid is equal-probability), bin
  masses renormalized over the evaluated edges for accumulated curves.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import dgp
from .exceptions import ConfigError, DataError, EstimationError, OracleError
from .models import GroundTruthModel, PredictionModel
from .seeding import as_rng

PD = "pd"
ALE = "ale"
KINDS = (PD, ALE)

THEORETICAL_QUANTILE = "theoretical_quantile"
EXPLICIT = "explicit"


@dataclass(frozen=True)
class EffectGrid:
    """Evaluation grid for one feature; eval_mask marks reported points."""

    feature: int
    points: np.ndarray
    eval_mask: np.ndarray
    source: str = EXPLICIT

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        mask = np.asarray(self.eval_mask, dtype=bool)
        if pts.ndim != 1 or pts.shape[0] < 2:
            raise ConfigError("grid needs at least two points")
        if np.any(np.diff(pts) <= 0):
            raise ConfigError("grid points must be strictly increasing")
        if mask.shape != pts.shape:
            raise ConfigError("eval_mask must align with points")
        if not mask.any():
            raise ConfigError("at least one grid point must be evaluated")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "eval_mask", mask)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def eval_points(self) -> np.ndarray:
        return self.points[self.eval_mask]


@dataclass(frozen=True)
class EffectCurve:
    """A PD or ALE curve; values align with grid.eval_points."""

    feature: int
    kind: str
    centered: bool
    grid: EffectGrid
    values: np.ndarray
    n_used: int
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (int(self.grid.eval_mask.sum()),):
            raise ConfigError("values must align with the evaluated grid points")
        if not np.all(np.isfinite(vals)):
            raise EstimationError("effect curve contains non-finite values")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class BinPartition:
    """Interval partition (z_{k-1}, z_k], k = 1..K, with clamped assignment."""

    edges: np.ndarray
    counts: np.ndarray
    assignment: np.ndarray
    grid: EffectGrid

    @property
    def n_bins(self) -> int:
        return self.edges.shape[0] - 1


def build_grid(spec: dgp.DgpSpec, feature: int, G: int = 100) -> EffectGrid:
    """Equal-probability interior grid at probabilities (g + 1/2) / G."""
    if G < 3:
        raise ConfigError("G must be >= 3")
    probs = (np.arange(G) + 0.5) / G
    points = np.asarray(dgp.theoretical_quantile(spec, feature, probs))
    mask = np.ones(G, dtype=bool)
    mask[0] = mask[-1] = False
    return EffectGrid(feature, points, mask, THEORETICAL_QUANTILE)


def explicit_grid(feature: int, points, eval_mask=None) -> EffectGrid:
    points = np.asarray(points, dtype=float)
    if eval_mask is None:
        eval_mask = np.ones(points.shape[0], dtype=bool)
    return EffectGrid(feature, points, np.asarray(eval_mask, dtype=bool), EXPLICIT)


def estimate_ice(model: PredictionModel, data: dgp.Dataset, grid: EffectGrid) -> np.ndarray:
    """Individual conditional curves: entry (i, g) is the prediction at row
    i with the feature of interest overwritten by grid point g."""
    if data.n == 0:
        raise DataError("need at least one sample")
    X = data.features.copy()
    out = np.empty((data.n, grid.n_points))
    for g, point in enumerate(grid.points):
        X[:, grid.feature] = point
        out[:, g] = model.predict(X)
    return out


def estimate_pd(model: PredictionModel, data: dgp.Dataset, grid: EffectGrid) -> EffectCurve:
    """Monte Carlo marginal-average curve (uncentered).

    Streams over grid points so the full individual-curve matrix is never
    materialized.
    """
    if data.n == 0:
        raise DataError("need at least one sample")
    X = data.features.copy()
    full = np.empty(grid.n_points)
    for g, point in enumerate(grid.points):
        X[:, grid.feature] = point
        full[g] = float(np.mean(model.predict(X)))
    return EffectCurve(
        feature=grid.feature,
        kind=PD,
        centered=False,
        grid=grid,
        values=full[grid.eval_mask],
        n_used=data.n,
    )


def assign_bins(edges: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """1-based bin index per sample; out-of-range values clamp to bin 1/K."""
    K = edges.shape[0] - 1
    idx = np.searchsorted(edges, xs, side="left")
    return np.clip(idx, 1, K)


def make_bins(grid: EffectGrid, data: dgp.Dataset) -> BinPartition:
    """Bins with edges equal to the grid points, counted over the data."""
    if grid.n_points < 2:
        raise ConfigError("need at least two grid points to form bins")
    xs = data.features[:, grid.feature]
    assignment = assign_bins(grid.points, xs)
    K = grid.n_points - 1
    counts = np.bincount(assignment, minlength=K + 1)[1:]
    return BinPartition(edges=grid.points, counts=counts, assignment=assignment, grid=grid)


def estimate_ale(model: PredictionModel, data: dgp.Dataset, bins: BinPartition) -> EffectCurve:
    """Accumulated local effects (uncentered) on the partition's edges.

    The curve value at grid point g is the accumulation through edge z_g
    (0 at the first point). Empty bins contribute 0 and are flagged.
    """
    if data.n == 0:
        raise DataError("need at least one sample")
    grid = bins.grid
    edges = bins.edges
    assignment = bins.assignment
    counts = bins.counts
    if not np.any(counts > 0):
        raise EstimationError("all accumulation bins are empty")
    X_hi = data.features.copy()
    X_lo = data.features.copy()
    X_hi[:, grid.feature] = edges[assignment]
    X_lo[:, grid.feature] = edges[assignment - 1]
    diffs = model.predict(X_hi) - model.predict(X_lo)
    sums = np.bincount(assignment, weights=diffs, minlength=bins.n_bins + 1)[1:]
    means = np.divide(sums, counts, out=np.zeros(bins.n_bins), where=counts > 0)
    full = np.concatenate([[0.0], np.cumsum(means)])
    empty = counts == 0
    return EffectCurve(
        feature=grid.feature,
        kind=ALE,
        centered=False,
        grid=grid,
        values=full[grid.eval_mask],
        n_used=data.n,
        diagnostics={"bin_counts": counts, "empty_bins": empty, "n_empty_bins": int(empty.sum())},
    )


def centering_weights(curve_kind: str, grid: EffectGrid) -> np.ndarray:
    """Probability weights over the evaluated points used for centering.

    The equal-probability grid makes the marginal-measure discretization
    uniform for marginal-average curves; accumulated curves weight each
    evaluated edge by its bin mass 1/K, renormalized, which is uniform too.
    """
    n_eval = int(grid.eval_mask.sum())
    if curve_kind == PD:
        return np.full(n_eval, 1.0 / n_eval)
    if curve_kind == ALE:
        w = np.full(grid.n_points, 1.0 / (grid.n_points - 1))
        w[0] = 0.0  # the anchor point is not an edge value
        w = w[grid.eval_mask]
        total = w.sum()
        if total <= 0:
            raise ConfigError("no evaluated edge carries centering weight")
        return w / total
    raise ConfigError(f"unknown curve kind {curve_kind!r}")


def center_curve(curve: EffectCurve, weights: np.ndarray | None = None) -> EffectCurve:
    """Subtract the weighted mean so the curve has zero weighted mean."""
    if weights is None:
        weights = centering_weights(curve.kind, curve.grid)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != curve.values.shape:
        raise ConfigError("weights must align with the curve values")
    if np.any(weights < 0) or not np.isclose(weights.sum(), 1.0, atol=1e-9):
        raise ConfigError("weights must be nonnegative and sum to 1")
    constant = float(weights @ curve.values)
    diag = dict(curve.diagnostics)
    diag["centering_constant"] = constant
    return replace(curve, values=curve.values - constant, centered=True, diagnostics=diag)


def estimate_ground_truth_effect(
    spec: dgp.DgpSpec,
    feature: int,
    kind: str,
    grid: EffectGrid,
    n_gt: int = 10_000,
    seed=0,
) -> EffectCurve:
    """Centered effect of the data-generating function itself, estimated on
    fresh samples with the shared grid/bins (so the binned targets match
    those of any model estimate using the same grid)."""
    if n_gt < 1:
        raise ConfigError("n_gt must be >= 1")
    X = dgp.sample_features(spec, n_gt, seed)
    data = dgp.Dataset(X, dgp.ground_truth_values(spec, X), spec_id=spec.name)
    model = GroundTruthModel(spec)
    if kind == PD:
        curve = estimate_pd(model, data, grid)
    elif kind == ALE:
        curve = estimate_ale(model, data, make_bins(grid, data))
    else:
        raise ConfigError(f"unknown effect kind {kind!r}")
    return center_curve(curve)


def binned_population_ale(
    spec: dgp.DgpSpec,
    model: PredictionModel,
    bins: BinPartition,
    n_mc: int = 10_000,
    seed=0,
) -> EffectCurve:
    """Population version of the binned uncentered accumulated effect.

    Per bin, the conditional expectation of the finite difference is
    approximated with n_mc draws of the complement features given the
    feature of interest lying in that bin (tail mass clamps into the first
    and last bin, matching the estimator's assignment rule). Used as the
    unbiasedness oracle for the empirical estimator.
    """
    grid = bins.grid
    edges = bins.edges
    feature = grid.feature
    rng = as_rng(seed)
    lo_support, hi_support = dgp.marginal_support(spec.marginals[feature])
    means = np.empty(bins.n_bins)
    ses = np.empty(bins.n_bins)
    for k in range(1, bins.n_bins + 1):
        lo = -np.inf if k == 1 else edges[k - 1]
        hi = np.inf if k == bins.n_bins else edges[k]
        lo = max(lo, lo_support) if np.isfinite(lo_support) else lo
        hi = min(hi, hi_support) if np.isfinite(hi_support) else hi
        x_s = dgp.sample_feature_in_range(spec, feature, lo, hi, n_mc, rng)
        rows = dgp.sample_joint_given_feature(spec, feature, x_s, rng)
        hi_rows = rows.copy()
        lo_rows = rows.copy()
        hi_rows[:, feature] = edges[k]
        lo_rows[:, feature] = edges[k - 1]
        d = model.predict(hi_rows) - model.predict(lo_rows)
        means[k - 1] = float(np.mean(d))
        ses[k - 1] = float(np.std(d, ddof=1) / np.sqrt(n_mc)) if n_mc > 1 else np.inf
    full = np.concatenate([[0.0], np.cumsum(means)])
    acc_var = np.concatenate([[0.0], np.cumsum(ses**2)])
    return EffectCurve(
        feature=feature,
        kind=ALE,
        centered=False,
        grid=grid,
        values=full[grid.eval_mask],
        n_used=n_mc * bins.n_bins,
        diagnostics={
            "bin_mc_se": ses,
            "edge_se": np.sqrt(acc_var)[grid.eval_mask],
        },
    )
