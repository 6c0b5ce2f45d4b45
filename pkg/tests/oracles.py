"""Independent oracles shared by the test modules.

These deliberately re-derive quantities through different routes than the
library (per-sample statistics, closed-form truncated-normal moments) so
the tests do not simply re-run the code under test.
"""

from __future__ import annotations

import numpy as np
from scipy import stats

from effektor import dgp, effects


def pd_centered_and_se(model, data, grid, chunk_rows=20_000):
    """Centered marginal-average curve plus its pointwise standard error.

    Works from the row-centered individual curves: the centered estimate is
    their column mean and, rows being i.i.d., the SE is the column sample
    standard deviation over sqrt(n). Chunked so the full matrix for large n
    never materializes.
    """
    w = effects.centering_weights(effects.PD, grid)
    n = data.n
    n_eval = int(grid.eval_mask.sum())
    s1 = np.zeros(n_eval)
    s2 = np.zeros(n_eval)
    for start in range(0, n, chunk_rows):
        sub = data.subset(slice(start, min(start + chunk_rows, n)))
        ice = effects.estimate_ice(model, sub, grid)[:, grid.eval_mask]
        row_centered = ice - (ice @ w)[:, None]
        s1 += row_centered.sum(axis=0)
        s2 += (row_centered**2).sum(axis=0)
    mean = s1 / n
    var = (s2 - n * mean**2) / (n - 1)
    return mean, np.sqrt(np.maximum(var, 0.0) / n)


def ale_centered_and_se(model, data, bins):
    """Centered accumulated curve plus pointwise SE from per-bin spread.

    Bin means are independent given the assignment, so the variance of any
    linear combination (accumulation then centering) is the weighted sum of
    per-bin mean variances s_j^2 / n_j.
    """
    grid = bins.grid
    edges = bins.edges
    assignment = bins.assignment
    counts = bins.counts
    X_hi = data.features.copy()
    X_lo = data.features.copy()
    X_hi[:, grid.feature] = edges[assignment]
    X_lo[:, grid.feature] = edges[assignment - 1]
    diffs = model.predict(X_hi) - model.predict(X_lo)
    K = bins.n_bins
    sums = np.bincount(assignment, weights=diffs, minlength=K + 1)[1:]
    means = np.divide(sums, counts, out=np.zeros(K), where=counts > 0)
    sq = np.bincount(assignment, weights=diffs**2, minlength=K + 1)[1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        svar = (sq - counts * means**2) / np.maximum(counts - 1, 1)
    v = np.where(counts > 1, svar / np.maximum(counts, 1), 0.0)

    full = np.concatenate([[0.0], np.cumsum(means)])
    w_full = np.zeros(grid.n_points)
    w_full[grid.eval_mask] = effects.centering_weights(effects.ALE, grid)
    centered_full = full - w_full @ full
    # weight mass of evaluated edges at grid index >= j, per bin j
    W = np.cumsum(w_full[::-1])[::-1]
    eval_idx = np.flatnonzero(grid.eval_mask)
    se = np.empty(eval_idx.shape[0])
    bin_js = np.arange(1, K + 1)
    for out_i, g in enumerate(eval_idx):
        a = (bin_js <= g).astype(float) - W[bin_js]
        se[out_i] = np.sqrt(float(a**2 @ v))
    return centered_full[grid.eval_mask], se


def snc_binned_ale_exact(feature: int, edges: np.ndarray) -> np.ndarray:
    """Exact binned population uncentered accumulated effect for the
    correlated-normal setting, at every edge z_1..z_K.

    Tail mass is clamped into the first/last bin exactly like the
    estimator's assignment rule. Uses the truncated-normal mean
    E[Z | a < Z <= b] = (phi(a) - phi(b)) / (Phi(b) - Phi(a)).
    """
    rho = dgp.RHO
    K = edges.shape[0] - 1
    incs = np.empty(K)
    for k in range(1, K + 1):
        a = -np.inf if k == 1 else edges[k - 1]
        b = np.inf if k == K else edges[k]
        num = stats.norm.pdf(a) - stats.norm.pdf(b)
        den = stats.norm.cdf(b) - stats.norm.cdf(a)
        m = num / den
        dz = edges[k] - edges[k - 1]
        if feature == 0:
            incs[k - 1] = dz * (1.0 + rho * m)
        elif feature == 1:
            incs[k - 1] = (edges[k] ** 2 - edges[k - 1] ** 2) / 2.0 + rho * m * dz
        else:
            incs[k - 1] = 0.0
    return np.cumsum(incs)
