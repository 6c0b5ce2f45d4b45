"""Data-generating processes for the simulation study.

Three settings of increasing realism, all with two dummy features that the
target function ignores:

- ``SimpleNormalCorrelated``: f(x) = x1 + x2^2/2 + x1*x2 with standard
  normal features and corr(X1, X2) = 0.9 (dummies X3, X4).
- ``Friedman1``: f(x) = 10 sin(pi x1 x2) + 20 (x3 - 1/2)^2 + 10 x4 + 5 x5
  with seven i.i.d. U(0, 1) features (dummies X6, X7).
- ``Feynman12916``: wave-interference amplitude
  f(x) = sqrt(x1^2 + x2^2 + 2 x1 x2 cos(t1 - t2)) with amplitudes
  LogU(0.1, 10), phases U(0, 2 pi), dummies U(0, 1), all independent.

Targets are y = f(x) + eps with eps ~ N(0, sigma_eps^2), where sigma_eps
is calibrated on a noiseless pilot sample so that sd(f) / sigma_eps equals
a requested signal-to-noise ratio (5 by default).

Closed-form marginal (PD-style) and accumulated-derivative (ALE-style)
effects are available for the first two settings; the one non-elementary
integral (the sin term's centering constant) is evaluated by adaptive
quadrature and cached.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import integrate, special

from .exceptions import AnalyticUnavailableError, CalibrationError, ConfigError, OracleError
from .seeding import as_rng

# Pilot sample for noise calibration uses one fixed, dedicated stream so a
# given (setting, snr) always maps to the same sigma_eps across runs.
PILOT_SEED = 76_091_229
DEFAULT_SNR = 5.0
DEFAULT_PILOT_N = 1_000_000


# ---------------------------------------------------------------------------
# Marginal distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StandardNormal:
    pass


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float


@dataclass(frozen=True)
class LogUniform:
    low: float
    high: float


Marginal = Union[StandardNormal, Uniform, LogUniform]


def marginal_quantile(marginal: Marginal, p):
    """Inverse CDF of a marginal; p must lie strictly inside (0, 1)."""
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("quantile probability must lie in the open interval (0, 1)")
    if isinstance(marginal, StandardNormal):
        out = special.ndtri(p)
    elif isinstance(marginal, Uniform):
        out = marginal.low + (marginal.high - marginal.low) * p
    elif isinstance(marginal, LogUniform):
        la, lb = np.log(marginal.low), np.log(marginal.high)
        out = np.exp(la + p * (lb - la))
    else:
        raise TypeError(f"unknown marginal {marginal!r}")
    return out if out.ndim else float(out)


def marginal_cdf(marginal: Marginal, x):
    x = np.asarray(x, dtype=float)
    if isinstance(marginal, StandardNormal):
        out = special.ndtr(x)
    elif isinstance(marginal, Uniform):
        out = np.clip((x - marginal.low) / (marginal.high - marginal.low), 0.0, 1.0)
    elif isinstance(marginal, LogUniform):
        la, lb = np.log(marginal.low), np.log(marginal.high)
        out = np.clip((np.log(np.maximum(x, 1e-300)) - la) / (lb - la), 0.0, 1.0)
    else:
        raise TypeError(f"unknown marginal {marginal!r}")
    return out if out.ndim else float(out)


def marginal_support(marginal: Marginal) -> tuple[float, float]:
    if isinstance(marginal, StandardNormal):
        return (-np.inf, np.inf)
    return (marginal.low, marginal.high)


def sample_marginal(marginal: Marginal, n: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(marginal, StandardNormal):
        return rng.standard_normal(n)
    if isinstance(marginal, Uniform):
        return rng.uniform(marginal.low, marginal.high, n)
    if isinstance(marginal, LogUniform):
        return np.exp(rng.uniform(np.log(marginal.low), np.log(marginal.high), n))
    raise TypeError(f"unknown marginal {marginal!r}")


# ---------------------------------------------------------------------------
# Specs and datasets
# ---------------------------------------------------------------------------

SIMPLE_NORMAL_CORRELATED = "SimpleNormalCorrelated"
FRIEDMAN1 = "Friedman1"
FEYNMAN12916 = "Feynman12916"

RHO = 0.9  # corr(X1, X2) in SimpleNormalCorrelated


@dataclass(frozen=True)
class DgpSpec:
    """One data setting: feature law, target function id, dummy features."""

    name: str
    p: int
    marginals: tuple[Marginal, ...]
    correlation: np.ndarray
    dummy_features: tuple[int, ...]

    def __post_init__(self):
        corr = np.asarray(self.correlation, dtype=float)
        if corr.shape != (self.p, self.p):
            raise ConfigError(f"correlation must be {self.p}x{self.p}, got {corr.shape}")
        if not np.allclose(corr, corr.T, atol=1e-12):
            raise ConfigError("correlation matrix must be symmetric")
        if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
            raise ConfigError("correlation matrix must have unit diagonal")
        try:
            np.linalg.cholesky(corr)
        except np.linalg.LinAlgError as exc:
            raise ConfigError("correlation matrix must be positive definite") from exc
        if len(self.marginals) != self.p:
            raise ConfigError("one marginal per feature required")
        if any(j < 0 or j >= self.p for j in self.dummy_features):
            raise ConfigError("dummy feature index out of range")
        corr.setflags(write=False)
        object.__setattr__(self, "correlation", corr)

    @property
    def has_correlation(self) -> bool:
        return not np.allclose(self.correlation, np.eye(self.p))


@dataclass(frozen=True)
class Dataset:
    """An (X, y) sample with provenance back to the generating spec."""

    features: np.ndarray
    target: np.ndarray
    spec_id: str = ""

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.target, dtype=float)
        if X.ndim != 2:
            raise ConfigError("features must be a 2-d array")
        if y.shape != (X.shape[0],):
            raise ConfigError("target length must equal the feature row count")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "target", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.target[idx], self.spec_id)


@dataclass(frozen=True)
class NoiseCalibration:
    sigma_eps: float
    snr: float
    pilot_n: int

    def __post_init__(self):
        # sigma_eps = 0 is admitted so noiseless datasets can be drawn.
        if self.sigma_eps < 0:
            raise ConfigError("sigma_eps must be nonnegative")
        if not self.snr > 0:
            raise ConfigError("snr must be positive")


def simple_normal_correlated() -> DgpSpec:
    corr = np.eye(4)
    corr[0, 1] = corr[1, 0] = RHO
    return DgpSpec(
        name=SIMPLE_NORMAL_CORRELATED,
        p=4,
        marginals=tuple(StandardNormal() for _ in range(4)),
        correlation=corr,
        dummy_features=(2, 3),
    )


def friedman1() -> DgpSpec:
    return DgpSpec(
        name=FRIEDMAN1,
        p=7,
        marginals=tuple(Uniform(0.0, 1.0) for _ in range(7)),
        correlation=np.eye(7),
        dummy_features=(5, 6),
    )


def feynman12916() -> DgpSpec:
    marginals = (
        LogUniform(0.1, 10.0),
        LogUniform(0.1, 10.0),
        Uniform(0.0, 2.0 * np.pi),
        Uniform(0.0, 2.0 * np.pi),
        Uniform(0.0, 1.0),
        Uniform(0.0, 1.0),
    )
    return DgpSpec(
        name=FEYNMAN12916,
        p=6,
        marginals=marginals,
        correlation=np.eye(6),
        dummy_features=(4, 5),
    )


SETTINGS = {
    SIMPLE_NORMAL_CORRELATED: simple_normal_correlated,
    FRIEDMAN1: friedman1,
    FEYNMAN12916: feynman12916,
}

_ALIASES = {
    "simplenormalcorrelated": SIMPLE_NORMAL_CORRELATED,
    "simple_normal_correlated": SIMPLE_NORMAL_CORRELATED,
    "snc": SIMPLE_NORMAL_CORRELATED,
    "friedman1": FRIEDMAN1,
    "feynman12916": FEYNMAN12916,
    "feynman_i_29_16": FEYNMAN12916,
}


def make_spec(name: str) -> DgpSpec:
    key = _ALIASES.get(name.lower().replace("-", "_"), name)
    if key not in SETTINGS:
        raise ConfigError(f"unknown setting {name!r}; known: {sorted(SETTINGS)}")
    return SETTINGS[key]()


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_features(spec: DgpSpec, n: int, seed) -> np.ndarray:
    """Draw n i.i.d. rows from the joint feature law.

    Correlated settings require all-normal marginals and use the Cholesky
    factor of the correlation matrix; independent settings draw each
    marginal directly (log-uniforms as exp of a uniform on the log scale).
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = as_rng(seed)
    if spec.has_correlation:
        if not all(isinstance(m, StandardNormal) for m in spec.marginals):
            raise ConfigError("correlated sampling implemented for normal marginals only")
        L = np.linalg.cholesky(spec.correlation)
        return rng.standard_normal((n, spec.p)) @ L.T
    X = np.empty((n, spec.p))
    for j, marginal in enumerate(spec.marginals):
        X[:, j] = sample_marginal(marginal, n, rng)
    return X


def ground_truth_values(spec: DgpSpec, X: np.ndarray) -> np.ndarray:
    """Evaluate the setting's target function f on rows of X."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != spec.p:
        raise ConfigError(f"expected an (n, {spec.p}) matrix, got shape {X.shape}")
    if spec.name == SIMPLE_NORMAL_CORRELATED:
        return X[:, 0] + X[:, 1] ** 2 / 2.0 + X[:, 0] * X[:, 1]
    if spec.name == FRIEDMAN1:
        return (
            10.0 * np.sin(np.pi * X[:, 0] * X[:, 1])
            + 20.0 * (X[:, 2] - 0.5) ** 2
            + 10.0 * X[:, 3]
            + 5.0 * X[:, 4]
        )
    if spec.name == FEYNMAN12916:
        x1, x2 = X[:, 0], X[:, 1]
        return np.sqrt(x1**2 + x2**2 + 2.0 * x1 * x2 * np.cos(X[:, 2] - X[:, 3]))
    raise ConfigError(f"unknown setting {spec.name!r}")


def ground_truth(spec: DgpSpec, x) -> float:
    """f evaluated at a single feature vector."""
    return float(ground_truth_values(spec, np.asarray(x, dtype=float)[None, :])[0])


def calibrate_noise(
    spec: DgpSpec,
    snr: float = DEFAULT_SNR,
    pilot_n: int = DEFAULT_PILOT_N,
    seed=PILOT_SEED,
) -> NoiseCalibration:
    """Set sigma_eps = sd(f) / snr from a noiseless pilot sample."""
    if snr <= 0:
        raise ConfigError("snr must be positive")
    if pilot_n < 1000:
        raise ConfigError("pilot_n must be >= 1000")
    pilot = ground_truth_values(spec, sample_features(spec, pilot_n, seed))
    sd = float(np.std(pilot))
    if sd == 0.0:
        raise CalibrationError("target function is constant on the pilot sample")
    return NoiseCalibration(sigma_eps=sd / snr, snr=snr, pilot_n=pilot_n)


def sample_dataset(spec: DgpSpec, n: int, cal: NoiseCalibration, seed) -> Dataset:
    """Draw (X, y) with y = f(X) + N(0, sigma_eps^2) noise."""
    rng = as_rng(seed)
    X = sample_features(spec, n, rng)
    noise = rng.normal(0.0, cal.sigma_eps, n) if cal.sigma_eps > 0 else np.zeros(n)
    return Dataset(X, ground_truth_values(spec, X) + noise, spec_id=spec.name)


def theoretical_quantile(spec: DgpSpec, feature: int, p):
    """Marginal inverse CDF of one feature."""
    return marginal_quantile(spec.marginals[feature], p)


# ---------------------------------------------------------------------------
# Conditional sampling (used by population-level oracles)
# ---------------------------------------------------------------------------

def sample_feature_in_range(
    spec: DgpSpec, feature: int, lo: float, hi: float, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw the feature's marginal restricted to (lo, hi] via inverse CDF."""
    marginal = spec.marginals[feature]
    p_lo = 0.0 if np.isneginf(lo) else float(marginal_cdf(marginal, lo))
    p_hi = 1.0 if np.isposinf(hi) else float(marginal_cdf(marginal, hi))
    if p_hi <= p_lo:
        raise OracleError(f"feature {feature} has zero probability in ({lo}, {hi}]")
    u = rng.uniform(p_lo, p_hi, size)
    return np.asarray(marginal_quantile(marginal, u))


def sample_joint_given_feature(
    spec: DgpSpec, feature: int, x_s: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Full feature rows with column `feature` fixed to x_s and the
    complement drawn from its conditional law given X_feature = x_s."""
    x_s = np.asarray(x_s, dtype=float)
    n = x_s.shape[0]
    X = np.empty((n, spec.p))
    X[:, feature] = x_s
    if not spec.has_correlation:
        for j, marginal in enumerate(spec.marginals):
            if j != feature:
                X[:, j] = sample_marginal(marginal, n, rng)
        return X
    # Gaussian conditional: complement mean Sigma_cj * x, covariance
    # Sigma_cc - Sigma_cj Sigma_jc (unit variances on the diagonal).
    corr = spec.correlation
    comp = [j for j in range(spec.p) if j != feature]
    s_cj = corr[comp, feature]
    cov = corr[np.ix_(comp, comp)] - np.outer(s_cj, s_cj)
    L = np.linalg.cholesky(cov)
    z = rng.standard_normal((n, len(comp)))
    X[:, comp] = x_s[:, None] * s_cj[None, :] + z @ L.T
    return X


# ---------------------------------------------------------------------------
# Closed-form effects (SimpleNormalCorrelated and Friedman1 only)
# ---------------------------------------------------------------------------

def _sin_kernel(x):
    """E[sin(pi x U)] for U ~ U(0, 1): (1 - cos(pi x)) / (pi x), with the
    removable singularity at 0 handled by a series."""
    x = np.asarray(x, dtype=float)
    t = np.pi * x
    small = np.abs(t) < 1e-4
    safe = np.where(small, 1.0, t)
    exact = (1.0 - np.cos(safe)) / safe
    series = t / 2.0 - t**3 / 24.0
    return np.where(small, series, exact)


_QUAD_CACHE: dict[str, float] = {}


def _sin_kernel_mean() -> float:
    """integral_0^1 of _sin_kernel; non-elementary, cached quadrature."""
    if "sin_kernel_mean" not in _QUAD_CACHE:
        val, _ = integrate.quad(lambda v: float(_sin_kernel(v)), 0.0, 1.0, epsabs=1e-10)
        _QUAD_CACHE["sin_kernel_mean"] = val
    return _QUAD_CACHE["sin_kernel_mean"]


def _require_analytic(spec: DgpSpec):
    if spec.name not in (SIMPLE_NORMAL_CORRELATED, FRIEDMAN1):
        raise AnalyticUnavailableError(
            f"no closed-form effects for setting {spec.name!r}"
        )


def _friedman_pd_uncentered(feature: int, x: np.ndarray) -> np.ndarray:
    # Marginal means of the terms not involving the feature of interest.
    m_sin = 10.0 * _sin_kernel_mean()  # E[10 sin(pi X1 X2)]
    m_quad = 20.0 / 12.0               # E[20 (X3 - 1/2)^2]
    m_lin4 = 5.0                       # E[10 X4]
    m_lin5 = 2.5                       # E[5 X5]
    if feature in (0, 1):
        return 10.0 * _sin_kernel(x) + m_quad + m_lin4 + m_lin5
    if feature == 2:
        return m_sin + 20.0 * (x - 0.5) ** 2 + m_lin4 + m_lin5
    if feature == 3:
        return m_sin + m_quad + 10.0 * x + m_lin5
    if feature == 4:
        return m_sin + m_quad + m_lin4 + 5.0 * x
    return np.full_like(x, m_sin + m_quad + m_lin4 + m_lin5)


def analytic_pd(spec: DgpSpec, feature: int, x, centered: bool = True):
    """Closed-form marginal effect E[f(x_S, X_C)] at x; optionally centered
    to zero mean under the feature's marginal distribution."""
    _require_analytic(spec)
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    if spec.name == SIMPLE_NORMAL_CORRELATED:
        if feature == 0:
            vals, mean = x_arr + 0.5, 0.5
        elif feature == 1:
            vals, mean = x_arr**2 / 2.0, 0.5
        else:
            vals = np.full_like(x_arr, 0.5 + RHO)  # E[f], a constant
            mean = 0.5 + RHO
    else:
        vals = _friedman_pd_uncentered(feature, x_arr)
        # E[f2] = E of every term; subtracting it centers any single-feature
        # marginal effect because the remaining terms are constants.
        mean = 10.0 * _sin_kernel_mean() + 20.0 / 12.0 + 5.0 + 2.5
    out = vals - mean if centered else vals
    return out if np.asarray(x).ndim else float(out[0])


def analytic_ale(spec: DgpSpec, feature: int, x, centered: bool = True):
    """Closed-form accumulated conditional derivative effect at x.

    Uncentered curves are anchored at 0 (the anchor is an arbitrary
    constant that centering removes). For independent features the
    centered curve coincides with the centered marginal effect.
    """
    _require_analytic(spec)
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    if spec.name == SIMPLE_NORMAL_CORRELATED:
        # E[df/dx_S | X_S = t] = 1 + rho t (feature 1) or (1 + rho) t (feature 2).
        if feature == 0:
            vals, mean = x_arr + RHO * x_arr**2 / 2.0, RHO / 2.0
        elif feature == 1:
            vals, mean = (1.0 + RHO) * x_arr**2 / 2.0, (1.0 + RHO) / 2.0
        else:
            vals, mean = np.zeros_like(x_arr), 0.0
        out = vals - mean if centered else vals
    else:
        # Independent features: accumulated derivative equals the marginal
        # effect up to a constant.
        uncentered = _friedman_pd_uncentered(feature, x_arr) - _friedman_pd_uncentered(
            feature, np.array([0.0])
        )
        if centered:
            out = np.asarray(analytic_pd(spec, feature, x_arr, centered=True))
        else:
            out = uncentered
    return out if np.asarray(x).ndim else float(out[0])
