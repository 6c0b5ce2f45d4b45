import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from effektor import dgp
from effektor.exceptions import AnalyticUnavailableError, CalibrationError, ConfigError


SNC = dgp.simple_normal_correlated()
FR1 = dgp.friedman1()
FEY = dgp.feynman12916()


class TestSpecs:
    def test_registry_and_aliases(self):
        assert dgp.make_spec("snc").name == "SimpleNormalCorrelated"
        assert dgp.make_spec("Friedman1").p == 7
        assert dgp.make_spec("feynman12916").dummy_features == (4, 5)
        with pytest.raises(ConfigError):
            dgp.make_spec("nope")

    def test_snc_correlation_structure(self):
        corr = SNC.correlation
        assert corr[0, 1] == corr[1, 0] == 0.9
        off = corr - np.diag(np.diag(corr))
        off[0, 1] = off[1, 0] = 0.0
        assert np.all(off == 0.0)

    def test_dummies_do_not_enter_f(self):
        rng = np.random.default_rng(0)
        for spec in (SNC, FR1, FEY):
            X = dgp.sample_features(spec, 50, rng)
            X2 = X.copy()
            X2[:, list(spec.dummy_features)] = rng.standard_normal((50, len(spec.dummy_features)))
            np.testing.assert_array_equal(
                dgp.ground_truth_values(spec, X), dgp.ground_truth_values(spec, X2)
            )

    def test_invalid_correlation_rejected(self):
        bad = np.array([[1.0, 0.99, 0.99], [0.99, 1.0, -0.99], [0.99, -0.99, 1.0]])
        with pytest.raises(ConfigError):
            dgp.DgpSpec("x", 3, tuple(dgp.StandardNormal() for _ in range(3)), bad, ())


class TestSampling:
    def test_friedman_support(self):
        X = dgp.sample_features(FR1, 3, seed=7)
        assert X.shape == (3, 7)
        assert np.all((X >= 0.0) & (X <= 1.0))

    def test_feynman_support(self):
        X = dgp.sample_features(FEY, 10_000, seed=3)
        assert np.all((X[:, :2] >= 0.1) & (X[:, :2] <= 10.0))
        assert np.all((X[:, 2:4] >= 0.0) & (X[:, 2:4] <= 2 * np.pi))
        assert np.all((X[:, 4:] >= 0.0) & (X[:, 4:] <= 1.0))

    def test_snc_sample_correlation(self):
        X = dgp.sample_features(SNC, 1_000_000, seed=11)
        r = np.corrcoef(X[:, 0], X[:, 1])[0, 1]
        assert abs(r - 0.9) < 0.005

    def test_determinism(self):
        cal = dgp.NoiseCalibration(0.5, 5.0, 1000)
        a = dgp.sample_dataset(FR1, 1250, cal, seed=99)
        b = dgp.sample_dataset(FR1, 1250, cal, seed=99)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.target, b.target)

    def test_zero_noise_targets_equal_f(self):
        cal = dgp.NoiseCalibration(0.0, 5.0, 1000)
        data = dgp.sample_dataset(SNC, 500, cal, seed=1)
        np.testing.assert_array_equal(data.target, dgp.ground_truth_values(SNC, data.features))

    def test_noise_sd_matches_calibration(self):
        cal = dgp.NoiseCalibration(0.4521, 5.0, 1000)
        data = dgp.sample_dataset(SNC, 100_000, seed=5, cal=cal)
        resid = data.target - dgp.ground_truth_values(SNC, data.features)
        assert abs(np.std(resid) - 0.4521) < 0.01 * 0.4521 + 0.005


class TestGroundTruth:
    def test_snc_hand_values(self):
        assert dgp.ground_truth(SNC, [0.0, 0.0, 3.0, -1.0]) == 0.0
        assert dgp.ground_truth(SNC, [1.0, 2.0, 0.0, 0.0]) == pytest.approx(5.0)

    def test_friedman_vertex(self):
        assert dgp.ground_truth(FR1, [0, 0, 0.5, 0, 0, 0.3, 0.9]) == pytest.approx(0.0)

    def test_feynman_aligned_phases(self):
        x = [1.0, 1.0, 0.7, 0.7, 0.2, 0.8]
        assert dgp.ground_truth(FEY, x) == pytest.approx(2.0)


class TestCalibration:
    def test_snc_sigma_from_moments(self):
        # Var(f) for the correlated quadratic has the closed form
        # 2.5 + rho^2 + 2 rho = 5.11 at rho = 0.9.
        cal = dgp.calibrate_noise(SNC, snr=5.0, pilot_n=1_000_000)
        assert cal.sigma_eps == pytest.approx(np.sqrt(5.11) / 5.0, abs=0.01)

    def test_sigma_scales_inverse_to_snr(self):
        lo = dgp.calibrate_noise(FR1, snr=5.0, pilot_n=10_000)
        hi = dgp.calibrate_noise(FR1, snr=500.0, pilot_n=10_000)
        assert hi.sigma_eps == pytest.approx(lo.sigma_eps / 100.0)

    def test_friedman_reproducible_across_pilot_seeds(self):
        a = dgp.calibrate_noise(FR1, snr=5.0, pilot_n=1_000_000, seed=1)
        b = dgp.calibrate_noise(FR1, snr=5.0, pilot_n=1_000_000, seed=2)
        assert abs(a.sigma_eps - b.sigma_eps) < 0.01 * a.sigma_eps

    def test_constant_function_rejected(self, monkeypatch):
        monkeypatch.setattr(dgp, "ground_truth_values", lambda s, X: np.zeros(X.shape[0]))
        with pytest.raises(CalibrationError):
            dgp.calibrate_noise(FR1, snr=5.0, pilot_n=2000)

    def test_pilot_preconditions(self):
        with pytest.raises(ConfigError):
            dgp.calibrate_noise(SNC, snr=0.0)
        with pytest.raises(ConfigError):
            dgp.calibrate_noise(SNC, snr=5.0, pilot_n=10)


class TestQuantiles:
    def test_hand_values(self):
        assert dgp.theoretical_quantile(SNC, 0, 0.5) == pytest.approx(0.0)
        assert dgp.theoretical_quantile(FR1, 2, 0.25) == pytest.approx(0.25)
        assert dgp.theoretical_quantile(FEY, 0, 0.5) == pytest.approx(1.0)

    def test_domain_errors(self):
        for p in (0.0, 1.0, -0.1, 1.3):
            with pytest.raises(ValueError):
                dgp.theoretical_quantile(SNC, 0, p)

    @given(st.integers(0, 6), st.lists(st.floats(0.001, 0.999), min_size=2, max_size=30, unique=True))
    @settings(max_examples=50, deadline=None)
    def test_strictly_increasing(self, feature, probs):
        probs = np.sort(np.asarray(probs))
        q = np.asarray(dgp.theoretical_quantile(FR1, feature, probs))
        assert np.all(np.diff(q) > 0)

    def test_quantile_cdf_roundtrip(self):
        for spec, feature in [(SNC, 0), (FR1, 3), (FEY, 0), (FEY, 2)]:
            p = np.linspace(0.01, 0.99, 23)
            q = dgp.theoretical_quantile(spec, feature, p)
            np.testing.assert_allclose(dgp.marginal_cdf(spec.marginals[feature], q), p, atol=1e-9)


class TestAnalyticEffects:
    def test_snc_pd_hand_values(self):
        assert dgp.analytic_pd(SNC, 0, 1.0, centered=False) == pytest.approx(1.5)
        assert dgp.analytic_pd(SNC, 1, 0.0, centered=False) == pytest.approx(0.0)
        assert dgp.analytic_pd(SNC, 2, 0.37, centered=True) == 0.0

    def test_snc_ale_hand_values(self):
        assert dgp.analytic_ale(SNC, 0, 1.0, centered=True) == pytest.approx(1.0)
        assert dgp.analytic_ale(SNC, 1, 0.0, centered=True) == pytest.approx(-0.95)

    def test_friedman_linear_feature(self):
        assert dgp.analytic_pd(FR1, 3, 0.5, centered=True) == pytest.approx(0.0)
        assert dgp.analytic_ale(FR1, 3, 0.5, centered=True) == pytest.approx(0.0)

    def test_dummies_center_to_zero(self):
        assert dgp.analytic_pd(FR1, 6, 0.77, centered=True) == pytest.approx(0.0)
        assert dgp.analytic_ale(SNC, 3, -1.0, centered=True) == pytest.approx(0.0)

    def test_feynman_unsupported(self):
        with pytest.raises(AnalyticUnavailableError):
            dgp.analytic_pd(FEY, 0, 1.0)
        with pytest.raises(AnalyticUnavailableError):
            dgp.analytic_ale(FEY, 0, 1.0)

    def test_pd_ale_divergence_under_correlation(self):
        c_pd = dgp.analytic_pd(SNC, 1, 2.0, centered=True)
        c_ale = dgp.analytic_ale(SNC, 1, 2.0, centered=True)
        assert c_pd == pytest.approx(1.5)
        assert c_ale == pytest.approx(2.85)
        assert abs(c_pd - c_ale) > 1.0

    def test_friedman_centered_ale_equals_centered_pd(self):
        x = np.linspace(0.01, 0.99, 97)
        for feature in range(7):
            np.testing.assert_allclose(
                dgp.analytic_ale(FR1, feature, x, centered=True),
                dgp.analytic_pd(FR1, feature, x, centered=True),
                atol=1e-8,
            )

    def test_centered_effects_have_zero_marginal_mean(self):
        rng = np.random.default_rng(123)
        cases = [(SNC, f) for f in range(4)] + [(FR1, f) for f in range(7)]
        for spec, feature in cases:
            draws = dgp.sample_features(spec, 1_000_000, rng)[:, feature]
            for fn in (dgp.analytic_pd, dgp.analytic_ale):
                vals = np.asarray(fn(spec, feature, draws, centered=True))
                se = np.std(vals) / np.sqrt(draws.shape[0])
                assert abs(np.mean(vals)) <= 4 * se + 1e-12

    def test_sin_kernel_against_quadrature(self):
        # independent check of the closed-form inner integral
        from scipy.integrate import quad

        for x in (0.0, 1e-6, 0.2, 0.5, 0.77, 1.0):
            direct, _ = quad(lambda u: np.sin(np.pi * x * u), 0.0, 1.0, epsabs=1e-12)
            assert float(dgp._sin_kernel(x)) == pytest.approx(direct, abs=1e-9)


class TestConditionalSampling:
    def test_range_restriction(self):
        rng = np.random.default_rng(0)
        xs = dgp.sample_feature_in_range(SNC, 0, -0.5, 0.25, 5000, rng)
        assert np.all((xs > -0.5) & (xs <= 0.25 + 1e-12))

    def test_gaussian_conditional_moments(self):
        rng = np.random.default_rng(1)
        x_s = np.full(200_000, 1.3)
        rows = dgp.sample_joint_given_feature(SNC, 0, x_s, rng)
        np.testing.assert_array_equal(rows[:, 0], x_s)
        assert np.mean(rows[:, 1]) == pytest.approx(0.9 * 1.3, abs=0.01)
        assert np.var(rows[:, 1]) == pytest.approx(1 - 0.81, abs=0.01)
        assert abs(np.mean(rows[:, 2])) < 0.01

    def test_zero_probability_range_raises(self):
        from effektor.exceptions import OracleError

        rng = np.random.default_rng(2)
        with pytest.raises(OracleError):
            dgp.sample_feature_in_range(FR1, 0, 2.0, 3.0, 10, rng)
