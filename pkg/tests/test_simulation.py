import numpy as np
import pytest
from scipy import stats

from qbsdrisk.distributions import SkewedTParams, skewt_es, skewt_quantile
from qbsdrisk.errors import DomainError
from qbsdrisk.garch import GarchModelSpec, GarchParams, garch_variance_path
from qbsdrisk.simulation import (
    AparchParams,
    power_moment,
    sample_skewt,
    simulate_aparch,
    true_var_es,
    uniform_open,
)

SYM20 = SkewedTParams(20.0, 0.0)
LEFT20 = SkewedTParams(20.0, -0.5)


def leverage_params():
    return AparchParams(0.05, 0.85, 0.10, 1.5, 0.5, LEFT20)


class TestSampling:
    @pytest.fixture(scope="class")
    @staticmethod
    def sym_draws():
        return sample_skewt(10**6, SYM20, seed=123)

    def test_moments(self, sym_draws):
        assert abs(sym_draws.mean()) < 0.01
        assert abs(sym_draws.var() - 1.0) < 0.02

    def test_symmetric_skewness(self, sym_draws):
        assert abs(stats.skew(sym_draws)) < 0.05

    def test_skewed_quantile(self):
        x = sample_skewt(10**6, SkewedTParams(5.0, -0.5), seed=7)
        assert np.quantile(x, 0.01) == pytest.approx(skewt_quantile(0.01, SkewedTParams(5.0, -0.5)), abs=0.05)

    def test_deterministic(self):
        assert np.array_equal(sample_skewt(100, LEFT20, 5), sample_skewt(100, LEFT20, 5))
        assert not np.array_equal(sample_skewt(100, LEFT20, 5), sample_skewt(100, LEFT20, 6))

    def test_uniforms_open(self):
        u = uniform_open(10**5, 1)
        assert u.min() > 0 and u.max() < 1

    def test_domain(self):
        with pytest.raises(DomainError):
            sample_skewt(0, SYM20, 1)


class TestAparch:
    def test_recursion_identity(self):
        prm = leverage_params()
        path = simulate_aparch(prm, 1250, seed=3)
        sd = path.sigma**prm.delta
        r = path.returns
        rhs = prm.omega + prm.beta * sd[:-1] + prm.gamma * (np.abs(r) - prm.theta * r) ** prm.delta
        np.testing.assert_allclose(sd[1:], rhs, rtol=1e-10)
        assert path.returns.size == 1250 and path.sigma.size == 1251 and np.all(path.sigma > 0)

    def test_degenerate(self):
        prm = AparchParams(0.05, 1e-300, 1e-300, 1.5, 0.0, SYM20)
        path = simulate_aparch(prm, 50, seed=1)
        np.testing.assert_allclose(path.sigma[1:], 0.05 ** (1 / 1.5), rtol=1e-12)

    def test_nests_garch(self):
        prm = AparchParams(0.05, 0.85, 0.10, 2.0, 0.0, SYM20)
        path = simulate_aparch(prm, 1000, seed=11)
        gp = GarchParams(0.05, 0.85, 0.10)
        # refilter from the simulated starting variance
        e, s2 = garch_variance_path(gp, GarchModelSpec(), path.returns)
        s2_direct = [path.sigma[0] ** 2]
        for x in path.returns:
            s2_direct.append(0.05 + 0.85 * s2_direct[-1] + 0.10 * x * x)
        np.testing.assert_allclose(path.sigma**2, s2_direct, rtol=1e-8)
        # the garch filter converges to the same path once its own start washes out
        np.testing.assert_allclose(s2[-100:], path.sigma[-100:] ** 2, rtol=1e-8)

    def test_deterministic(self):
        a = simulate_aparch(leverage_params(), 200, seed=9)
        b = simulate_aparch(leverage_params(), 200, seed=9)
        assert np.array_equal(a.returns, b.returns) and np.array_equal(a.sigma, b.sigma)

    def test_long_run_level(self):
        prm = leverage_params()
        long_run = simulate_aparch(prm, 10**6, seed=2024).sigma.mean()
        means = [simulate_aparch(prm, 1250, seed=s).sigma.mean() for s in range(100)]
        assert np.mean(means) == pytest.approx(long_run, rel=0.2)

    def test_power_moment_oracle(self):
        x = sample_skewt(10**6, LEFT20, seed=77)
        mc = np.mean((np.abs(x) - 0.5 * x) ** 1.5)
        assert power_moment(1.5, 0.5, 20.0, -0.5) == pytest.approx(mc, rel=5e-3)

    def test_invalid(self):
        with pytest.raises(DomainError):
            AparchParams(0.05, 0.85, 0.1, 1.5, 1.0, SYM20)


class TestTruth:
    def test_unit_scale(self):
        v, e = true_var_es(1.0, 0.025, LEFT20)
        assert (v, e) == (skewt_quantile(0.025, LEFT20), skewt_es(0.025, LEFT20))

    def test_proportional(self):
        v1, e1 = true_var_es(1.0, 0.01, LEFT20)
        v3, e3 = true_var_es(3.0, 0.01, LEFT20)
        assert v3 == pytest.approx(3 * v1, rel=1e-15) and e3 == pytest.approx(3 * e1, rel=1e-15)

    def test_quadrature(self):
        p = SkewedTParams(5.0, -0.5)
        w = (np.arange(10**6) + 0.5) / 10**6
        ref = float(np.mean(skewt_quantile(0.025 * w**4, p) * 4 * w**3))
        assert true_var_es(1.0, 0.025, p)[1] == pytest.approx(ref, rel=1e-6)

    def test_ordering(self):
        v, e = true_var_es(2.0, 0.05, LEFT20)
        assert e <= v < 0

    def test_domain(self):
        with pytest.raises(DomainError):
            true_var_es(0.0, 0.05, LEFT20)
