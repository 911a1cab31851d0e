import math

import numpy as np
import pytest

from qbsdrisk.distributions import Normal, StudentT
from qbsdrisk.errors import DomainError, EstimationError
from qbsdrisk.joint_ves import (
    PENALTY,
    AlModelParams,
    AlSpec,
    GasParams,
    al_neg_loglik,
    al_neg_logpdf,
    al_paths,
    fit_al_model,
    fit_gas_fz0,
    fz0_loss,
    gas_filter,
)

AL_SPECS = [AlSpec(v, e, m) for v in ("SAV", "AS") for e in ("Mult", "AR") for m in ("zero", "ar1")]


def garch_returns(n, seed):
    rng = np.random.default_rng(seed)
    r = np.empty(n)
    s2, prev = 1.0, 0.0
    for t in range(n):
        s2 = 0.05 + 0.85 * s2 + 0.1 * prev**2
        prev = math.sqrt(s2) * rng.standard_normal()
        r[t] = prev
    return r


@pytest.fixture(scope="module")
def garch_data():
    return garch_returns(2000, seed=17)


class TestLosses:
    def test_fz0_no_hit(self):
        assert fz0_loss(0.0, -1.0, -2.0, 0.05) == pytest.approx(0.5 + math.log(2) - 1, abs=1e-15)

    @pytest.mark.parametrize("alpha", [0.01, 0.3])
    def test_fz0_boundary(self, alpha):
        assert fz0_loss(-1.0, -1.0, -2.0, alpha) == pytest.approx(0.19314718055994530, abs=1e-15)

    def test_fz0_hit(self):
        val = fz0_loss(-3.0, -1.0, -2.0, 0.05)
        assert val == pytest.approx(-(1 / (0.05 * -2.0)) * 2.0 + 0.5 + math.log(2) - 1)

    def test_fz0_domain(self):
        with pytest.raises(DomainError):
            fz0_loss(0.0, -1.0, 0.0, 0.05)

    def test_al_density_at_var(self):
        assert al_neg_logpdf(-1.0, -1.0, -2.0, 0.05) == pytest.approx(-math.log(0.95 / 2.0))

    def test_al_density_integrates_to_one(self):
        from scipy import integrate
        f = lambda r: math.exp(-al_neg_logpdf(r, -1.0, -2.0, 0.05))
        total = integrate.quad(f, -np.inf, -1.0)[0] + integrate.quad(f, -1.0, np.inf)[0]
        assert total == pytest.approx(1.0, rel=1e-10)


class TestAlLikelihood:
    def test_zero_residual_case(self):
        y = np.full(300, -1.0)
        y[::3] = -1.0  # constant series sitting at its own quantile
        prm = AlModelParams(omega=-1.0, beta=0.0, gamma_plus=0.0, gamma_minus=0.0, g0=0.0)
        spec = AlSpec("SAV", "Mult")
        # VaR = -1 throughout, ES = 2 VaR = -2
        assert al_neg_loglik(prm, spec, y, 0.05) == pytest.approx(-300 * math.log(0.95 / 2.0))

    def test_mult_link_identity(self, garch_data):
        prm = AlModelParams(-0.05, 0.9, -0.15, -0.15, g0=0.0)
        var, es = al_paths(prm, AlSpec("SAV", "Mult"), garch_data, 0.05)
        np.testing.assert_allclose(es, 2.0 * var, rtol=1e-15)

    def test_degenerate_ar_link(self, garch_data):
        prm = AlModelParams(-0.05, 0.9, -0.15, -0.15, g0=0.7, g1=0.0, g2=0.0)
        var, es = al_paths(prm, AlSpec("SAV", "AR"), garch_data, 0.05)
        first_hit = int(np.argmax(garch_data <= var[:-1]))
        np.testing.assert_allclose((var - es)[first_hit + 1:], 0.7, rtol=1e-12)

    def test_as_equal_slopes_matches_sav(self, garch_data):
        a = AlModelParams(-0.05, 0.9, -0.15, -0.15, g0=0.1, g1=0.2, g2=0.3)
        va, ea = al_paths(a, AlSpec("SAV", "AR"), garch_data, 0.025)
        vb, eb = al_paths(a, AlSpec("AS", "AR"), garch_data, 0.025)
        assert np.array_equal(va, vb) and np.array_equal(ea, eb)

    def test_positive_es_penalized(self, garch_data):
        prm = AlModelParams(1.0, 0.5, 0.0, 0.0, g0=0.0)
        assert al_neg_loglik(prm, AlSpec(), garch_data, 0.05) == PENALTY

    def test_true_quantile_path_scores_best(self):
        rng = np.random.default_rng(5)
        sig = np.exp(0.5 * np.sin(np.arange(20000) / 50.0))
        r = sig * rng.standard_normal(sig.size)
        alpha = 0.05
        q, e = Normal().ppf(alpha), Normal().es(alpha)
        base = np.sum(al_neg_logpdf(r, q * sig, e * sig, alpha))
        for shift in (-0.1, 0.1):
            assert base <= np.sum(al_neg_logpdf(r, q * sig + shift, e * sig, alpha))


class TestAlFit:
    @pytest.mark.parametrize("spec", AL_SPECS, ids=lambda s: s.model_id)
    def test_fits_are_ordered(self, garch_data, spec):
        fit = fit_al_model(garch_data[:1250], 0.025, spec)
        assert np.all(fit.es_path < fit.var_path)
        fc = fit.forecast()
        assert fc.es < fc.var < fc.mu

    def test_mult_link_on_forecast(self, garch_data):
        fit = fit_al_model(garch_data, 0.05, AlSpec("AS", "Mult"))
        fc = fit.forecast()
        assert fc.es == pytest.approx((1 + math.exp(fit.params.g0)) * fc.var, rel=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_iid_var(self, seed):
        r = np.random.default_rng(900 + seed).standard_t(5, size=2000) * math.sqrt(3 / 5)
        fc = fit_al_model(r, 0.05, AlSpec("SAV", "Mult")).forecast()
        assert fc.var == pytest.approx(StudentT(5.0).ppf(0.05), abs=0.2)

    def test_scale_equivariance(self, garch_data):
        r = garch_data[:1250]
        a = fit_al_model(r, 0.05, AlSpec("SAV", "AR")).forecast()
        b = fit_al_model(3.0 * r, 0.05, AlSpec("SAV", "AR")).forecast()
        # the AL objective is piecewise smooth, so rounding in r / sd can move
        # the simplex to a neighbouring point of an almost flat optimum
        assert b.var == pytest.approx(3 * a.var, rel=1e-3)
        assert b.es == pytest.approx(3 * a.es, rel=1e-3)

    def test_nll_matches_reported(self, garch_data):
        fit = fit_al_model(garch_data[:1250], 0.05, AlSpec("AS", "AR", "ar1"))
        assert al_neg_loglik(fit.params, fit.spec, garch_data[:1250], 0.05) == pytest.approx(fit.nll, rel=1e-9)

    def test_warm_start(self, garch_data):
        spec = AlSpec("SAV", "Mult")
        cold = fit_al_model(garch_data[:1250], 0.05, spec)
        warm = fit_al_model(garch_data[:1250], 0.05, spec, warm=cold.params)
        assert warm.nll <= cold.nll + 1e-6

    def test_too_short(self):
        with pytest.raises(DomainError):
            fit_al_model(np.ones(100), 0.05)

    def test_constant(self):
        with pytest.raises(EstimationError):
            fit_al_model(np.ones(400), 0.05)


class TestGas:
    y = np.random.default_rng(2).normal(size=400)

    def test_static_factor(self):
        path = gas_filter(GasParams(-1.5, -2.0, 0.9, 0.0), self.y, 0.05)
        assert np.all(path.kappa == 0) and np.all(path.var == -1.5) and np.all(path.es == -2.0)

    def test_no_hit_score_is_one(self):
        y = np.full(5, 10.0)
        path = gas_filter(GasParams(-1.5, -2.0, 0.5, 0.1), y, 0.05)
        expected = [0.0]
        for _ in range(5):
            expected.append(0.5 * expected[-1] + 0.1)
        np.testing.assert_allclose(path.kappa, expected, rtol=1e-15)

    def test_ordering_and_determinism(self, garch_data):
        prm = GasParams(-1.6, -2.1, 0.95, -0.01)
        a = gas_filter(prm, garch_data, 0.05)
        b = gas_filter(prm, garch_data, 0.05)
        assert np.array_equal(a.kappa, b.kappa)
        assert np.all(a.es < a.var) and np.all(a.var < 0)

    def test_mean_loss(self, garch_data):
        prm = GasParams(-1.6, -2.1, 0.95, -0.01)
        path = gas_filter(prm, garch_data, 0.05)
        ref = np.mean(fz0_loss(garch_data, path.var[:-1], path.es[:-1], 0.05))
        assert path.mean_loss == pytest.approx(ref, rel=1e-12)

    def test_invalid(self):
        with pytest.raises(DomainError):
            gas_filter(GasParams(-2.0, -1.0, 0.9, 0.0), self.y, 0.05)

    def test_fit_local_optimum(self, garch_data):
        fit = fit_gas_fz0(garch_data, 0.05)
        p = fit.params
        base = fit.path.mean_loss
        assert p.xi < p.zeta < 0
        for name in ("zeta", "xi", "beta", "gamma"):
            for f in (0.9, 1.1):
                kw = {k: getattr(p, k) for k in ("zeta", "xi", "beta", "gamma")}
                kw[name] *= f
                try:
                    alt = gas_filter(GasParams(**kw), garch_data, 0.05)
                except DomainError:
                    continue
                assert base <= alt.mean_loss + 1e-12, (name, f)

    @pytest.mark.parametrize("seed", range(20))
    def test_iid_loadings(self, seed):
        r = np.random.default_rng(700 + seed).normal(size=2000)
        p = fit_gas_fz0(r, 0.05).params
        assert p.zeta == pytest.approx(Normal().ppf(0.05), abs=0.2)
        assert p.xi == pytest.approx(Normal().es(0.05), abs=0.2)

    def test_scale_equivariance(self, garch_data):
        a = fit_gas_fz0(garch_data[:1250], 0.05).forecast()
        b = fit_gas_fz0(2.0 * garch_data[:1250], 0.05).forecast()
        assert b.var == pytest.approx(2 * a.var, rel=1e-5)
        assert b.es == pytest.approx(2 * a.es, rel=1e-5)

    def test_ar_mean(self, garch_data):
        fit = fit_gas_fz0(garch_data, 0.05, mean="ar1")
        assert fit.model_id == "AR-GAS"
        assert fit.forecast().mu == pytest.approx(fit.params.c + fit.params.phi * garch_data[-1])
