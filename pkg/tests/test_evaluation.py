import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from grid_oracle import centred_grid, grid_argmin
from qbsdrisk.errors import DomainError
from qbsdrisk.evaluation import (
    BootstrapConfig,
    LossPanel,
    al_log_score,
    block_bootstrap_indices,
    fz0_loss,
    mae_rmse,
    mcs,
    quantile_score,
)

finite = st.floats(-50, 50, allow_nan=False)
levels = st.floats(0.001, 0.5)


class TestQuantileScore:
    def test_violation_branch(self):
        assert quantile_score(-2.0, -1.0, 0.05) == pytest.approx(0.95)

    def test_no_violation_branch(self):
        assert quantile_score(0.0, -1.0, 0.05) == pytest.approx(0.05)

    def test_boundary(self):
        assert quantile_score(-1.3, -1.3, 0.05) == 0.0

    @given(finite, finite, levels)
    def test_nonnegative_zero_iff_equal(self, r, var, a):
        s = quantile_score(r, var, a)
        assert s >= 0
        assert (s == 0) == (r == var)

    def test_shift_off_violation(self):
        # deeper VaR by 1.0 on data never hitting it costs exactly alpha more
        r = np.linspace(-1, 1, 50)
        b, a = quantile_score(r, -3.0, 0.025), quantile_score(r, -4.0, 0.025)
        assert np.allclose(a - b, 0.025)

    def test_alpha_domain(self):
        with pytest.raises(DomainError):
            quantile_score(0.0, 0.0, 1.0)


class TestAlLogScore:
    def test_example(self):
        assert al_log_score(-1.0, 0.0, -1.0, -2.0, 0.025) == pytest.approx(-math.log(0.4875), abs=1e-12)
        assert al_log_score(-1.0, 0.0, -1.0, -2.0, 0.025) == pytest.approx(0.71846, abs=1e-5)

    @given(finite, st.floats(-5, -0.01), st.floats(0.0, 5.0), levels, st.floats(0.01, 100))
    def test_scale_shift(self, r, var, gap, a, c):
        es = var - gap - 0.01
        base = al_log_score(r, 0.0, var, es, a)
        assert al_log_score(c * r, 0.0, c * var, c * es, a) == pytest.approx(base + math.log(c), rel=1e-9, abs=1e-9)

    def test_matches_al_density_at_zero_mean(self):
        from qbsdrisk.joint_ves import al_neg_logpdf

        r = np.linspace(-4, 3, 30)
        assert np.allclose(al_log_score(r, 0.0, -1.5, -2.1, 0.05), al_neg_logpdf(r, -1.5, -2.1, 0.05))

    def test_location_enters_tail(self):
        # a shift of every argument by mu leaves the score unchanged
        r = np.linspace(-4, 3, 30)
        assert np.allclose(al_log_score(r + 0.3, 0.3, -1.2, -1.8, 0.05), al_log_score(r, 0.0, -1.5, -2.1, 0.05))

    def test_es_above_mu_rejected(self):
        with pytest.raises(DomainError):
            al_log_score(0.0, 0.0, -1.0, 0.0, 0.05)
        with pytest.raises(DomainError):
            al_log_score(0.0, -3.0, -1.0, -2.0, 0.05)


class TestPropriety:
    """On iid draws the mean score is smallest at the true (VaR, ES) cell."""

    alpha = 0.05

    @pytest.fixture(scope="class")
    @staticmethod
    def setup():
        r = np.random.default_rng(0).standard_normal(10**5)
        q = norm.ppf(TestPropriety.alpha)
        es = -norm.pdf(q) / TestPropriety.alpha
        return r, centred_grid(q, 0.05), centred_grid(es, 0.05)

    def test_fz0(self, setup):
        r, vg, eg = setup
        assert grid_argmin(lambda x, v, e: fz0_loss(x, v, e, self.alpha), r, vg, eg) == (20, 20)

    def test_als(self, setup):
        r, vg, eg = setup
        assert grid_argmin(lambda x, v, e: al_log_score(x, 0.0, v, e, self.alpha), r, vg, eg) == (20, 20)

    def test_quantile_score_alone(self, setup):
        r, vg, _ = setup
        means = [quantile_score(r, v, self.alpha).mean() for v in vg]
        assert int(np.argmin(means)) == 20


class TestMaeRmse:
    def test_identical(self):
        assert mae_rmse([1, 2, 3], [1, 2, 3]) == (0.0, 0.0)

    def test_constant_error(self):
        mae, rmse = mae_rmse(np.arange(5) + 1.0, np.arange(5))
        assert mae == pytest.approx(1.0) and rmse == pytest.approx(1.0)

    def test_symmetric_errors(self):
        assert mae_rmse([1.0, -1.0], [0.0, 0.0]) == (1.0, 1.0)

    @given(st.lists(st.tuples(finite, finite), min_size=1, max_size=40))
    def test_rmse_dominates(self, pairs):
        f, t = zip(*pairs)
        mae, rmse = mae_rmse(f, t)
        assert rmse >= mae - 1e-12 * (1 + mae)

    def test_mismatch(self):
        with pytest.raises(DomainError):
            mae_rmse([1.0], [1.0, 2.0])
        with pytest.raises(DomainError):
            mae_rmse([], [])


class TestPanelAndConfig:
    def test_non_finite(self):
        with pytest.raises(DomainError):
            LossPanel(np.array([[1.0, np.nan]]), ("a", "b"))

    def test_column_mismatch(self):
        with pytest.raises(DomainError):
            LossPanel(np.ones((3, 2)), ("a",))

    def test_duplicate_ids(self):
        with pytest.raises(DomainError):
            LossPanel(np.ones((3, 2)), ("a", "a"))

    def test_iterations_floor(self):
        with pytest.raises(DomainError):
            BootstrapConfig(iterations=99)

    def test_block_bounds(self):
        assert BootstrapConfig().resolved_block(500) == 8
        with pytest.raises(DomainError):
            BootstrapConfig(block_length=11).resolved_block(10)

    def test_block_indices_in_range(self):
        idx = block_bootstrap_indices(100, 7, 200, 3)
        assert idx.shape == (200, 15)
        assert idx.min() >= 0 and idx.max() <= 93


def dominance_panel(seed, n=500):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(n) ** 2
    b = rng.standard_normal(n) ** 2
    return LossPanel(np.column_stack([a, b, a + 1.0]), ("A", "B", "C"))


def equal_panel(seed, n=500):
    rng = np.random.default_rng(1000 + seed)
    common = rng.standard_normal(n) ** 2
    x = common + 0.5 * rng.standard_normal(n)
    y = common + 0.5 * rng.standard_normal(n)
    z = common + 3.0 + 0.5 * rng.standard_normal(n)
    return LossPanel(np.column_stack([x, y, z]), ("X", "Y", "Z"))


class TestMcs:
    def test_identical_columns(self):
        col = np.random.default_rng(1).standard_normal(200) ** 2
        res = mcs(LossPanel(np.column_stack([col, col, col]), ("a", "b", "c")))
        assert set(res.survivors) == {"a", "b", "c"}
        assert all(p == 1.0 for p in res.pvalues.values())

    def test_needs_two_models(self):
        with pytest.raises(DomainError):
            mcs(LossPanel(np.ones((10, 1)), ("a",)))

    def test_confidence_domain(self):
        with pytest.raises(DomainError):
            mcs(dominance_panel(0), confidence=1.0)

    def test_dominance_oracle(self):
        hits = sum(not mcs(dominance_panel(s), 0.90, BootstrapConfig(seed=s)).survives("C") for s in range(20))
        assert hits >= 18

    def test_no_difference_oracle(self):
        both = 0
        for s in range(20):
            res = mcs(equal_panel(s), 0.90, BootstrapConfig(seed=s))
            both += res.survives("X") and res.survives("Y")
        assert both >= 18

    def test_pvalues_monotone_and_survivors_nonempty(self):
        for s in range(5):
            res = mcs(dominance_panel(s), 0.90, BootstrapConfig(seed=s))
            p = [res.pvalues[m] for m in res.elimination_order]
            assert p == sorted(p) and p[-1] == 1.0
            assert res.survivors

    def test_nested_in_confidence(self):
        for s in range(20):
            cfg = BootstrapConfig(seed=s)
            for panel in (dominance_panel(s), equal_panel(s)):
                lo, hi = mcs(panel, 0.90, cfg), mcs(panel, 0.95, cfg)
                assert set(lo.survivors) <= set(hi.survivors)

    def test_permutation_equivariance(self):
        panel = equal_panel(4)
        res = mcs(panel, 0.90, BootstrapConfig(seed=4))
        perm = [2, 0, 1]
        shuffled = LossPanel(panel.losses[:, perm], tuple(panel.model_ids[i] for i in perm))
        res2 = mcs(shuffled, 0.90, BootstrapConfig(seed=4))
        assert set(res.survivors) == set(res2.survivors)
        assert res.pvalues == pytest.approx(res2.pvalues)

    def test_common_constant_invariance(self):
        panel = dominance_panel(7)
        shift = np.random.default_rng(9).standard_normal(panel.losses.shape[0])[:, None] * 5.0
        res = mcs(panel, 0.90, BootstrapConfig(seed=7))
        res2 = mcs(LossPanel(panel.losses + shift, panel.model_ids), 0.90, BootstrapConfig(seed=7))
        assert set(res.survivors) == set(res2.survivors)

    def test_ranks_and_report(self):
        res = mcs(dominance_panel(2), 0.90, BootstrapConfig(seed=2))
        assert sorted(res.ranks.values()) == list(range(1, len(res.survivors) + 1))
        assert res.report_rank("C") == 3

    def test_seeded_determinism(self):
        a = mcs(equal_panel(3), 0.90, BootstrapConfig(seed=11))
        b = mcs(equal_panel(3), 0.90, BootstrapConfig(seed=11))
        assert a == b

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.integers(2, 5))
    def test_invariants_random_panels(self, seed, m):
        rng = np.random.default_rng(seed)
        panel = LossPanel(rng.standard_normal((120, m)) ** 2 + rng.uniform(0, 0.3, m), tuple("abcde"[:m]))
        res = mcs(panel, 0.90, BootstrapConfig(iterations=200, seed=seed))
        p = [res.pvalues[k] for k in res.elimination_order]
        assert p == sorted(p)
        assert res.survivors
        assert len(res.elimination_order) == m
