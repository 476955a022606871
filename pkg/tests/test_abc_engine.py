import math

import numpy as np
import pytest
from scipy import stats

from abcmle.abc_engine import (
    AbcConfig,
    DistanceSpec,
    KernelSpec,
    abc_nearest,
    abc_nearest_sweep,
    abc_rejection,
    abc_rejection_sweep,
    acceptance_rates,
    distance,
    distances,
    kernel_accept,
    likelihood_curve,
    load_sample,
    pilot_scale,
    resolve_distance,
    run_abc,
    save_sample,
)
from abcmle.core import Continuous, ParameterSpace, RngSeed
from abcmle.errors import AmleError, DimensionError, PartialSampleError
from abcmle.models import BinomialModel, NormalModel, SuperposedGammaModel

from oracles import binomial_window_prob, normal_mean_normalized_likelihood

UNIT = ParameterSpace((Continuous("p", 0.0, 1.0),))
NARROW = ParameterSpace((Continuous("p", 0.45, 0.65),))
BINOM = BinomialModel()
OBS = np.array([5.53])


class TestDistance:
    def test_examples(self):
        assert distance(DistanceSpec(), [1.0, 2.0], [1.0, 2.0]) == 0.0
        assert distance(DistanceSpec(), [0, 0], [3, 4]) == 5.0
        assert distance(DistanceSpec("weighted", (2, 2)), [0, 0], [3, 4]) == 2.5

    def test_symmetric(self, rng):
        a, b = rng.normal(size=5), rng.normal(size=5)
        spec = DistanceSpec("weighted", tuple(rng.uniform(0.1, 2, 5)))
        assert distance(spec, a, b) == distance(spec, b, a) > 0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            distance(DistanceSpec(), [0, 0], [0, 0, 0])
        with pytest.raises(DimensionError):
            distance(DistanceSpec("weighted", (1, 1, 1)), [0, 0], [1, 1])

    def test_scale_validation(self):
        with pytest.raises(AmleError):
            DistanceSpec("weighted", (1.0, 0.0))
        with pytest.raises(AmleError):
            DistanceSpec("weighted")
        with pytest.raises(AmleError):
            DistanceSpec("manhattan")

    def test_nan_rows_are_infinite(self):
        d = distances(DistanceSpec(), np.array([[0.0, 0.0], [np.nan, 1.0]]), [0.0, 0.0])
        assert d[0] == 0 and d[1] == math.inf

    def test_pilot_must_be_resolved(self):
        with pytest.raises(AmleError):
            distance(DistanceSpec("pilot"), [0.0], [1.0])


class TestKernel:
    def test_indicator_examples(self, rng):
        k = KernelSpec("indicator", 0.1)
        assert kernel_accept(k, 0.05, rng)
        assert not kernel_accept(k, 0.1, rng)

    def test_truncated_gaussian_support(self, rng):
        k = KernelSpec("truncated_gaussian", 0.3)
        assert not any(kernel_accept(k, 0.4, rng) for _ in range(1000))

    def test_truncated_gaussian_probability(self):
        k = KernelSpec("truncated_gaussian", 0.3)
        rng = RngSeed(5).generator()
        hits = np.mean([kernel_accept(k, 0.1, rng) for _ in range(20_000)])
        p = math.exp(-0.5)
        assert abs(hits - p) < 4 * math.sqrt(p * (1 - p) / 20_000)

    def test_validation(self, rng):
        with pytest.raises(AmleError):
            KernelSpec("indicator", 0.0)
        with pytest.raises(AmleError):
            kernel_accept(KernelSpec(), -1.0, rng)


class TestConfig:
    def test_invariants(self):
        with pytest.raises(AmleError):
            AbcConfig(epsilon=0.1, m_target=0)
        with pytest.raises(AmleError):
            AbcConfig(epsilon=0.1, m_target=10, max_proposals=5)
        with pytest.raises(AmleError):
            AbcConfig(epsilon=-0.1)
        with pytest.raises(AmleError):
            AbcConfig(epsilon=1.5, mode="quantile")
        with pytest.raises(AmleError):
            AbcConfig(epsilon=0.1, kernel="truncated_gaussian", screen=True)


class TestRejection:
    def test_standard_binomial_run(self):
        s = abc_rejection(BINOM, UNIT, OBS, AbcConfig(0.1, m_target=10_000), RngSeed(1))
        assert len(s) == 10_000
        assert np.all(s.distances < 0.1)
        assert abs(np.median(s.draws) - 0.553) < 0.01
        assert s.acceptance_rate == pytest.approx(10_000 / s.proposals_used)

    def test_huge_tolerance_reproduces_prior(self):
        s = abc_rejection(BINOM, UNIT, OBS, AbcConfig(1e9, m_target=10_000), RngSeed(2))
        assert s.acceptance_rate == 1.0
        prior = UNIT.draw(RngSeed(3).generator(), 10_000)[:, 0]
        assert stats.ks_2samp(s.draws[:, 0], prior).pvalue > 0.01

    def test_narrow_prior_acceptance_ratio(self):
        cfg = AbcConfig(0.05, m_target=4000)
        wide = abc_rejection(BINOM, UNIT, OBS, cfg, RngSeed(4))
        narrow = abc_rejection(BINOM, NARROW, OBS, cfg, RngSeed(5))
        assert abs(narrow.acceptance_rate / wide.acceptance_rate - 5) <= 1.5

    def test_every_draw_inside_tolerance(self):
        model = NormalModel()
        space = ParameterSpace((Continuous("mu", -0.25, 0.25), Continuous("sigma", 0.75, 1.25)))
        s = abc_rejection(model, space, [-0.005, 1.002], AbcConfig(0.05, m_target=500), RngSeed(6))
        assert np.all(s.distances < 0.05)

    def test_nested_acceptance_on_shared_stream(self):
        cfg = AbcConfig(0.2, m_target=10**6, max_proposals=10**6, batch_size=4096)
        out = abc_rejection_sweep(BINOM, UNIT, OBS, cfg, [0.2, 0.1, 0.05], RngSeed(7))
        sets = {e: set(map(float, s.draws[:, 0])) for e, s in out.items()}
        assert not any(s.complete for s in out.values())
        assert sets[0.05] <= sets[0.1] <= sets[0.2]
        assert len(sets[0.05]) < len(sets[0.1]) < len(sets[0.2])

    def test_sweep_matches_single_runs(self):
        cfg = AbcConfig(0.2, m_target=300)
        sweep = abc_rejection_sweep(BINOM, UNIT, OBS, cfg, [0.2, 0.1], RngSeed(8))
        for e in (0.2, 0.1):
            single = abc_rejection(BINOM, UNIT, OBS, AbcConfig(e, m_target=300), RngSeed(8))
            assert np.array_equal(single.draws, sweep[e].draws)
            assert single.proposals_used == sweep[e].proposals_used

    def test_sufficiency_matches_beta_posterior(self):
        s = abc_rejection(BINOM, UNIT, OBS, AbcConfig(0.01, m_target=5000, max_proposals=10**8), RngSeed(9))
        # |sum/30 - 5.53| < 0.01 only admits sum = 166
        total, trials = 166, 300
        post = stats.beta(total + 1, trials - total + 1)
        assert stats.kstest(s.draws[:, 0], post.cdf).pvalue > 0.01

    def test_budget_exhaustion_carries_partial_sample(self):
        cfg = AbcConfig(0.001, m_target=1000, max_proposals=5000, batch_size=1000)
        with pytest.raises(PartialSampleError) as info:
            abc_rejection(BINOM, UNIT, [5.5], cfg, RngSeed(10))
        part = info.value.sample
        assert 0 < len(part) < 1000 and part.proposals_used == 5000

    def test_thread_count_does_not_change_result(self):
        base = AbcConfig(0.1, m_target=2000, batch_size=2048)
        a = abc_rejection(BINOM, UNIT, OBS, base, RngSeed(11))
        b = abc_rejection(BINOM, UNIT, OBS, AbcConfig(0.1, m_target=2000, batch_size=2048, threads=3), RngSeed(11))
        assert np.array_equal(a.draws, b.draws) and a.proposals_used == b.proposals_used

    def test_truncated_gaussian_kernel_run(self):
        cfg = AbcConfig(0.2, m_target=1000, kernel="truncated_gaussian")
        s = abc_rejection(BINOM, UNIT, OBS, cfg, RngSeed(12))
        assert np.all(s.distances < 0.2) and len(s) == 1000

    def test_screen_gives_same_law(self):
        model = NormalModel()
        space = ParameterSpace((Continuous("mu", -0.25, 0.25), Continuous("sigma", 0.75, 1.25)))
        obs = [-0.005, 1.002]
        plain = abc_rejection(model, space, obs, AbcConfig(0.05, m_target=2000), RngSeed(13))
        fast = abc_rejection(model, space, obs, AbcConfig(0.05, m_target=2000, screen=True), RngSeed(14))
        assert np.all(fast.distances < 0.05)
        for j in range(2):
            assert stats.ks_2samp(plain.draws[:, j], fast.draws[:, j]).pvalue > 0.001

    def test_dimension_checks(self):
        with pytest.raises(DimensionError):
            abc_rejection(BINOM, UNIT, [1.0, 2.0], AbcConfig(0.1, m_target=10), RngSeed(1))
        wrong = ParameterSpace((Continuous("q", 0, 1),))
        with pytest.raises(DimensionError):
            abc_rejection(BINOM, wrong, OBS, AbcConfig(0.1, m_target=10), RngSeed(1))


class TestNearest:
    def test_keeps_m_nearest(self):
        s = abc_nearest(BINOM, UNIT, OBS, 500, 0.1, RngSeed(15), batch_size=1000)
        assert len(s) == 500 and s.proposals_used == 5000
        assert s.radius == s.distances.max()
        assert s.mode == "quantile"

    def test_fractions_share_proposals(self):
        out = abc_nearest_sweep(BINOM, UNIT, OBS, 200, [0.5, 0.1], RngSeed(16), batch_size=500)
        assert out[0.1].radius <= out[0.5].radius

    def test_run_abc_dispatch(self):
        cfg = AbcConfig(0.2, m_target=100, mode="quantile")
        s = run_abc(BINOM, UNIT, OBS, cfg, RngSeed(17))
        assert s.mode == "quantile" and s.proposals_used == 500

    def test_uncomputable_statistics_never_kept(self):
        model = SuperposedGammaModel(t0=100.0)
        from abcmle.core import Discrete

        space = ParameterSpace((Discrete("N", (1, 2)), Continuous("alpha", 5, 15), Continuous("beta", 0.25, 1.5)))
        obs = np.full(9, 0.5)
        s = abc_nearest(model, space, obs, 50, 1.0, RngSeed(18), batch_size=64)
        assert np.all(np.isfinite(s.distances))


class TestPilot:
    def test_pilot_scale_is_mad(self):
        model = NormalModel()
        space = ParameterSpace((Continuous("mu", -0.25, 0.25), Continuous("sigma", 0.75, 1.25)))
        sc = pilot_scale(model, space, RngSeed(19))
        assert len(sc) == 2 and all(v > 0 for v in sc)
        spec = resolve_distance(DistanceSpec("pilot"), model, space, RngSeed(19))
        assert spec.kind == "weighted" and spec.scale == sc

    def test_acceptance_rates_monotone(self):
        r = acceptance_rates(BINOM, UNIT, OBS, [0.5, 0.1, 0.05], RngSeed(20), n=50_000)
        assert r[0.5] > r[0.1] > r[0.05] > 0


class TestLikelihoodCurve:
    @pytest.mark.parametrize("eps", [0.1, 1.0])
    def test_binomial_point_matches_exact_window(self, eps):
        cur = likelihood_curve(BINOM, [[0.553]], OBS, eps, 100_000, RngSeed(21))
        exact = binomial_window_prob(0.553, 30, 10, 5.53, eps)
        assert abs(cur.values[0] - exact) <= 3 * cur.stderr[0]

    def test_frozen_window_oracles(self):
        assert binomial_window_prob(0.553, 30, 10, 5.53, 0.1) == pytest.approx(0.27202135219619195, rel=1e-12)
        assert binomial_window_prob(0.553, 30, 10, 5.53, 1.0) == pytest.approx(0.9995231974164949, rel=1e-12)

    def test_outside_prior_box_evaluable(self):
        cur = likelihood_curve(BINOM, [[0.9]], OBS, 0.5, 1000, RngSeed(22))
        assert cur.values[0] == 0.0 and cur.stderr[0] == 0.0

    def test_normal_curve_converges(self):
        model = NormalModel(n=100)
        xbar, s = -0.005, 1.002
        mus = np.linspace(-0.3, 0.3, 13)
        grid = np.column_stack([mus, np.full_like(mus, s)])
        exact = normal_mean_normalized_likelihood(mus, xbar, s, 100)
        errs = []
        for eps in (0.4, 0.2, 0.1, 0.05):
            cur = likelihood_curve(model, grid, [xbar, s], eps, 40_000, RngSeed(23))
            errs.append(np.abs(cur.normalized() - exact).max())
        assert all(a > b for a, b in zip(errs, errs[1:]))

    def test_stream_id_changes_noise_only(self):
        a = likelihood_curve(BINOM, [[0.55]], OBS, 0.1, 50_000, RngSeed(24, 0))
        b = likelihood_curve(BINOM, [[0.55]], OBS, 0.1, 50_000, RngSeed(24, 1))
        assert a.values[0] != b.values[0]
        assert abs(a.values[0] - b.values[0]) < 4 * math.hypot(a.stderr[0], b.stderr[0])

    def test_rejects_bad_input(self):
        with pytest.raises(AmleError):
            likelihood_curve(BINOM, np.empty((0, 1)), OBS, 0.1, 10, RngSeed(1))
        with pytest.raises(AmleError):
            likelihood_curve(BINOM, [[0.5]], OBS, 0.1, 0, RngSeed(1))
        with pytest.raises(AmleError):
            likelihood_curve(BINOM, [[0.5]], OBS, 0.1, 10, RngSeed(1), distance_spec=DistanceSpec("pilot"))

    def test_normalized_sums_to_one(self):
        cur = likelihood_curve(BINOM, [[0.5], [0.55], [0.6]], OBS, 0.5, 2000, RngSeed(25))
        assert cur.normalized().sum() == pytest.approx(1.0)


def test_save_load_round_trip(tmp_path):
    s = abc_rejection(BINOM, UNIT, OBS, AbcConfig(0.1, m_target=50), RngSeed(26, 2).derive(11, 3))
    p = save_sample(s, tmp_path / "sample.csv")
    back = load_sample(p)
    assert np.array_equal(back.draws, s.draws) and np.array_equal(back.distances, s.distances)
    assert back.seed == s.seed and back.proposals_used == s.proposals_used
    assert back.acceptance_rate == s.acceptance_rate
    assert back.names == ("p",)
