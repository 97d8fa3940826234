import math

import numpy as np
import pytest
from scipy.integrate import quad

from qoesim import qoe
from qoesim.errors import (
    DegenerateInput,
    DomainError,
    InsufficientData,
    LengthMismatch,
    UnknownStructure,
)


def make_samples(structure, alpha, beta, n, rng, noise_var=0.0, r_max=8.0):
    """Synthetic factor samples from a known ground-truth model."""
    true = qoe.QoEModel(structure, (alpha, beta), 0.0, 0)
    out = []
    for _ in range(n):
        r = rng.uniform(0, r_max)
        q = rng.random()
        b = rng.uniform(1, 2)
        c = rng.uniform(1, 2)
        if noise_var > 0:
            mean = qoe.qos_score(structure, r, q) * qoe.impact(b, c, alpha, beta)
            val = qoe.sample_truncated_normal(mean, noise_var, rng=rng)
        else:
            val = qoe.eval_qoe(true, r, q, b, c)
        out.append(qoe.FactorSample(val, r, q, b, c))
    return out


class TestQosScore:
    def test_structure1_no_rebuffer(self):
        assert qoe.qos_score(1, 0.0, 0.3) == 5.0

    def test_structure2_midpoint(self):
        assert qoe.qos_score(2, 0.0, 0.5) == 3.0

    def test_structure3_boundary_clamp(self):
        # 1 + 4 - 4 = 1 sits exactly on the lower bound
        assert qoe.qos_score(3, 10.0, 1.0) == 1.0

    def test_clamps_below(self):
        assert qoe.qos_score(1, 20.0, 0.0) == 1.0

    def test_unknown_structure(self):
        with pytest.raises(UnknownStructure):
            qoe.qos_score(4, 0.0, 0.0)


class TestTruncatedNormal:
    def test_degenerate_variance(self):
        rng = np.random.default_rng(0)
        assert qoe.sample_truncated_normal(3.0, 0.0, rng=rng) == 3.0
        assert qoe.sample_truncated_normal(9.0, 0.0, rng=rng) == 5.0

    def test_truncation_forces_deficit(self):
        rng = np.random.default_rng(1)
        draws = [qoe.sample_truncated_normal(5.0, 8.0, rng=rng) for _ in range(2000)]
        assert max(draws) <= 5.0
        assert np.mean(draws) < 5.0

    def test_bounds_always_hold(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            mu = rng.uniform(-5, 11)
            var = rng.uniform(0, 10)
            x = qoe.sample_truncated_normal(mu, var, rng=rng)
            assert 1.0 <= x <= 5.0

    def test_mean_matches_quadrature(self):
        # Independent oracle: numeric integration of the truncated density.
        mu, sigma = 3.0, 1.0
        norm = quad(lambda x: math.exp(-0.5 * ((x - mu) / sigma) ** 2), 1, 5)[0]
        mean = quad(lambda x: x * math.exp(-0.5 * ((x - mu) / sigma) ** 2), 1, 5)[0] / norm
        rng = np.random.default_rng(3)
        u = rng.random(100_000)
        draws = qoe.truncated_normal_from_uniform(mu, sigma, u)
        assert abs(draws.mean() - mean) < 0.01

    def test_invalid_bounds(self):
        rng = np.random.default_rng(0)
        with pytest.raises(DomainError):
            qoe.sample_truncated_normal(3.0, 1.0, 5.0, 1.0, rng=rng)


class TestMosSample:
    def test_neutral_context_mean(self):
        # B = C = 1 makes the generator mean equal the QoS score exactly.
        rng = np.random.default_rng(4)
        u_mid = 0.5
        for s in (1, 2, 3):
            mean = qoe.qos_score(s, 1.0, 0.5) * qoe.impact(1, 1, 0.7, 0.7)
            assert mean == qoe.qos_score(s, 1.0, 0.5)
        x = qoe.mos_sample(2, 0.0, 0.5, 1.0, 1.0, (0.9, 0.9), rng=rng)
        assert 1.0 <= x <= 5.0

    def test_structure3_variance(self):
        assert qoe.STRUCTURE_VARIANCE[3] == 0.8

    def test_halved_mean_closed_form(self):
        # structure 2, Q=1, alpha=1, beta=0, B=2, C=1: mean = 5 * 1/2
        mean = qoe.qos_score(2, 0.0, 1.0) * qoe.impact(2.0, 1.0, 1.0, 0.0)
        assert mean == pytest.approx(2.5)


class TestEvalQoe:
    def test_neutral_context_equals_qos(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            m = qoe.QoEModel(int(rng.integers(1, 4)),
                             (rng.uniform(0, 2), rng.uniform(0, 2)), 0.0, 0)
            r, q = rng.uniform(0, 10), rng.random()
            assert qoe.eval_qoe(m, r, q, 1.0, 1.0) == qoe.qos_score(m.structure_index, r, q)

    def test_zero_params_context_insensitive(self):
        m = qoe.QoEModel(2, (0.0, 0.0), 0.0, 0)
        for b, c in [(1, 1), (1.5, 2), (2, 2)]:
            assert qoe.eval_qoe(m, 0, 0.5, b, c) == qoe.qos_score(2, 0, 0.5)

    def test_half_at_full_context(self):
        m = qoe.QoEModel(2, (0.5, 0.5), 0.0, 0)
        assert qoe.eval_qoe(m, 0, 1.0, 2.0, 2.0) == pytest.approx(2.5)

    def test_monotone_degradation(self):
        rng = np.random.default_rng(6)
        for _ in range(300):
            m = qoe.QoEModel(int(rng.integers(1, 4)),
                             (rng.uniform(0, 1.5), rng.uniform(0, 1.5)), 0.0, 0)
            r, q = rng.uniform(0, 5), rng.random()
            grid = np.linspace(1, 2, 7)
            vals_b = [qoe.eval_qoe(m, r, q, b, 1.3) for b in grid]
            vals_c = [qoe.eval_qoe(m, r, q, 1.3, c) for c in grid]
            assert all(x >= y - 1e-12 for x, y in zip(vals_b, vals_b[1:]))
            assert all(x >= y - 1e-12 for x, y in zip(vals_c, vals_c[1:]))


class TestDistanceCorrelation:
    def test_identical_vectors(self):
        assert qoe.distance_correlation([1, 2, 3, 4], [1, 2, 3, 4]) == pytest.approx(1.0)

    def test_affine_dependence(self):
        x = np.arange(10.0)
        assert qoe.distance_correlation(x, 2 * x + 1) == pytest.approx(1.0, abs=1e-9)

    def test_independent_uniforms_golden(self):
        rng = np.random.default_rng(20260810)
        x, y = rng.random(2000), rng.random(2000)
        d = qoe.distance_correlation(x, y)
        assert d == pytest.approx(0.02931779591429856, abs=1e-12)
        assert d < 0.1

    def test_symmetry_and_affine_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = int(rng.integers(8, 40))
            x, y = rng.normal(size=n), rng.normal(size=n)
            d = qoe.distance_correlation(x, y)
            assert qoe.distance_correlation(y, x) == pytest.approx(d, abs=1e-9)
            a = rng.uniform(0.1, 3) * (1 if rng.random() < 0.5 else -1)
            b = rng.uniform(-5, 5)
            assert qoe.distance_correlation(a * x + b, y) == pytest.approx(d, abs=1e-9)

    def test_errors(self):
        with pytest.raises(LengthMismatch):
            qoe.distance_correlation([1, 2, 3, 4], [1, 2, 3])
        with pytest.raises(DegenerateInput):
            qoe.distance_correlation([1, 1, 1, 1], [1, 2, 3, 4])
        with pytest.raises(DegenerateInput):
            qoe.distance_correlation([1, 2], [3, 4])


class TestSelectFactors:
    def test_structure1_excludes_quality(self):
        # QoE depends on R, B, C only; Q is a constant column here.
        rng = np.random.default_rng(8)
        samples = []
        for _ in range(300):
            r, b, c = rng.uniform(0, 8), rng.uniform(1, 2), rng.uniform(1, 2)
            mean = qoe.qos_score(1, r, 0.5) * qoe.impact(b, c, 0.8, 0.8)
            samples.append(qoe.FactorSample(
                qoe.sample_truncated_normal(mean, 0.3, rng=rng), r, 0.5, b, c))
        picked = qoe.select_factors(samples, threshold=0.1)
        assert "Q" not in picked
        assert "R" in picked

    def test_threshold_zero_selects_all_nonconstant(self):
        rng = np.random.default_rng(9)
        samples = make_samples(3, 0.5, 0.5, 50, rng)
        assert set(qoe.select_factors(samples, threshold=0.0)) == {"R", "Q", "B", "C"}

    def test_threshold_above_one_empty(self):
        rng = np.random.default_rng(10)
        samples = make_samples(3, 0.5, 0.5, 50, rng)
        assert qoe.select_factors(samples, threshold=1.01) == []

    def test_too_few_samples(self):
        rng = np.random.default_rng(11)
        with pytest.raises(InsufficientData):
            qoe.select_factors(make_samples(2, 0.5, 0.5, 10, rng))


class TestFitModel:
    def test_noiseless_recovery(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            a, b = rng.uniform(0.2, 1.0, 2)
            struct = int(rng.integers(1, 4))
            samples = make_samples(struct, a, b, 200, rng)
            fit = qoe.fit_model(struct, samples)
            assert abs(fit.impact_params[0] - a) < 1e-4
            assert abs(fit.impact_params[1] - b) < 1e-4
            assert fit.fit_rmse < 1e-6

    def test_grid_search_oracle_agreement(self):
        # Brute-force 0.01-step grid over the parameter box as the oracle.
        rng = np.random.default_rng(13)
        grid = np.arange(0.0, 1.5001, 0.01)
        for _ in range(10):
            a, b = rng.uniform(0.2, 1.0, 2)
            samples = make_samples(2, a, b, 60, rng, noise_var=1.0)
            fit = qoe.fit_model(2, samples)
            arr_q = np.array([s.qoe for s in samples])
            arr_r = np.array([s.r for s in samples])
            arr_qu = np.array([s.q for s in samples])
            arr_b = np.array([s.b for s in samples])
            arr_c = np.array([s.c for s in samples])
            s_vec = np.clip(1 + 4 * arr_qu, 1, 5)
            best = np.inf
            for ga in grid:
                i = 1.0 / (1.0 + ga * (arr_b - 1) + grid[None, :].T * (arr_c - 1))
                pred = np.clip(s_vec * i, 1, 5)
                sse = ((arr_q - pred) ** 2).sum(axis=1)
                best = min(best, sse.min())
            pa, pb = fit.impact_params
            i = 1.0 / (1.0 + pa * (arr_b - 1) + pb * (arr_c - 1))
            fit_sse = float(((arr_q - np.clip(s_vec * i, 1, 5)) ** 2).sum())
            assert fit_sse <= best + 1e-3

    def test_noisy_rmse_tracks_generator_std(self):
        rng = np.random.default_rng(14)
        var = qoe.STRUCTURE_VARIANCE[2]
        samples = make_samples(2, 0.5, 0.3, 500, rng, noise_var=var, r_max=0.0)
        fit = qoe.fit_model(2, samples)
        # Truncation shrinks the observed std below sqrt(var); compare against
        # the empirical deviation of samples from their generator means.
        dev = []
        for s in samples:
            mean = qoe.qos_score(2, s.r, s.q) * qoe.impact(s.b, s.c, 0.5, 0.3)
            dev.append(s.qoe - min(max(mean, 1.0), 5.0))
        emp_std = float(np.sqrt(np.mean(np.square(dev))))
        assert abs(fit.fit_rmse - emp_std) / emp_std < 0.15

    def test_neutral_context_unidentifiable(self):
        rng = np.random.default_rng(15)
        samples = [qoe.FactorSample(3.0 + rng.random(), 1.0, 0.5, 1.0, 1.0)
                   for _ in range(50)]
        with pytest.raises(InsufficientData):
            qoe.fit_model(3, samples)

    def test_too_few(self):
        with pytest.raises(InsufficientData):
            qoe.fit_model(1, [qoe.FactorSample(3, 0, 0.5, 1.5, 1.5)])

    def test_deterministic(self):
        rng = np.random.default_rng(16)
        samples = make_samples(3, 0.4, 0.8, 100, rng, noise_var=0.8)
        f1 = qoe.fit_model(3, samples)
        f2 = qoe.fit_model(3, samples)
        assert f1 == f2


class TestShouldUpdate:
    def _fit_and_recent(self, alpha_fit, alpha_recent, seed):
        rng = np.random.default_rng(seed)
        fit_samples = make_samples(2, alpha_fit, 0.3, 300, rng, noise_var=0.1)
        model = qoe.fit_model(2, fit_samples)
        recent = make_samples(2, alpha_recent, 0.3, 100, rng, noise_var=0.1)
        return model, recent

    def test_stable_model_not_updated(self):
        model, recent = self._fit_and_recent(0.5, 0.5, 17)
        assert not qoe.should_update(model, recent, rmse_tolerance=1.5)

    def test_shifted_params_trigger_update(self):
        model, recent = self._fit_and_recent(0.2, 1.0, 18)
        assert qoe.should_update(model, recent, rmse_tolerance=1.5)

    def test_zero_tolerance_always_updates(self):
        model, recent = self._fit_and_recent(0.5, 0.5, 19)
        assert qoe.should_update(model, recent, rmse_tolerance=0.0)


class TestFitBestStructure:
    def test_recovers_generating_structure(self):
        rng = np.random.default_rng(20)
        hits = 0
        trials = 30
        for t in range(trials):
            struct = 1 + t % 3
            a, b = rng.uniform(0.2, 1.0, 2)
            samples = make_samples(struct, a, b, 120, rng,
                                   noise_var=qoe.STRUCTURE_VARIANCE[struct])
            model, _ = qoe.fit_best_structure(samples)
            hits += model.structure_index == struct
        assert hits >= int(0.85 * trials)
