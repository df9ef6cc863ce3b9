"""EM refinement, greedy ranking and cutoff selection."""

import numpy as np
import pytest
from scipy.special import logsumexp

from mmfit.geometry import fit_line_minimal, get_model_class, refit_line
from mmfit.refine import (RefineConfig, _log_likelihoods, consensus_refit,
                          em_refine, rank_instances, select_instances)
from mmfit.scoring import ScoringParams

LINE = get_model_class("line")


def points_on_line(p, d, count, rng=None, noise=0.0, span=0.5):
    t = (np.linspace(-span, span, count) if rng is None
         else rng.uniform(-span, span, count))
    pts = np.asarray(p) + t[:, None] * np.asarray(d)
    if noise and rng is not None:
        pts = pts + rng.normal(0, noise, pts.shape)
    return pts


class TestEmRefine:
    def test_exact_fixed_point(self):
        m0 = fit_line_minimal((0, 0), (1, 0))
        m1 = fit_line_minimal((0, 1), (1, 0.9))
        obs = np.concatenate([
            points_on_line((0, 0), (1, 0), 30),
            points_on_line((0, 1), (1, -0.1), 30),
        ])
        config = RefineConfig(sigma=0.01, em_iterations=10)
        refined, trace = em_refine([m0, m1], obs, config)
        assert np.allclose(refined[0].params, m0.params, atol=1e-9)
        assert np.allclose(refined[1].params, m1.params, atol=1e-9)

    def test_noisy_line_improves_rms(self):
        rng = np.random.default_rng(0)
        obs = points_on_line((0.1, 0.3), (0.9, 0.2), 200, rng=rng, noise=0.01)
        true = fit_line_minimal((0.1, 0.3), (1.0, 0.5))
        # initial model tilted by 5 degrees around the centroid
        c = obs.mean(axis=0)
        ang = np.arctan2(true.params[1], true.params[0]) + np.radians(5)
        n = np.array([np.cos(ang), np.sin(ang)])
        tilted = np.array([n[0], n[1], -n @ c])
        from mmfit.geometry import ModelInstance
        init = ModelInstance("line", tilted)
        config = RefineConfig(sigma=0.01, em_iterations=10)
        refined, _ = em_refine([init], obs, config)
        rms_before = np.sqrt(np.mean(LINE.residuals(obs, init) ** 2))
        rms_after = np.sqrt(np.mean(LINE.residuals(obs, refined[0]) ** 2))
        assert rms_after <= rms_before
        # single-model EM converges to the exact weighted TLS minimizer
        tls = refit_line(obs, np.ones(len(obs)))
        assert np.allclose(np.abs(refined[0].params), np.abs(tls.params), atol=1e-9)

    def test_loglik_nondecreasing(self):
        rng = np.random.default_rng(1)
        obs = np.concatenate([
            points_on_line((0, 0.2), (1, 0.1), 60, rng=rng, noise=0.008),
            points_on_line((0, 0.8), (1, -0.3), 60, rng=rng, noise=0.008),
            rng.random((40, 2)),
        ])
        models = [fit_line_minimal((0, 0.21), (1, 0.32)),
                  fit_line_minimal((0, 0.79), (1, 0.52))]
        config = RefineConfig(sigma=0.01, em_iterations=10)
        _, trace = em_refine(models, obs, config)
        assert len(trace) == 11
        assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))

    def test_huge_sigma_uniform_responsibilities(self):
        rng = np.random.default_rng(2)
        obs = rng.random((50, 2))
        models = [fit_line_minimal(rng.random(2), rng.random(2)) for _ in range(3)]
        max_r = max(np.max(LINE.residuals(obs, m)) for m in models)
        logp = _log_likelihoods(models, obs, sigma=1e3 * max_r)
        resp = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
        assert np.allclose(resp, 1.0 / 3.0, atol=1e-6)

    def test_empty_models_rejected(self):
        with pytest.raises(ValueError):
            em_refine([], np.zeros((4, 2)), RefineConfig())


class TestConsensusRefit:
    def test_ignores_outliers(self):
        rng = np.random.default_rng(3)
        obs = np.concatenate([
            points_on_line((0, 0.5), (1, 0.0), 80, rng=rng, noise=0.005),
            rng.random((120, 2)),  # heavy contamination
        ])
        init = fit_line_minimal((0.0, 0.49), (1.0, 0.54))  # ~3 degrees off
        refined = consensus_refit([init], obs, ScoringParams(0.02))[0]
        clean = obs[:80]
        assert np.sqrt(np.mean(LINE.residuals(clean, refined) ** 2)) < \
            np.sqrt(np.mean(LINE.residuals(clean, init) ** 2))


class TestRankInstances:
    def test_singleton(self):
        m = fit_line_minimal((0, 0), (1, 0))
        obs = np.zeros((5, 2))
        assert rank_instances([m], obs, ScoringParams(0.01)).tolist() == [0]

    def test_larger_support_first(self):
        a = fit_line_minimal((0, 0), (1, 0))      # 10 supporting points
        b = fit_line_minimal((0, 1), (1, 1))      # 5 supporting points
        obs = np.concatenate([
            np.stack([np.linspace(0, 1, 10), np.zeros(10)], axis=1),
            np.stack([np.linspace(0, 1, 5), np.ones(5)], axis=1),
        ])
        order = rank_instances([b, a], obs, ScoringParams(0.01))
        assert order.tolist() == [1, 0]

    def test_matches_greedy_oracle(self):
        rng = np.random.default_rng(4)
        from mmfit.scoring import model_soft_scores
        for _ in range(30):
            obs = rng.random((40, 2))
            models = [fit_line_minimal(rng.random(2), rng.random(2))
                      for _ in range(4)]
            params = ScoringParams(0.05)
            order = rank_instances(models, obs, params)
            # exhaustive greedy recomputation
            scores = model_soft_scores(models, obs, params)
            remaining = list(range(4))
            covered = np.zeros(40)
            expected = []
            while remaining:
                gains = [np.maximum(covered, scores[q]).sum() for q in remaining]
                q = remaining[int(np.argmax(gains))]
                remaining.remove(q)
                expected.append(q)
                covered = np.maximum(covered, scores[q])
            assert order.tolist() == expected

    def test_prefix_coverage_nondecreasing(self):
        rng = np.random.default_rng(5)
        obs = rng.random((40, 2))
        models = [fit_line_minimal(rng.random(2), rng.random(2)) for _ in range(4)]
        params = ScoringParams(0.05)
        order = rank_instances(models, obs, params)
        from mmfit.scoring import multi_instance_score
        values = [multi_instance_score([models[i] for i in order[:k]], obs, params)
                  for k in range(1, 5)]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


class TestSelectInstances:
    def make_scene(self, counts):
        """Models are horizontal lines; each has `counts[i]` private points."""
        models = []
        blocks = []
        for i, c in enumerate(counts):
            y = 0.2 * i
            models.append(fit_line_minimal((0, y), (1, y)))
            blocks.append(np.stack([np.linspace(0, 1, c), np.full(c, y)], axis=1))
        return models, np.concatenate(blocks)

    def test_cutoff(self):
        models, obs = self.make_scene([100, 50, 2])
        config = RefineConfig(theta=0.01, min_increment=6)
        kept = select_instances(models, obs, config)
        assert len(kept) == 2

    def test_zero_threshold_keeps_all(self):
        models, obs = self.make_scene([100, 50, 2])
        config = RefineConfig(theta=0.01, min_increment=0)
        assert len(select_instances(models, obs, config)) == 3

    def test_first_always_kept(self):
        models, obs = self.make_scene([5, 4])
        config = RefineConfig(theta=0.01, min_increment=6)
        kept = select_instances(models, obs, config)
        assert len(kept) == 1

    def test_prefix_property(self):
        models, obs = self.make_scene([40, 30, 3, 20])
        config = RefineConfig(theta=0.01, min_increment=6)
        kept = select_instances(models, obs, config)
        # stops at the first failing instance even if later ones would pass
        assert len(kept) == 2
