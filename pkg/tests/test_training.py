"""Losses, optimizer schedule and REINFORCE training dynamics."""

import itertools

import numpy as np
import pytest

from mmfit.data import Scene, SynthLineConfig, generate_line_scene
from mmfit.errors import NonFiniteGradient
from mmfit.geometry import ModelInstance, fit_line_minimal, get_model_class
from mmfit.network import NetworkConfig, SamplingNetwork
from mmfit.scoring import ScoringParams
from mmfit.training import (AdamState, TrainConfig, build_loss_fn, clamp_loss,
                            cosine_lr, imr_penalty, imr_value_and_grad,
                            reinforce_step, self_supervised_loss,
                            supervised_loss, train)

LINE = get_model_class("line")


def mini_net(seed=0, observation_dim=2, batch_norm=True):
    return SamplingNetwork(NetworkConfig(observation_dim=observation_dim,
                                         channels=8, blocks=2,
                                         batch_norm=batch_norm), seed=seed)


def mini_config(**kwargs):
    defaults = dict(kind="line", mode="supervised", learning_rate=1e-3,
                    batch_size=2, epochs=2, sample_count=2, single_samples=2,
                    multi_samples=2, num_instances=2, tau=0.02,
                    observations_per_scene=24, batch_norm=True, rng_seed=0)
    defaults.update(kwargs)
    return TrainConfig(**defaults)


class TestSupervisedLoss:
    def test_exact_estimates(self):
        gt = [fit_line_minimal((0, 0), (1, 0)), fit_line_minimal((0, 1), (1, 1))]
        pair = lambda e, t: float(np.sum(np.abs(e.params - t.params)))
        assert supervised_loss(gt, gt, pair) == 0.0

    def test_first_selected_restriction(self):
        # G=1, M=2: only the first estimate counts
        gt = [ModelInstance("line", np.array([0.0, 1.0, 0.0]))]
        est = [ModelInstance("line", np.array([0.0, 1.0, -0.25])),
               ModelInstance("line", np.array([1.0, 0.0, -99.0]))]
        pair = lambda e, t: float(abs(e.params[2] - t.params[2]))
        assert supervised_loss(est, gt, pair) == pytest.approx(0.25)

    def test_matches_permutation_enumeration(self):
        rng = np.random.default_rng(0)
        models = [ModelInstance("line", rng.random(3)) for _ in range(3)]
        gt = [ModelInstance("line", rng.random(3)) for _ in range(3)]
        cost = rng.random((3, 3))
        index = {id(m): i for i, m in enumerate(models)}
        gt_index = {id(t): j for j, t in enumerate(gt)}
        pair = lambda e, t: float(cost[index[id(e)], gt_index[id(t)]])
        brute = min(sum(cost[i, p] for i, p in enumerate(perm))
                    for perm in itertools.permutations(range(3)))
        assert supervised_loss(models, gt, pair) == pytest.approx(brute / 3)


class TestSelfSupervisedLoss:
    def test_no_inliers(self):
        obs = np.stack([np.linspace(0, 1, 30), np.ones(30)], axis=1)
        m = fit_line_minimal((0, 0), (1, 0))
        value = self_supervised_loss([m], obs, ScoringParams(1e-3))
        assert value == pytest.approx(0.0, abs=1e-6)

    def test_all_zero_residuals(self):
        obs = np.stack([np.linspace(0, 1, 30), np.zeros(30)], axis=1)
        m = fit_line_minimal((0, 0), (1, 0))
        value = self_supervised_loss([m], obs, ScoringParams(1e-3))
        assert value == pytest.approx(-0.9933071490757153, abs=1e-9)

    def test_duplicate_idempotent(self):
        rng = np.random.default_rng(1)
        obs = rng.random((40, 2))
        m = fit_line_minimal(rng.random(2), rng.random(2))
        p = ScoringParams(0.02)
        assert self_supervised_loss([m, m], obs, p) == \
            pytest.approx(self_supervised_loss([m], obs, p), abs=1e-12)


class TestImrPenalty:
    def test_saturated(self):
        assert imr_penalty(np.array([1.0]), np.array([1.0])) == 1.0

    def test_below_hinge(self):
        assert imr_penalty(np.array([0.3]), np.array([0.5])) == 0.0

    def test_arithmetic(self):
        assert imr_penalty(np.array([0.9]), np.array([0.6])) == pytest.approx(0.5)

    def test_mean_over_steps_and_observations(self):
        p = np.array([[1.0, 0.2], [0.9, 0.1]])
        s = np.array([[1.0, 0.1], [0.6, 0.2]])
        expected = (1.0 + 0.0 + 0.5 + 0.0) / 4
        assert imr_penalty(p, s) == pytest.approx(expected)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            probs = rng.random(12) + 0.05
            probs /= probs.sum()
            states = rng.random(12)
            _, grad = imr_value_and_grad(probs, states)
            for j in range(12):
                h = 1e-7
                up = probs.copy()
                up[j] += h
                down = probs.copy()
                down[j] -= h
                num = (imr_value_and_grad(up, states)[0]
                       - imr_value_and_grad(down, states)[0]) / (2 * h)
                assert grad[j] == pytest.approx(num, rel=1e-3, abs=1e-6)


class TestClampAndSchedule:
    def test_clamp(self):
        assert clamp_loss(0.7) == pytest.approx(0.3)
        assert clamp_loss(-0.7) == pytest.approx(-0.3)
        assert clamp_loss(0.1) == pytest.approx(0.1)

    def test_cosine_endpoints(self):
        lr0 = 1e-4
        assert cosine_lr(0, 100, lr0) == pytest.approx(lr0)
        assert cosine_lr(99, 100, lr0) <= 1e-3 * lr0 + 1e-15

    def test_cosine_monotone(self):
        values = [cosine_lr(t, 50, 1.0) for t in range(50)]
        assert all(b <= a for a, b in zip(values, values[1:]))


def toy_scene(seed=0):
    rng = np.random.default_rng(seed)
    obs = np.array([[0.2, 0.8], [0.4, 0.1], [0.9, 0.2]])
    return Scene("line", obs, scene_id="toy")


def point_zero_loss(models, scene):
    """Lower loss when the fitted line passes near observation 0."""
    r = min(float(LINE.residuals(scene.observations[:1], m)[0]) for m in models)
    return min(r, 0.3)


class TestReinforceStep:
    def test_constant_loss_shift_invariance(self):
        # adding a constant to all K losses leaves the update unchanged
        scenes = [toy_scene()]
        results = []
        for shift in (0.0, 0.13):
            net = mini_net(seed=3)
            adam = AdamState(net.params)
            config = mini_config(sample_count=4, num_instances=1,
                                 observations_per_scene=3, loss_clamp=1e9)
            loss_fn = lambda models, scene: point_zero_loss(models, scene) + shift
            reinforce_step(net, scenes, config, adam, step=0, total_steps=10,
                           loss_fn=loss_fn)
            results.append({k: v.copy() for k, v in net.params.items()})
        for name in results[0]:
            assert np.allclose(results[0][name], results[1][name], atol=1e-12), name

    def test_clamp_applied_before_weighting(self):
        seen = []

        def loss_fn(models, scene):
            seen.append(1)
            return 0.7
        net = mini_net(seed=4)
        adam = AdamState(net.params)
        config = mini_config(num_instances=1, observations_per_scene=3)
        stats = reinforce_step(net, [toy_scene()], config, adam, step=0,
                               total_steps=10, loss_fn=loss_fn)
        assert stats["mean_loss"] == pytest.approx(0.3)
        assert stats["mean_raw_loss"] == pytest.approx(0.7)

    def test_nonfinite_loss_reports_scene(self):
        net = mini_net(seed=5)
        adam = AdamState(net.params)
        config = mini_config(num_instances=1, observations_per_scene=3)
        with pytest.raises(NonFiniteGradient, match="toy"):
            reinforce_step(net, [toy_scene()], config, adam, step=0,
                           total_steps=10,
                           loss_fn=lambda m, s: float("nan"))

    def test_toy_bandit_increases_good_weight(self):
        net = mini_net(seed=6)
        adam = AdamState(net.params)
        scene = toy_scene()
        config = mini_config(kind="line", sample_count=4, single_samples=1,
                             multi_samples=1, num_instances=1,
                             learning_rate=3e-3, observations_per_scene=3)
        x = np.concatenate([scene.observations.T, np.zeros((1, 3))])

        def weight_of_zero():
            probs, _ = net.forward(x, train=False)
            return probs[0]

        before = weight_of_zero()
        for step in range(200):
            reinforce_step(net, [scene], config, adam, step=step,
                           total_steps=200, loss_fn=point_zero_loss)
        after = weight_of_zero()
        assert after > before


class TestTrain:
    def make_dataset(self, count=6):
        return [generate_line_scene(SynthLineConfig(num_lines=2), seed=i)
                for i in range(count)]

    def test_zero_epochs_returns_initial(self):
        dataset = self.make_dataset(2)
        config = mini_config(epochs=0)
        net = mini_net(seed=7)
        reference = {k: v.copy() for k, v in net.params.items()}
        out, records = train(dataset, config, net=net)
        assert out is net
        assert records == []
        for k, v in reference.items():
            assert np.array_equal(net.params[k], v)

    def test_deterministic_log(self):
        dataset = self.make_dataset(4)
        logs = []
        for _ in range(2):
            config = mini_config(epochs=2, batch_size=2, rng_seed=11)
            net = mini_net(seed=8)
            _, records = train(dataset, config, net=net)
            logs.append(records)
        assert logs[0] == logs[1]

    def test_checkpoints_written(self, tmp_path):
        dataset = self.make_dataset(2)
        config = mini_config(epochs=2, batch_size=2)
        net = mini_net(seed=9)
        train(dataset, config, net=net, checkpoint_dir=tmp_path,
              log_path=tmp_path / "log.jsonl")
        assert (tmp_path / "epoch0000.json").exists()
        assert (tmp_path / "epoch0001.json").exists()
        lines = (tmp_path / "log.jsonl").read_text().strip().splitlines()
        assert len(lines) == len([r for r in lines])
        import json
        rec = json.loads(lines[0])
        assert {"epoch", "step", "mean_loss", "lr"} <= set(rec)
