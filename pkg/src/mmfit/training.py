"""Policy-gradient training of the sampling network.

One training step samples, for every scene in the batch, K full runs of the
nested search (each with P multi-hypotheses of M instances from S-sized
pools). All K*P*B network invocations of one instance step are collated into
a single pseudo-batch forward pass, which is also what batch-norm statistics
are computed over. The task loss of each run's selected multi-hypothesis is
clamped, mean-centered over the K runs and used as the score-function
coefficient for all of that run's sampled observations. In self-supervised
mode an inlier-masking penalty on the sampling weights is added and
differentiated directly through the forward pass.

Sampled trajectories are treated as fixed: no gradient flows through state
computation or hypothesis selection.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data import Scene, subsample_scene
from .errors import NonFiniteGradient
from .geometry import DegenerateMinimalSet, ModelInstance, get_model_class
from .metrics import hungarian_assign, line_pair_distance, vp_angle_error
from .network import NetworkConfig, SamplingNetwork, save_network
from .sampling import DEGENERATE_RETRIES, floor_and_normalize, sample_minimal_set
from .scoring import ScoringParams, soft_inlier

_TRAIN_STREAM = 2
_SUBSAMPLE_STREAM = 3
_SHUFFLE_STREAM = 4


@dataclass
class TrainConfig:
    """Training hyperparameters; defaults follow the vanishing-point recipe."""

    kind: str
    mode: str = "supervised"  # supervised | self-supervised
    learning_rate: float = 1e-4
    batch_size: int = 16
    epochs: int = 400
    sample_count: int = 4     # K: selected multi-hypotheses per scene
    single_samples: int = 2   # S
    multi_samples: int = 2    # P
    num_instances: int = 3    # M
    tau: float = 1e-3
    kappa: float = 1e-2
    loss_clamp: float = 0.3
    observations_per_scene: int = 256
    batch_norm: bool = True
    rng_seed: int = 0
    lr_floor_ratio: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.mode not in ("supervised", "self-supervised"):
            raise ValueError(f"unknown training mode {self.mode!r}")


def default_train_config(kind: str, mode: str | None = None) -> TrainConfig:
    if kind == "vp":
        return TrainConfig(kind="vp", mode=mode or "supervised")
    if kind == "homography":
        return TrainConfig(kind="homography", mode=mode or "self-supervised",
                           learning_rate=2e-6, batch_size=1, epochs=100,
                           sample_count=8, num_instances=6, tau=1e-4,
                           batch_norm=False)
    if kind == "line":
        return TrainConfig(kind="line", mode=mode or "supervised",
                           epochs=20, num_instances=3, tau=1.5e-2)
    raise KeyError(f"unknown model kind: {kind!r}")


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def supervised_loss(models: Sequence[ModelInstance],
                    gt_models: Sequence[ModelInstance],
                    pair_loss: Callable[[ModelInstance, ModelInstance], float],
                    ) -> float:
    """Hungarian-matched mean pair loss over the first min(M, G) estimates.

    Only the estimates selected first take part, so early good selections are
    rewarded and later instances are free.
    """
    g = len(gt_models)
    if g == 0:
        raise ValueError("supervised loss needs ground-truth models")
    kept = list(models)[:min(len(models), g)]
    cost = np.array([[pair_loss(e, t) for t in gt_models] for e in kept])
    _, _, total = hungarian_assign(cost)
    return float(total / len(kept))


def self_supervised_loss(models: Sequence[ModelInstance], observations: np.ndarray,
                         params: ScoringParams) -> float:
    """Negative mean cumulative soft inlier ratio over all instance prefixes."""
    if not models:
        raise ValueError("need at least one model")
    spec = get_model_class(models[0].kind)
    state = np.zeros(len(np.atleast_2d(observations)))
    ratios = []
    for m in models:
        state = np.maximum(state, soft_inlier(spec.residuals(observations, m), params))
        ratios.append(state.mean())
    return float(-np.mean(ratios))


def imr_penalty(normalized_weights: np.ndarray, states: np.ndarray) -> float:
    """Mean hinge penalty max(0, p~ + s - 1) over instance steps and observations.

    ``normalized_weights`` are sampling weights divided by their per-step
    maximum.
    """
    p = np.asarray(normalized_weights, dtype=np.float64)
    s = np.asarray(states, dtype=np.float64)
    return float(np.mean(np.maximum(0.0, p + s - 1.0)))


def clamp_loss(value: float, limit: float = 0.3) -> float:
    return float(np.clip(value, -limit, limit))


def imr_value_and_grad(probs: np.ndarray, states: np.ndarray,
                       ) -> tuple[float, np.ndarray]:
    """Summed hinge penalty of one instance step and its gradient w.r.t. the
    sampling probabilities (through the division by the max weight)."""
    p = np.asarray(probs, dtype=np.float64)
    s = np.asarray(states, dtype=np.float64)
    jmax = int(np.argmax(p))
    pmax = p[jmax]
    ptilde = p / pmax
    hinge = ptilde + s - 1.0
    active = hinge > 0.0
    value = float(np.maximum(0.0, hinge).sum())
    grad = np.where(active, 1.0 / pmax, 0.0)
    grad[jmax] -= float((active * p).sum()) / pmax ** 2
    return value, grad


def make_pair_loss(scene: Scene) -> Callable[[ModelInstance, ModelInstance], float]:
    """Task-specific single-pair loss for supervised training."""
    if scene.kind == "line":
        # capped box distance keeps partially-correct multi-hypotheses
        # distinguishable under the global loss clamp
        def pair(e, t):
            return min(line_pair_distance(e, t, scene.observations), 0.3)
        return pair
    if scene.kind == "vp":
        def pair(e, t):
            return math.radians(vp_angle_error(t.params, e.params, scene.intrinsics))
        return pair
    raise ValueError(f"no supervised pair loss for kind {scene.kind!r}")


def build_loss_fn(config: TrainConfig) -> Callable[[list[ModelInstance], Scene], float]:
    if config.mode == "supervised":
        def fn(models, scene):
            if scene.gt_models is None:
                raise ValueError(f"scene {scene.scene_id!r} has no ground-truth models")
            return supervised_loss(models, scene.gt_models, make_pair_loss(scene))
        return fn
    params = ScoringParams(config.tau)

    def fn(models, scene):
        return self_supervised_loss(models, scene.observations, params)
    return fn


# ---------------------------------------------------------------------------
# Optimizer and schedule
# ---------------------------------------------------------------------------

class AdamState:
    """First/second moment accumulators for every trainable parameter."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0


def adam_update(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                state: AdamState, lr: float, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8) -> None:
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def cosine_lr(step: int, total_steps: int, lr0: float,
              floor_ratio: float = 1e-3) -> float:
    """Cosine annealing from lr0 down to floor_ratio * lr0 at the final step."""
    floor = lr0 * floor_ratio
    if total_steps <= 1:
        return lr0
    frac = min(max(step / (total_steps - 1), 0.0), 1.0)
    return floor + 0.5 * (lr0 - floor) * (1.0 + math.cos(math.pi * frac))


# ---------------------------------------------------------------------------
# One REINFORCE step
# ---------------------------------------------------------------------------

def _row_rng(seed: int, epoch: int, step: int, b: int, k: int, p: int):
    return np.random.default_rng(np.random.SeedSequence(
        entropy=seed, spawn_key=(_TRAIN_STREAM, epoch, step, b, k, p)))


def reinforce_step(net: SamplingNetwork, scenes: Sequence[Scene],
                   config: TrainConfig, adam: AdamState, step: int,
                   total_steps: int, epoch: int = 0,
                   loss_fn: Callable[[list[ModelInstance], Scene], float] | None = None,
                   ) -> dict:
    """Sample, score and apply one Adam update; returns step statistics.

    All scenes must share the same observation count. Raises
    NonFiniteGradient (naming the offending scenes) when a loss or gradient
    is not finite.
    """
    spec = get_model_class(config.kind)
    params = ScoringParams(config.tau)
    if loss_fn is None:
        loss_fn = build_loss_fn(config)
    bsz, kk, pp = len(scenes), config.sample_count, config.multi_samples
    mm, ss, cc = config.num_instances, config.single_samples, spec.minimal_set_size
    n = len(scenes[0].observations)
    rows = bsz * kk * pp

    obs_rows = np.empty((rows, spec.observation_dim, n))
    for b, scene in enumerate(scenes):
        if len(scene.observations) != n:
            raise ValueError("all scenes in a batch must share one observation count")
        obs_rows[b * kk * pp:(b + 1) * kk * pp] = scene.observations.T[None]

    rngs = [_row_rng(config.rng_seed, epoch, step, b, k, p)
            for b in range(bsz) for k in range(kk) for p in range(pp)]

    states = np.zeros((rows, n))
    row_models: list[list[ModelInstance]] = [[] for _ in range(rows)]
    states_per_step = np.empty((mm, rows, n))
    counts_per_step = [np.zeros((rows, n)) for _ in range(mm)]
    probs_per_step = []
    caches = []

    x = np.empty((rows, spec.observation_dim + 1, n))
    x[:, :-1, :] = obs_rows
    for m in range(mm):
        x[:, -1, :] = states
        states_per_step[m] = states
        probs, cache = net.forward(x, train=True, dtype=np.float32)
        net.update_running_stats(cache)
        probs_per_step.append(probs)
        caches.append(cache)
        for r in range(rows):
            w = floor_and_normalize(probs[r])
            obs = obs_rows[r].T
            best_score = -np.inf
            best_model = None
            best_g = None
            for _slot in range(ss):
                model = None
                for _attempt in range(1 + DEGENERATE_RETRIES):
                    idx, _ = sample_minimal_set(w, cc, rngs[r])
                    try:
                        model = spec.solve(obs[idx])
                    except DegenerateMinimalSet:
                        model = None
                        continue
                    break
                if model is None:
                    continue
                counts_per_step[m][r][idx] += 1.0
                g = soft_inlier(spec.residuals(obs, model), params)
                score = np.maximum(states[r], g).sum()
                if score > best_score:
                    best_score = score
                    best_model = model
                    best_g = g
            if best_model is None:
                continue  # a fully degenerate pool contributes no instance
            row_models[r].append(best_model)
            states[r] = np.maximum(states[r], best_g)

    # losses of the selected multi-hypothesis per (scene, k)
    pool_scores = states.sum(axis=1).reshape(bsz, kk, pp)
    best_pool = np.argmax(pool_scores, axis=2)
    raw_losses = np.zeros((bsz, kk))
    for b, scene in enumerate(scenes):
        for k in range(kk):
            r = (b * kk + k) * pp + int(best_pool[b, k])
            raw_losses[b, k] = loss_fn(row_models[r], scene)
    if not np.all(np.isfinite(raw_losses)):
        bad = [scenes[b].scene_id for b in np.unique(np.nonzero(~np.isfinite(raw_losses))[0])]
        raise NonFiniteGradient(f"non-finite task loss for scenes {bad}")
    clamped = np.clip(raw_losses, -config.loss_clamp, config.loss_clamp)
    advantages = clamped - clamped.mean(axis=1, keepdims=True)

    coeff_rows = np.repeat(advantages.reshape(-1), pp) / (bsz * kk)
    selected_rows = {(b * kk + k) * pp + int(best_pool[b, k]): (b, k)
                     for b in range(bsz) for k in range(kk)}

    grads = {name: np.zeros_like(v) for name, v in net.params.items()}
    imr_total = 0.0
    for m in range(mm):
        probs = probs_per_step[m]
        dprobs = coeff_rows[:, None] * counts_per_step[m] / np.maximum(probs, 1e-9)
        if config.mode == "self-supervised" and config.kappa != 0.0:
            scale = config.kappa / (bsz * kk * mm * n)
            for r in selected_rows:
                value, grad = imr_value_and_grad(probs[r], states_per_step[m][r])
                imr_total += value
                dprobs[r] += scale * grad
        step_grads = net.backward(caches[m], dprobs)
        for name, g in step_grads.items():
            grads[name] += g

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            ids = [s.scene_id for s in scenes]
            raise NonFiniteGradient(
                f"non-finite gradient in {name} for scenes {ids}")
    lr = cosine_lr(step, total_steps, config.learning_rate, config.lr_floor_ratio)
    adam_update(net.params, grads, adam, lr, config.adam_beta1,
                config.adam_beta2, config.adam_eps)

    return {
        "mean_loss": float(clamped.mean()),
        "mean_raw_loss": float(raw_losses.mean()),
        "imr": imr_total / (bsz * kk * mm * n),
        "lr": lr,
    }


# ---------------------------------------------------------------------------
# Full training loop
# ---------------------------------------------------------------------------

def train(dataset: Sequence[Scene], config: TrainConfig,
          net: SamplingNetwork | None = None,
          loss_fn: Callable[[list[ModelInstance], Scene], float] | None = None,
          log_path=None, checkpoint_dir=None,
          ) -> tuple[SamplingNetwork, list[dict]]:
    """Train for the configured number of epochs and return (network, log).

    Scenes are subsampled to a fixed observation count per step; scene order
    is reshuffled every epoch; a checkpoint is written per epoch when
    ``checkpoint_dir`` is given. Fully deterministic in the config seed.
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    spec = get_model_class(config.kind)
    if net is None:
        net = SamplingNetwork(
            NetworkConfig(observation_dim=spec.observation_dim,
                          batch_norm=config.batch_norm),
            seed=config.rng_seed)
    records: list[dict] = []
    adam = AdamState(net.params)
    steps_per_epoch = math.ceil(len(dataset) / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    global_step = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng(np.random.SeedSequence(
            entropy=config.rng_seed, spawn_key=(_SHUFFLE_STREAM, epoch),
        )).permutation(len(dataset))
        epoch_losses = []
        for s0 in range(0, len(dataset), config.batch_size):
            batch_ids = order[s0:s0 + config.batch_size]
            scenes = []
            for slot, i in enumerate(batch_ids):
                rng = np.random.default_rng(np.random.SeedSequence(
                    entropy=config.rng_seed,
                    spawn_key=(_SUBSAMPLE_STREAM, epoch, global_step, slot)))
                scenes.append(subsample_scene(
                    dataset[i], config.observations_per_scene, rng))
            stats = reinforce_step(net, scenes, config, adam, global_step,
                                   total_steps, epoch=epoch, loss_fn=loss_fn)
            records.append({"epoch": epoch, "step": global_step, **stats})
            epoch_losses.append(stats["mean_loss"])
            global_step += 1
        records.append({"epoch": epoch, "step": global_step - 1,
                        "epoch_mean_loss": float(np.mean(epoch_losses))})
        if checkpoint_dir is not None:
            os.makedirs(checkpoint_dir, exist_ok=True)
            save_network(net, os.path.join(checkpoint_dir, f"epoch{epoch:04d}.json"))
    if log_path is not None:
        with open(log_path, "w") as f:
            for rec in records:
                f.write(json.dumps(rec) + "\n")
    return net, records
