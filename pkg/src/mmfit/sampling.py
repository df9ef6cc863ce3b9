"""Hypothesis sampling: the nested conditional-consensus loops and baselines.

``consensus_search`` runs three nested loops: the innermost draws minimal
sets from a weight function and fits single-instance hypotheses, the middle
loop greedily selects one hypothesis per instance step while conditioning the
weights on a per-observation state, and the outer loop repeats the whole
process independently and keeps the multi-hypothesis with the best joint
soft inlier count.

``sequential_ransac`` is the classic baseline: uniform sampling with hard
inlier removal after each selected instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyPool, TooFewObservations
from .geometry import DegenerateMinimalSet, ModelClassSpec, ModelInstance
from .scoring import ScoringParams, soft_inlier

WEIGHT_FLOOR = 1e-9
DEGENERATE_RETRIES = 4

# spawn-key stream ids, so different consumers of one seed never collide
_POOL_STREAM = 0
_SEQ_STREAM = 1


@dataclass
class SamplerConfig:
    """User-definable sampling parameters.

    ``num_instances`` is the number of model instances per multi-hypothesis,
    ``single_samples`` the hypothesis pool size per instance step and
    ``multi_samples`` the number of independently sampled multi-hypotheses.
    """

    kind: str
    num_instances: int = 6
    single_samples: int = 32
    multi_samples: int = 32
    tau: float = 1e-3
    weight_source: str = "uniform"  # network | uniform | uniform-with-removal
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.num_instances, self.single_samples, self.multi_samples) < 1:
            raise ValueError("M, S and P must all be >= 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


def default_sampler_config(kind: str, seed: int = 0) -> SamplerConfig:
    """Test-time defaults per model kind."""
    if kind == "vp":
        return SamplerConfig(kind, num_instances=6, single_samples=32,
                             multi_samples=32, tau=1e-3, rng_seed=seed)
    if kind == "homography":
        return SamplerConfig(kind, num_instances=6, single_samples=100,
                             multi_samples=100, tau=1e-4, rng_seed=seed)
    if kind == "line":
        return SamplerConfig(kind, num_instances=4, single_samples=32,
                             multi_samples=32, tau=1.5e-2, rng_seed=seed)
    raise KeyError(f"unknown model kind: {kind!r}")


@dataclass
class MultiHypothesis:
    """An ordered list of selected model instances plus sampling bookkeeping.

    ``sampled_indices`` holds, per instance step, the minimal-set indices of
    every surviving pool slot; ``states``/``weights`` hold the conditioning
    state and the sampling distribution used at each step; ``log_prob`` is the
    summed log probability of all recorded draws.
    """

    kind: str
    models: list[ModelInstance]
    sampled_indices: list[np.ndarray]
    log_prob: float
    score: float
    states: np.ndarray
    weights: np.ndarray
    pool_index: int = 0
    selected_slots: list[int] = field(default_factory=list)


def floor_and_normalize(weights: np.ndarray) -> np.ndarray:
    """Clamp weights to at least 1e-9 and normalize to sum one."""
    w = np.maximum(np.asarray(weights, dtype=np.float64), WEIGHT_FLOOR)
    return w / w.sum()


def sample_minimal_set(weights: np.ndarray, c: int, rng: np.random.Generator,
                       ) -> tuple[np.ndarray, float]:
    """Draw c pairwise-distinct indices from a categorical distribution.

    Weights are floored and normalized first; each subsequent draw
    renormalizes over the remaining indices. Returns the indices and the sum
    of the log probabilities of the actual draws.
    """
    n = len(weights)
    if c > n:
        raise TooFewObservations(f"need {c} observations, have {n}")
    p = floor_and_normalize(weights)
    indices = np.empty(c, dtype=np.int64)
    log_prob = 0.0
    remaining = 1.0
    for k in range(c):
        u = rng.random() * remaining
        cum = np.cumsum(p)
        i = int(np.searchsorted(cum, u, side="right"))
        i = min(i, n - 1)
        while p[i] == 0.0:  # guard against landing on an exhausted index
            i -= 1
        indices[k] = i
        log_prob += np.log(p[i] / remaining)
        remaining -= p[i]
        p[i] = 0.0
    return indices, float(log_prob)


@dataclass
class Hypothesis:
    model: ModelInstance
    indices: np.ndarray
    log_prob: float


def generate_hypothesis_pool(observations: np.ndarray, weights: np.ndarray,
                             pool_size: int, spec: ModelClassSpec,
                             rng: np.random.Generator) -> list[Hypothesis]:
    """Fit up to ``pool_size`` hypotheses from sampled minimal sets.

    Degenerate minimal sets are redrawn up to four times, then the slot is
    skipped. Raises EmptyPool when every slot degenerates.
    """
    pool: list[Hypothesis] = []
    c = spec.minimal_set_size
    for _ in range(pool_size):
        for _attempt in range(1 + DEGENERATE_RETRIES):
            indices, logp = sample_minimal_set(weights, c, rng)
            try:
                model = spec.solve(observations[indices])
            except DegenerateMinimalSet:
                continue
            pool.append(Hypothesis(model, indices, logp))
            break
    if not pool:
        raise EmptyPool("all pool slots degenerated")
    return pool


def uniform_weights(observations: np.ndarray, states: np.ndarray) -> np.ndarray:
    """State-blind uniform sampling weights."""
    return np.ones_like(states) / states.shape[-1]


def removal_weights(observations: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Uniform weights over observations not yet covered by a selected model.

    An observation counts as covered once its state (max soft inlier score)
    reaches 0.5, i.e. its residual to some selected model is within tau.
    Covered observations keep the sampling floor only.
    """
    return np.where(states >= 0.5, 0.0, 1.0)


def _pool_rng(seed: int, pool: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(_POOL_STREAM, pool)))


def consensus_search(observations: np.ndarray, spec: ModelClassSpec,
                     config: SamplerConfig,
                     weight_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
                     ) -> MultiHypothesis:
    """Run the full nested sampling search and return the best multi-hypothesis.

    ``weight_fn(observations, states)`` receives the (P, N) state block of all
    pending multi-hypotheses and must return matching nonnegative weights; it
    is invoked once per instance step. Each of the P multi-hypotheses uses its
    own counter-derived RNG, so results do not depend on evaluation order.
    Ties in all argmax selections break towards the lowest index.
    """
    observations = np.asarray(observations, dtype=np.float64)
    n = len(observations)
    if spec.minimal_set_size > n:
        raise TooFewObservations(
            f"need {spec.minimal_set_size} observations, have {n}")
    m_steps = config.num_instances
    p_pools = config.multi_samples
    params = ScoringParams(config.tau)

    rngs = [_pool_rng(config.rng_seed, p) for p in range(p_pools)]
    states = np.zeros((p_pools, n))
    models: list[list[ModelInstance]] = [[] for _ in range(p_pools)]
    indices_log: list[list[np.ndarray]] = [[] for _ in range(p_pools)]
    slot_log: list[list[int]] = [[] for _ in range(p_pools)]
    log_probs = np.zeros(p_pools)
    states_log = np.zeros((p_pools, m_steps, n))
    weights_log = np.zeros((p_pools, m_steps, n))

    for m in range(m_steps):
        weights = np.asarray(weight_fn(observations, states), dtype=np.float64)
        for p in range(p_pools):
            w = floor_and_normalize(weights[p])
            states_log[p, m] = states[p]
            weights_log[p, m] = w
            pool = generate_hypothesis_pool(observations, w,
                                            config.single_samples, spec, rngs[p])
            scores = np.empty(len(pool))
            for s, hyp in enumerate(pool):
                g = soft_inlier(spec.residuals(observations, hyp.model), params)
                scores[s] = np.maximum(states[p], g).sum()
            best = int(np.argmax(scores))
            chosen = pool[best]
            models[p].append(chosen.model)
            slot_log[p].append(best)
            indices_log[p].append(np.stack([h.indices for h in pool]))
            log_probs[p] += sum(h.log_prob for h in pool)
            g = soft_inlier(spec.residuals(observations, chosen.model), params)
            states[p] = np.maximum(states[p], g)

    pool_scores = states.sum(axis=1)
    winner = int(np.argmax(pool_scores))
    return MultiHypothesis(
        kind=spec.kind,
        models=models[winner],
        sampled_indices=indices_log[winner],
        log_prob=float(log_probs[winner]),
        score=float(pool_scores[winner]),
        states=states_log[winner],
        weights=weights_log[winner],
        pool_index=winner,
        selected_slots=slot_log[winner],
    )


def sequential_ransac(observations: np.ndarray, spec: ModelClassSpec,
                      num_instances: int, single_samples: int, tau: float,
                      rng: np.random.Generator) -> MultiHypothesis:
    """Uniform-sampling RANSAC repeated with hard inlier removal.

    Each instance is fitted on the observations not yet claimed (residual
    < tau) by an earlier instance; candidates are ranked by their soft inlier
    score over the remaining observations (the same smooth consensus measure
    the conditional search optimizes, which does not reward scooping up
    borderline points the way a hard count does). Stops early once fewer
    observations than a minimal set remain, returning fewer instances.
    """
    observations = np.asarray(observations, dtype=np.float64)
    n = len(observations)
    c = spec.minimal_set_size
    params = ScoringParams(tau)
    remaining = np.ones(n, dtype=bool)
    models: list[ModelInstance] = []
    indices_log: list[np.ndarray] = []
    slot_log: list[int] = []
    states_log = []
    weights_log = []
    log_prob = 0.0
    state = np.zeros(n)

    for _m in range(num_instances):
        if int(remaining.sum()) < c:
            break
        weights = remaining.astype(np.float64)
        pool: list[Hypothesis] = []
        for _ in range(single_samples):
            for _attempt in range(1 + DEGENERATE_RETRIES):
                rel_idx, logp = sample_minimal_set(
                    np.ones(int(remaining.sum())), c, rng)
                idx = np.flatnonzero(remaining)[rel_idx]
                try:
                    model = spec.solve(observations[idx])
                except DegenerateMinimalSet:
                    continue
                pool.append(Hypothesis(model, idx, logp))
                break
        if not pool:
            break
        scores = np.empty(len(pool))
        for s, hyp in enumerate(pool):
            r = spec.residuals(observations, hyp.model)
            scores[s] = soft_inlier(r[remaining], params).sum()
        best = int(np.argmax(scores))
        chosen = pool[best]
        r = spec.residuals(observations, chosen.model)
        remaining &= ~(r < tau)
        models.append(chosen.model)
        slot_log.append(best)
        indices_log.append(np.stack([h.indices for h in pool]))
        log_prob += sum(h.log_prob for h in pool)
        states_log.append(state.copy())
        weights_log.append(weights / weights.sum())
        state = np.maximum(state, soft_inlier(r, params))

    steps = len(models)
    return MultiHypothesis(
        kind=spec.kind,
        models=models,
        sampled_indices=indices_log,
        log_prob=float(log_prob),
        score=float(state.sum()),
        states=np.array(states_log).reshape(steps, n),
        weights=np.array(weights_log).reshape(steps, n),
        selected_slots=slot_log,
    )


def sequential_ransac_best_of(observations: np.ndarray, spec: ModelClassSpec,
                              num_instances: int, single_samples: int,
                              multi_samples: int, tau: float, seed: int,
                              ) -> MultiHypothesis:
    """Best of P independent sequential-RANSAC runs by joint soft inlier count.

    Gives the sequential baseline the same S x P hypothesis budget as the
    conditional search.
    """
    best: MultiHypothesis | None = None
    for p in range(multi_samples):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(_SEQ_STREAM, p)))
        cand = sequential_ransac(observations, spec, num_instances,
                                 single_samples, tau, rng)
        cand.pool_index = p
        if best is None or cand.score > best.score:
            best = cand
    assert best is not None
    return best
