"""Test-time post-processing: EM refinement, instance ranking and selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .geometry import ModelInstance, get_model_class, weighted_refit
from .scoring import ScoringParams, model_soft_scores, soft_inlier


@dataclass
class RefineConfig:
    """EM and selection parameters.

    ``sigma`` is the residual standard deviation of the Gaussian likelihood,
    ``theta`` the hard inlier threshold used for selection and
    ``min_increment`` the minimum joint-inlier-count gain a ranked instance
    must contribute to stay selected.
    """

    sigma: float = 1e-8
    em_iterations: int = 10
    theta: float = 3e-3
    min_increment: int = 6

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


def default_refine_config(kind: str) -> RefineConfig:
    if kind == "vp":
        return RefineConfig(sigma=1e-8, em_iterations=10, theta=1e-3, min_increment=0)
    if kind == "homography":
        return RefineConfig(sigma=1e-9, em_iterations=10, theta=3e-3, min_increment=6)
    if kind == "line":
        return RefineConfig(sigma=1e-2, em_iterations=10, theta=1.5e-2, min_increment=6)
    raise KeyError(f"unknown model kind: {kind!r}")


def _log_likelihoods(models: Sequence[ModelInstance], observations: np.ndarray,
                     sigma: float) -> np.ndarray:
    """log p(y | h) for a Gaussian residual model, (N, M)."""
    spec = get_model_class(models[0].kind)
    r = np.stack([spec.residuals(observations, m) for m in models], axis=1)
    return -np.log(sigma) - 0.5 * np.log(2.0 * np.pi) - 0.5 * (r / sigma) ** 2


def em_refine(models: Sequence[ModelInstance], observations: np.ndarray,
              config: RefineConfig) -> tuple[list[ModelInstance], list[float]]:
    """Refine models by expectation maximization with a fixed residual sigma.

    E-step: responsibilities from the Gaussian likelihood with uniform model
    priors (computed in log space). M-step: weighted refit per model, guarded
    so the weighted squared-residual sum never increases; models whose total
    responsibility falls below the minimal set size are left untouched.

    Returns the refined models and the data log-likelihood trace (initial
    value plus one entry per iteration).
    """
    if not models:
        raise ValueError("need at least one model")
    observations = np.asarray(observations, dtype=np.float64)
    spec = get_model_class(models[0].kind)
    current = list(models)
    logp = _log_likelihoods(current, observations, config.sigma)
    trace = [float(logsumexp(logp, axis=1).sum())]
    for _ in range(config.em_iterations):
        log_total = logsumexp(logp, axis=1, keepdims=True)
        resp = np.exp(logp - log_total)
        refined = []
        for m, model in enumerate(current):
            w = resp[:, m]
            if w.sum() < spec.minimal_set_size:
                refined.append(model)
                continue
            refined.append(weighted_refit(model.kind, observations, w, current=model))
        current = refined
        logp = _log_likelihoods(current, observations, config.sigma)
        trace.append(float(logsumexp(logp, axis=1).sum()))
    return current, trace


def consensus_refit(models: Sequence[ModelInstance], observations: np.ndarray,
                    params: ScoringParams, iterations: int = 5,
                    ) -> list[ModelInstance]:
    """Refit each model with its soft inlier scores, gated by ownership.

    Each observation contributes only to the model it is currently closest
    to, weighted by that model's soft inlier score. The ownership gate keeps
    observations near another instance (pseudo-outliers at crossings) from
    biasing the refit, and the soft gate keeps gross outliers out entirely,
    unlike an EM step which distributes every observation's full weight among
    the models. Guarded the same way as the EM M-step.
    """
    observations = np.asarray(observations, dtype=np.float64)
    if not models:
        return []
    spec = get_model_class(models[0].kind)
    current = list(models)
    for _ in range(iterations):
        residuals = np.stack([spec.residuals(observations, m) for m in current])
        owner = np.argmin(residuals, axis=0)
        refined = []
        for m, model in enumerate(current):
            w = soft_inlier(residuals[m], params) * (owner == m)
            if np.sum(w > 0.5) < spec.minimal_set_size:
                refined.append(model)
                continue
            refined.append(weighted_refit(model.kind, observations, w, current=model))
        current = refined
    return current


def rank_instances(models: Sequence[ModelInstance], observations: np.ndarray,
                   params: ScoringParams) -> np.ndarray:
    """Permutation greedily sorting models by marginal joint soft inlier count.

    Ties break towards the lower original index.
    """
    if not models:
        raise ValueError("need at least one model")
    scores = model_soft_scores(models, observations, params)
    order = []
    covered = np.zeros(scores.shape[1])
    remaining = list(range(len(models)))
    while remaining:
        gains = [np.maximum(covered, scores[q]).sum() for q in remaining]
        best = int(np.argmax(gains))
        q = remaining.pop(best)
        order.append(q)
        covered = np.maximum(covered, scores[q])
    return np.array(order, dtype=np.int64)


def select_instances(ranked_models: Sequence[ModelInstance], observations: np.ndarray,
                     config: RefineConfig) -> list[ModelInstance]:
    """Longest ranked prefix whose members each add >= min_increment hard inliers.

    Hard counting uses the selection threshold theta. The first instance is
    always kept.
    """
    if not ranked_models:
        return []
    observations = np.asarray(observations, dtype=np.float64)
    spec = get_model_class(ranked_models[0].kind)
    covered = np.zeros(len(np.atleast_2d(observations)), dtype=bool)
    kept: list[ModelInstance] = []
    for model in ranked_models:
        inliers = spec.residuals(observations, model) < config.theta
        increment = int(np.sum(inliers & ~covered))
        if kept and increment < config.min_increment:
            break
        kept.append(model)
        covered |= inliers
    return kept
