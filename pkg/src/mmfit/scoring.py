"""Soft inlier scoring, joint-instance scores and the conditioning state.

The soft inlier score of a residual r is ``1 - sigmoid(beta * (r - tau))``
with softness ``beta = 5 / tau``. All multi-instance scores take elementwise
maxima of per-model soft scores, so adding a model never lowers a score; the
empty-set maximum is 0 everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import EmptyPrefix
from .geometry import ModelInstance, get_model_class


@dataclass(frozen=True)
class ScoringParams:
    """Inlier threshold plus the derived sigmoid softness (beta = 5 / tau)."""

    tau: float

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    @property
    def beta(self) -> float:
        return 5.0 / self.tau


def soft_inlier(r, params: ScoringParams):
    """Sigmoid-smoothed inlier indicator; exactly 0.5 at r = tau."""
    r = np.asarray(r, dtype=np.float64)
    return expit(params.beta * (params.tau - r))


def model_soft_scores(models: Sequence[ModelInstance], observations: np.ndarray,
                      params: ScoringParams) -> np.ndarray:
    """Per-model soft inlier scores; (len(models), N)."""
    n = len(np.atleast_2d(observations))
    if not models:
        return np.zeros((0, n))
    spec = get_model_class(models[0].kind)
    return np.stack([soft_inlier(spec.residuals(observations, m), params)
                     for m in models])


def compute_state(selected: Sequence[ModelInstance], observations: np.ndarray,
                  params: ScoringParams) -> np.ndarray:
    """Per-observation max soft inlier score over the selected models.

    All zeros when nothing has been selected yet; entries never decrease as
    models are appended.
    """
    n = len(np.atleast_2d(observations))
    if not selected:
        return np.zeros(n)
    return model_soft_scores(selected, observations, params).max(axis=0)


def multi_instance_score(models: Sequence[ModelInstance], observations: np.ndarray,
                         params: ScoringParams) -> float:
    """Joint soft inlier count of a model set: sum_y max_h g(y, h)."""
    return float(compute_state(models, observations, params).sum())


def single_instance_score(h: ModelInstance, observations: np.ndarray,
                          selected: Sequence[ModelInstance],
                          params: ScoringParams) -> float:
    """Joint score of the selected set extended by one candidate."""
    return multi_instance_score(list(selected) + [h], observations, params)


def cumulative_inlier_ratio(selected_prefix: Sequence[ModelInstance],
                            observations: np.ndarray,
                            params: ScoringParams) -> float:
    """Average joint soft inlier score of a nonempty model prefix, in [0, 1]."""
    if not selected_prefix:
        raise EmptyPrefix("cumulative inlier ratio of an empty prefix")
    state = compute_state(selected_prefix, observations, params)
    return float(state.mean())
