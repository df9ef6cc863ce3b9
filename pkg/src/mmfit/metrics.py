"""Evaluation metrics: optimal assignment, angular errors, AUC recall,
misclassification error and instance-level F1."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EmptyMatrix, SingularIntrinsics
from .geometry import ModelInstance, get_model_class

DEFAULT_F1_THRESHOLDS = {"line": 1e-2, "vp": 1.0}


def hungarian_assign(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Minimum-cost assignment of min(rows, cols) pairs.

    Returns (row_indices, col_indices, total_cost).
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        raise EmptyMatrix("empty cost matrix")
    rows, cols = linear_sum_assignment(cost)
    return rows, cols, float(cost[rows, cols].sum())


def vp_angle_error(v, v_hat, intrinsics=None) -> float:
    """Angle in degrees between the 3D directions of two vanishing points.

    Directions are obtained by applying the inverse intrinsics; the result
    uses the absolute cosine, so it is symmetric, sign invariant and lies in
    [0, 90] degrees.
    """
    k = np.eye(3) if intrinsics is None else np.asarray(intrinsics, dtype=np.float64)
    if abs(np.linalg.det(k)) < 1e-12:
        raise SingularIntrinsics("intrinsics matrix is not invertible")
    v = np.asarray(v, dtype=np.float64).reshape(3)
    v_hat = np.asarray(v_hat, dtype=np.float64).reshape(3)
    if np.linalg.norm(v) < 1e-15 or np.linalg.norm(v_hat) < 1e-15:
        raise ValueError("vanishing points must be nonzero")
    d1 = np.linalg.solve(k, v)
    d2 = np.linalg.solve(k, v_hat)
    c = abs(d1 @ d2) / (np.linalg.norm(d1) * np.linalg.norm(d2))
    return float(np.degrees(np.arccos(np.clip(c, 0.0, 1.0))))


def line_pair_distance(a, b, points: np.ndarray) -> float:
    """Max distance between two normalized lines over the points' bounding box.

    Both lines' signed-distance fields are compared on the four bounding-box
    corners (the maximum over the box is attained there); the sign ambiguity
    of the line parameters is resolved by taking the better of the two
    alignments.
    """
    pa = a.params if isinstance(a, ModelInstance) else np.asarray(a, dtype=np.float64)
    pb = b.params if isinstance(b, ModelInstance) else np.asarray(b, dtype=np.float64)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    corners = np.array([[x0, y0, 1.0], [x0, y1, 1.0], [x1, y0, 1.0], [x1, y1, 1.0]])
    da = corners @ pa
    db = corners @ pb
    return float(min(np.max(np.abs(da - db)), np.max(np.abs(da + db))))


def line_support_distance(estimate, gt, observations: np.ndarray,
                          support_tau: float = 2e-2) -> float:
    """Max difference of two lines' distance fields over the reference line's
    own support points.

    The support of ``gt`` is the set of observations within ``support_tau``
    of it. Evaluating there instead of on the whole bounding box makes the
    error reflect whether the estimate explains the same observations,
    without punishing extrapolation beyond a short segment's data. Falls back
    to the bounding-box corners when the support is empty.
    """
    pe = estimate.params if isinstance(estimate, ModelInstance) \
        else np.asarray(estimate, dtype=np.float64)
    pg = gt.params if isinstance(gt, ModelInstance) else np.asarray(gt, dtype=np.float64)
    pts = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    support = pts[np.abs(pts @ pg[:2] + pg[2]) < support_tau]
    if len(support) == 0:
        return line_pair_distance(pe, pg, pts)
    hom = np.concatenate([support, np.ones((len(support), 1))], axis=1)
    de = hom @ pe
    dg = hom @ pg
    return float(min(np.max(np.abs(de - dg)), np.max(np.abs(de + dg))))


def auc_recall(matched_errors: Sequence[float], num_gt: int,
               cutoff: float = 10.0) -> float:
    """Normalized area under the recall-vs-error step curve on [0, cutoff].

    ``matched_errors`` are the errors of matched ground-truth instances;
    unmatched ground truth simply never enters the recall numerator. The step
    curve is integrated exactly (trapezoids over the sorted error
    breakpoints) and divided by the cutoff.
    """
    if num_gt <= 0:
        raise ValueError("num_gt must be positive")
    errors = np.sort(np.asarray(list(matched_errors), dtype=np.float64))
    if np.any(errors < 0):
        raise ValueError("errors must be nonnegative")
    breaks = np.unique(errors[(errors > 0) & (errors < cutoff)])
    xs = np.concatenate([[0.0], breaks, [cutoff]])
    area = 0.0
    for lo, hi in zip(xs[:-1], xs[1:]):
        recall = np.sum(errors <= lo) / num_gt
        area += recall * (hi - lo)
    return float(area / cutoff)


def assign_observations(models: Sequence[ModelInstance], observations: np.ndarray,
                        theta: float) -> np.ndarray:
    """Label each observation with its minimum-residual model, or -1 (outlier)
    when no residual is below theta."""
    observations = np.asarray(observations, dtype=np.float64)
    n = len(observations)
    if not models:
        return np.full(n, -1, dtype=np.int64)
    spec = get_model_class(models[0].kind)
    residuals = np.stack([spec.residuals(observations, m) for m in models])
    best = np.argmin(residuals, axis=0)
    labels = np.where(residuals[best, np.arange(n)] < theta, best, -1)
    return labels.astype(np.int64)


def misclassification_from_labels(pred_labels: np.ndarray,
                                  gt_labels: np.ndarray) -> float:
    """Percentage of observations in the wrong cluster after optimal matching.

    Predicted clusters are matched to ground-truth clusters by a
    maximum-overlap assignment; the outlier label (-1) is fixed to itself.
    """
    gt = np.asarray(gt_labels, dtype=np.int64)
    pred = np.asarray(pred_labels, dtype=np.int64)
    n = len(gt)
    pred_ids = np.unique(pred[pred >= 0])
    gt_ids = np.unique(gt[gt >= 0])
    correct = int(np.sum((pred == -1) & (gt == -1)))
    if len(pred_ids) and len(gt_ids):
        overlap = np.zeros((len(pred_ids), len(gt_ids)))
        for i, pi in enumerate(pred_ids):
            for j, gj in enumerate(gt_ids):
                overlap[i, j] = np.sum((pred == pi) & (gt == gj))
        rows, cols, _ = hungarian_assign(-overlap)
        correct += int(overlap[rows, cols].sum())
    return float(100.0 * (1.0 - correct / n))


def misclassification_error(models: Sequence[ModelInstance], observations: np.ndarray,
                            gt_labels: np.ndarray, theta: float) -> float:
    """Misclassification after assigning each observation to its nearest model
    under theta (outlier otherwise)."""
    pred = assign_observations(models, observations, theta)
    return misclassification_from_labels(pred, gt_labels)


def instance_error_matrix(estimates: Sequence[ModelInstance],
                          gt: Sequence[ModelInstance],
                          observations: np.ndarray,
                          intrinsics=None) -> np.ndarray:
    """Pairwise estimate-vs-ground-truth errors (lines: box distance, vps: degrees)."""
    kind = (estimates[0] if estimates else gt[0]).kind
    cost = np.zeros((len(estimates), len(gt)))
    for i, e in enumerate(estimates):
        for j, g in enumerate(gt):
            if kind == "line":
                cost[i, j] = line_support_distance(e, g, observations)
            elif kind == "vp":
                cost[i, j] = vp_angle_error(g.params, e.params, intrinsics)
            else:
                raise ValueError(f"no instance error defined for kind {kind!r}")
    return cost


def f1_instances(estimates: Sequence[ModelInstance], gt: Sequence[ModelInstance],
                 observations: np.ndarray, match_threshold: float | None = None,
                 intrinsics=None) -> float:
    """Instance-level F1: Hungarian-match estimates to ground truth, count a
    pair as matched when its error is below the threshold."""
    if not gt:
        raise ValueError("ground truth must be nonempty")
    if not estimates:
        return 0.0
    kind = estimates[0].kind
    if match_threshold is None:
        match_threshold = DEFAULT_F1_THRESHOLDS[kind]
    cost = instance_error_matrix(estimates, gt, observations, intrinsics)
    rows, cols, _ = hungarian_assign(cost)
    matched = int(np.sum(cost[rows, cols] < match_threshold))
    precision = matched / len(estimates)
    recall = matched / len(gt)
    if precision + recall == 0:
        return 0.0
    return float(2.0 * precision * recall / (precision + recall))


def matched_vp_errors(estimates: Sequence[ModelInstance],
                      gt: Sequence[ModelInstance],
                      intrinsics=None) -> list[float]:
    """Angular errors of matched vanishing-point pairs for one scene.

    At most the |gt| first (most significant) estimates take part in the
    matching; the caller passes estimates already in ranking order.
    """
    kept = list(estimates)[:len(gt)]
    if not kept:
        return []
    cost = np.zeros((len(kept), len(gt)))
    for i, e in enumerate(kept):
        for j, g in enumerate(gt):
            cost[i, j] = vp_angle_error(g.params, e.params, intrinsics)
    rows, cols, _ = hungarian_assign(cost)
    return [float(cost[i, j]) for i, j in zip(rows, cols)]


@dataclass
class EvalReport:
    """Per-scene matched errors plus a scalar summary over runs."""

    metric: str
    per_scene: list[dict] = field(default_factory=list)
    per_run: dict[int, float] = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.per_run.values())))

    @property
    def std(self) -> float:
        return float(np.std(list(self.per_run.values())))
