"""Geometric model classes: minimal solvers, residuals and weighted refits.

Three model kinds are supported:

* ``line``       -- observations are 2D points (x, y); models are homogeneous
                    lines (n1, n2, d) with unit normal part.
* ``vp``         -- observations are line segments (x1, y1, x2, y2); models are
                    vanishing points as homogeneous 3-vectors.
* ``homography`` -- observations are point correspondences (x1, y1, x2, y2);
                    models are 3x3 plane homographies.

All coordinates are normalized image coordinates (dimensionless). Functions
are pure and vectorized over observations where it matters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DegenerateMinimalSet, InsufficientSupport, SingularModel

COINCIDENCE_TOL = 1e-12
COLLINEARITY_SV_RATIO = 1e-10


@dataclass(frozen=True)
class ModelInstance:
    """One fitted model: a kind tag plus its homogeneous parameters.

    ``params`` is a (3,) vector for lines and vanishing points and a (3, 3)
    matrix for homographies.
    """

    kind: str
    params: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "params", np.asarray(self.params, dtype=np.float64))


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    """Flip sign so the first significant entry is positive (determinism).

    Keyed to the first entry above a relative threshold rather than the
    largest one, which is stable when two entries tie in magnitude to the
    last ulp.
    """
    a = np.abs(v)
    significant = np.flatnonzero(a > 1e-9 * a.max())
    i = significant[0] if len(significant) else 0
    return -v if v.flat[i] < 0 else v


# ---------------------------------------------------------------------------
# Lines
# ---------------------------------------------------------------------------

def fit_line_minimal(p1, p2) -> ModelInstance:
    """Fit a homogeneous line through two 2D points.

    Returns (n1, n2, d) with unit normal part. Raises DegenerateMinimalSet if
    the points coincide within 1e-12.
    """
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    d = p2 - p1
    if np.hypot(d[0], d[1]) < COINCIDENCE_TOL:
        raise DegenerateMinimalSet("coincident points")
    n = np.array([d[1], -d[0]])
    n /= np.hypot(n[0], n[1])
    params = np.array([n[0], n[1], -(n[0] * p1[0] + n[1] * p1[1])])
    return ModelInstance("line", _canonical_sign(params))


def line_residual(y, h: ModelInstance | np.ndarray):
    """Absolute point-to-line distance for a normalized line.

    ``y`` may be a single point (2,) or a stack (N, 2); returns a scalar or
    an (N,) array accordingly.
    """
    params = h.params if isinstance(h, ModelInstance) else np.asarray(h, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return np.abs(y[..., 0] * params[0] + y[..., 1] * params[1] + params[2])


def refit_line(observations: np.ndarray, weights: np.ndarray) -> ModelInstance:
    """Weighted total-least-squares line: exact minimizer of sum(w * r^2)."""
    w = weights / weights.sum()
    c = w @ observations
    diff = observations - c
    scatter = (diff * w[:, None]).T @ diff
    eigvals, eigvecs = np.linalg.eigh(scatter)
    n = eigvecs[:, 0]  # smallest eigenvalue -> line normal
    params = np.array([n[0], n[1], -(n[0] * c[0] + n[1] * c[1])])
    norm = np.hypot(params[0], params[1])
    return ModelInstance("line", _canonical_sign(params / norm))


# ---------------------------------------------------------------------------
# Vanishing points
# ---------------------------------------------------------------------------

def segment_lines(y: np.ndarray) -> np.ndarray:
    """Homogeneous lines through segment endpoints; (N, 4) -> (N, 3)."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    p1 = np.concatenate([y[:, 0:2], np.ones((len(y), 1))], axis=1)
    p2 = np.concatenate([y[:, 2:4], np.ones((len(y), 1))], axis=1)
    return np.cross(p1, p2)


def fit_vp_minimal(s1, s2) -> ModelInstance:
    """Vanishing point as the intersection of two segments' lines.

    The cross product of the two (normalized) homogeneous lines. Parallel but
    distinct lines yield a valid point at infinity; identical lines raise
    DegenerateMinimalSet.
    """
    lines = segment_lines(np.stack([np.asarray(s1, dtype=np.float64),
                                    np.asarray(s2, dtype=np.float64)]))
    norms = np.linalg.norm(lines, axis=1)
    if np.any(norms < COINCIDENCE_TOL):
        raise DegenerateMinimalSet("segment endpoints coincide")
    l1, l2 = lines / norms[:, None]
    v = np.cross(l1, l2)
    nv = np.linalg.norm(v)
    if nv < COINCIDENCE_TOL:
        raise DegenerateMinimalSet("identical segment lines")
    return ModelInstance("vp", _canonical_sign(v / nv))


def vp_residual(y, h: ModelInstance | np.ndarray):
    """Consistency of segment(s) with a vanishing point, in [0, 2].

    One minus the absolute cosine of the angle between the segment's line and
    the line joining the vanishing point with the segment midpoint, using the
    first two (direction) coordinates only. If that joining line has no
    direction part (the point coincides with the midpoint) the residual is the
    worst-case value 1.
    """
    v = h.params if isinstance(h, ModelInstance) else np.asarray(h, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    y2 = np.atleast_2d(y)
    ly = segment_lines(y2)
    mid = 0.5 * (y2[:, 0:2] + y2[:, 2:4])
    pc = np.concatenate([mid, np.ones((len(y2), 1))], axis=1)
    lc = np.cross(np.broadcast_to(v, pc.shape), pc)
    num = np.abs(ly[:, 0] * lc[:, 0] + ly[:, 1] * lc[:, 1])
    ny = np.hypot(ly[:, 0], ly[:, 1])
    nc = np.hypot(lc[:, 0], lc[:, 1])
    r = np.ones(len(y2))
    ok = (ny > 0) & (nc > COINCIDENCE_TOL)
    r[ok] = 1.0 - np.clip(num[ok] / (ny[ok] * nc[ok]), 0.0, 1.0)
    return r[0] if single else r


def refit_vp(observations: np.ndarray, weights: np.ndarray) -> ModelInstance:
    """Weighted least squares on line-incidence constraints.

    Minimizes sum(w * (l . v)^2) over unit v, with each segment line scaled to
    unit norm; this is a linear-algebraic surrogate for the cosine residual.
    """
    lines = segment_lines(observations)
    norms = np.linalg.norm(lines, axis=1)
    norms[norms < COINCIDENCE_TOL] = 1.0
    lines = lines / norms[:, None]
    scatter = (lines * weights[:, None]).T @ lines
    eigvals, eigvecs = np.linalg.eigh(scatter)
    v = eigvecs[:, 0]
    return ModelInstance("vp", _canonical_sign(v / np.linalg.norm(v)))


# ---------------------------------------------------------------------------
# Homographies
# ---------------------------------------------------------------------------

def _normalizing_transform(pts: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Similarity moving the (weighted) centroid to the origin, mean distance sqrt(2)."""
    if weights is None:
        w = np.full(len(pts), 1.0 / len(pts))
    else:
        w = weights / weights.sum()
    c = w @ pts
    mean_dist = w @ np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1])
    s = np.sqrt(2.0) / mean_dist if mean_dist > COINCIDENCE_TOL else 1.0
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _dlt(correspondences: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """(Weighted) normalized direct linear transform; returns a 3x3 H.

    Raises DegenerateMinimalSet when the design matrix is rank deficient
    (smallest-to-largest singular value ratio below 1e-10).
    """
    y = np.asarray(correspondences, dtype=np.float64)
    t1 = _normalizing_transform(y[:, 0:2], weights)
    t2 = _normalizing_transform(y[:, 2:4], weights)
    p = y[:, 0:2] * t1[0, 0] + t1[0:2, 2]
    q = y[:, 2:4] * t2[0, 0] + t2[0:2, 2]
    n = len(y)
    a = np.zeros((2 * n, 9))
    a[0::2, 3:5] = -p
    a[0::2, 5] = -1.0
    a[0::2, 6:8] = q[:, 1:2] * p
    a[0::2, 8] = q[:, 1]
    a[1::2, 0:2] = p
    a[1::2, 2] = 1.0
    a[1::2, 6:8] = -q[:, 0:1] * p
    a[1::2, 8] = -q[:, 0]
    if weights is not None:
        sw = np.sqrt(weights / weights.sum())
        a *= np.repeat(sw, 2)[:, None]
    _, sv, vt = np.linalg.svd(a)
    # A unique solution (up to scale) needs rank 8, i.e. the 8th singular
    # value must be well separated from zero; for n > 4 the 9th one only
    # measures fit quality.
    if sv[0] < COINCIDENCE_TOL or sv[7] / sv[0] < COLLINEARITY_SV_RATIO:
        raise DegenerateMinimalSet("rank-deficient design matrix (collinear points)")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t2) @ hn @ t1
    h /= np.linalg.norm(h)
    return _canonical_sign(h)


def fit_homography_minimal(c1, c2, c3, c4) -> ModelInstance:
    """Homography from four correspondences via the normalized 4-point DLT."""
    y = np.stack([np.asarray(c, dtype=np.float64) for c in (c1, c2, c3, c4)])
    return ModelInstance("homography", _dlt(y))


def homography_residual(y, h: ModelInstance | np.ndarray):
    """Symmetric squared transfer error of correspondence(s) under H."""
    hm = h.params if isinstance(h, ModelInstance) else np.asarray(h, dtype=np.float64)
    if np.abs(np.linalg.det(hm)) < 1e-12:
        raise SingularModel("non-invertible homography")
    hinv = np.linalg.inv(hm)
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    y2 = np.atleast_2d(y)
    p1 = np.concatenate([y2[:, 0:2], np.ones((len(y2), 1))], axis=1)
    p2 = np.concatenate([y2[:, 2:4], np.ones((len(y2), 1))], axis=1)
    fwd = p1 @ hm.T
    bwd = p2 @ hinv.T
    with np.errstate(divide="ignore", invalid="ignore"):
        fwd = fwd[:, 0:2] / fwd[:, 2:3]
        bwd = bwd[:, 0:2] / bwd[:, 2:3]
    r = np.sum((y2[:, 2:4] - fwd) ** 2, axis=1) + np.sum((y2[:, 0:2] - bwd) ** 2, axis=1)
    r = np.where(np.isfinite(r), r, np.inf)
    return r[0] if single else r


def refit_homography(observations: np.ndarray, weights: np.ndarray) -> ModelInstance:
    """Weighted DLT over all observations."""
    return ModelInstance("homography", _dlt(observations, weights))


# ---------------------------------------------------------------------------
# Model class registry and generic weighted refit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelClassSpec:
    """Bundle of the per-kind handles used by samplers, EM and metrics."""

    kind: str
    minimal_set_size: int
    observation_dim: int
    solve: Callable[[np.ndarray], ModelInstance]
    residuals: Callable[[np.ndarray, ModelInstance], np.ndarray]
    refit: Callable[[np.ndarray, np.ndarray], ModelInstance]


MODEL_CLASSES = {
    "line": ModelClassSpec(
        kind="line", minimal_set_size=2, observation_dim=2,
        solve=lambda pts: fit_line_minimal(pts[0], pts[1]),
        residuals=line_residual, refit=refit_line),
    "vp": ModelClassSpec(
        kind="vp", minimal_set_size=2, observation_dim=4,
        solve=lambda segs: fit_vp_minimal(segs[0], segs[1]),
        residuals=vp_residual, refit=refit_vp),
    "homography": ModelClassSpec(
        kind="homography", minimal_set_size=4, observation_dim=4,
        solve=lambda cs: fit_homography_minimal(cs[0], cs[1], cs[2], cs[3]),
        residuals=homography_residual, refit=refit_homography),
}


def get_model_class(kind: str) -> ModelClassSpec:
    if kind not in MODEL_CLASSES:
        raise KeyError(f"unknown model kind: {kind!r}")
    return MODEL_CLASSES[kind]


def weighted_refit(kind: str, observations: np.ndarray, weights: np.ndarray,
                   current: ModelInstance | None = None) -> ModelInstance:
    """Refit a model to all observations under nonnegative weights.

    For lines this is the exact weighted total-least-squares minimizer; for
    vanishing points and homographies it is a linear-algebraic surrogate. When
    ``current`` is given, the refit is only accepted if it does not increase
    the weighted squared-residual sum by more than 1e-9 (monotonicity guard),
    otherwise ``current`` is returned unchanged.

    Raises InsufficientSupport if fewer than the minimal set size of weights
    are strictly positive.
    """
    spec = get_model_class(kind)
    observations = np.asarray(observations, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if int(np.sum(weights > 0)) < spec.minimal_set_size:
        raise InsufficientSupport(
            f"need at least {spec.minimal_set_size} positive weights")
    try:
        refit = spec.refit(observations, weights)
    except DegenerateMinimalSet:
        if current is not None:
            return current
        raise
    if current is not None:
        old = float(weights @ spec.residuals(observations, current) ** 2)
        new = float(weights @ spec.residuals(observations, refit) ** 2)
        if new > old + 1e-9:
            return current
    return refit
